use crate::anno::{AnnoError, BinaryMask, RleMask};

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, AnnoError> {
    let inter = a.intersection_area(b)?;
    let union = a.union_area(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// For each pixel, whether the `(2d+1)`-wide window along one axis is entirely
/// inside the extent and foreground.
fn erode_1d(
    src: &[bool],
    len: usize,
    stride: usize,
    lines: usize,
    line_stride: usize,
    d: usize,
    out: &mut [bool],
) {
    let win = 2 * d + 1;
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..len {
            prefix[i + 1] = prefix[i] + usize::from(src[base + i * stride]);
        }
        for i in 0..len {
            out[base + i * stride] =
                i >= d && i + d < len && prefix[i + d + 1] - prefix[i - d] == win;
        }
    }
}

/// Foreground pixels within Chebyshev distance `d` of the background, where
/// everything outside the extent counts as background.
pub fn mask_boundary(m: &BinaryMask, d: usize) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    if d == 0 {
        return BinaryMask::new(h, w);
    }
    let mut horiz = vec![false; h * w];
    erode_1d(m.bits(), w, 1, h, w, d, &mut horiz);
    let mut eroded = vec![false; h * w];
    erode_1d(&horiz, h, w, w, 1, d, &mut eroded);
    let bits = m
        .bits()
        .iter()
        .zip(&eroded)
        .map(|(&fg, &inner)| fg && !inner)
        .collect();
    BinaryMask::from_bits(h, w, bits).expect("same extent")
}

/// Band width `d = max(1, ceil(frac * diagonal))` for an image extent.
pub fn boundary_width(height: usize, width: usize, dilation_frac: f64) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((dilation_frac * diag).ceil() as usize).max(1)
}

/// Boundary band of a run-length mask, as a run-length mask.
pub fn boundary_band(m: &RleMask, dilation_frac: f64) -> RleMask {
    let d = boundary_width(m.height(), m.width(), dilation_frac);
    RleMask::encode(&mask_boundary(&m.decode(), d))
}

/// IoU of the two masks' boundary bands at `d = ceil(frac * diagonal)`.
pub fn boundary_iou(a: &BinaryMask, b: &BinaryMask, dilation_frac: f64) -> Result<f64, AnnoError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(AnnoError::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let d = boundary_width(a.height(), a.width(), dilation_frac);
    mask_iou(&mask_boundary(a, d), &mask_boundary(b, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        let a = BinaryMask::from_fn(6, 6, |y, x| y < 3 && x < 4);
        let b = BinaryMask::from_fn(6, 6, |y, _| y >= 4);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(
            mask_iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 3)).unwrap(),
            0.0
        );
        assert!(mask_iou(&a, &BinaryMask::new(6, 5)).is_err());
    }

    #[test]
    fn solid_square_band_is_perimeter() {
        let m = BinaryMask::from_fn(20, 20, |y, x| (5..15).contains(&y) && (5..15).contains(&x));
        assert_eq!(mask_boundary(&m, 1).area(), 36);
        // touching the frame: the frame counts as background
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(mask_boundary(&m, 1).area(), 36);
    }

    #[test]
    fn full_frame_wide_band_is_whole_mask() {
        let m = BinaryMask::from_fn(7, 10, |_, _| true);
        assert_eq!(mask_boundary(&m, 4), m);
        let empty = BinaryMask::new(5, 5);
        assert!(mask_boundary(&empty, 2).is_empty());
    }

    #[test]
    fn thin_strips_reduce_to_mask_iou() {
        let a = BinaryMask::from_fn(20, 20, |y, x| y == 3 && x < 15);
        let b = BinaryMask::from_fn(20, 20, |y, x| y == 3 && (4..18).contains(&x));
        for frac in [0.01, 0.05, 0.3] {
            assert_eq!(
                boundary_iou(&a, &b, frac).unwrap(),
                mask_iou(&a, &b).unwrap()
            );
        }
        assert_eq!(boundary_iou(&a, &a, 0.02).unwrap(), 1.0);
    }

    #[test]
    fn band_width() {
        // 30x40 image: diagonal 50, 2% -> 1
        assert_eq!(boundary_width(30, 40, 0.02), 1);
        assert_eq!(boundary_width(300, 400, 0.02), 10);
        assert_eq!(boundary_width(300, 400, 0.0201), 11);
    }
}

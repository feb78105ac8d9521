use super::AnnoError;

/// Source index sampled by destination index `dst` when resampling a length
/// `src_len` axis to `dst_len` nearest-neighbor: `floor((dst + 0.5) * src_len / dst_len)`.
#[inline]
pub fn nearest_source_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}

/// Dense binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask of the given extent.
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, AnnoError> {
        if bits.len() != height * width {
            return Err(AnnoError::Shape(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Builds a mask by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight pixel bounding box `(x, y, w, h)`, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0usize, 0usize);
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap_or(first);
            x0 = x0.min(first);
            x1 = x1.max(last);
            y0 = y0.min(y);
            y1 = y;
        }
        if x0 == usize::MAX {
            return None;
        }
        Some([
            x0 as f64,
            y0 as f64,
            (x1 - x0 + 1) as f64,
            (y1 - y0 + 1) as f64,
        ])
    }

    /// Nearest-neighbor resample to a new extent.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let cols: Vec<usize> = (0..width)
            .map(|x| nearest_source_index(x, width, self.width))
            .collect();
        Self::from_fn(height, width, |y, x| {
            self.get(nearest_source_index(y, height, self.height), cols[x])
        })
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = Self::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.bits[y * self.width + (self.width - 1 - x)] = self.bits[y * self.width + x];
            }
        }
        out
    }

    fn check_extent(&self, other: &Self) -> Result<(), AnnoError> {
        if self.height != other.height || self.width != other.width {
            return Err(AnnoError::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Self) -> Result<u64, AnnoError> {
        self.check_extent(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count() as u64)
    }

    pub fn union_area(&self, other: &Self) -> Result<u64, AnnoError> {
        self.check_extent(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a || b)
            .count() as u64)
    }

    /// Clears every pixel that is set in `other`.
    pub fn subtract(&mut self, other: &Self) -> Result<(), AnnoError> {
        self.check_extent(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a = *a && !b;
        }
        Ok(())
    }

    /// Sets every pixel that is set in `other`.
    pub fn union_with(&mut self, other: &Self) -> Result<(), AnnoError> {
        self.check_extent(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a = *a || b;
        }
        Ok(())
    }

    /// True when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool, AnnoError> {
        self.check_extent(other)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }
}

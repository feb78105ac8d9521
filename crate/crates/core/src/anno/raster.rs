//! Polygon rasterization by pixel-center sampling.
//!
//! Pixel `(x, y)` is foreground iff its center `(x + 0.5, y + 0.5)` lies inside
//! the polygon under the even-odd rule. For a scanline at height `py` an edge
//! `a -> b` crosses when `min(a.y, b.y) <= py < max(a.y, b.y)`, at
//! `(b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x`. Multiple polygons of one
//! annotation are unioned. Pixels outside the extent are discarded.

use super::{AnnoError, BinaryMask};

pub type Point = [f64; 2];

/// Foreground spans of one row: half-open column ranges, sorted and disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSpans {
    pub row: usize,
    pub spans: Vec<(usize, usize)>,
}

/// Splits a COCO flat coordinate list `[x0, y0, x1, y1, ...]` into points.
pub fn points_from_flat(flat: &[f64]) -> Result<Vec<Point>, AnnoError> {
    if !flat.len().is_multiple_of(2) {
        return Err(AnnoError::Validation(format!(
            "polygon has an odd number of coordinates ({})",
            flat.len()
        )));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn check_polygon(poly: &[Point]) -> Result<(), AnnoError> {
    if poly.len() < 3 {
        return Err(AnnoError::Validation(format!(
            "polygon needs at least 3 vertices, got {}",
            poly.len()
        )));
    }
    if poly.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnnoError::Validation(
            "polygon has a non-finite vertex".into(),
        ));
    }
    Ok(())
}

/// Smallest integer `i` with `i + 0.5 >= x`, clamped to `[0, limit]`.
fn first_center_at_or_after(x: f64, limit: usize) -> usize {
    if x <= 0.5 {
        return 0;
    }
    if x > limit as f64 + 0.5 {
        return limit;
    }
    let mut i = (x - 0.5).ceil() as i64;
    while (i as f64) + 0.5 < x {
        i += 1;
    }
    while i > 0 && ((i - 1) as f64) + 0.5 >= x {
        i -= 1;
    }
    (i.max(0) as usize).min(limit)
}

fn add_polygon_crossings(poly: &[Point], height: usize, rows: &mut [Vec<f64>]) {
    let n = poly.len();
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        if a[1] == b[1] {
            continue;
        }
        let (lo, hi) = if a[1] < b[1] {
            (a[1], b[1])
        } else {
            (b[1], a[1])
        };
        // rows whose center py = y + 0.5 satisfies lo <= py < hi
        let first = first_center_at_or_after(lo, height);
        let last = first_center_at_or_after(hi, height);
        for (y, row) in rows.iter_mut().enumerate().take(last).skip(first) {
            let py = y as f64 + 0.5;
            row.push((b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]);
        }
    }
}

/// Rasterizes the union of `polys` into per-row spans.
///
/// Only rows with at least one span are returned.
pub fn polygon_spans(
    polys: &[Vec<Point>],
    height: usize,
    width: usize,
) -> Result<Vec<RowSpans>, AnnoError> {
    for poly in polys {
        check_polygon(poly)?;
    }
    let mut out = Vec::new();
    let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); height];
    let mut row_spans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); height];
    for poly in polys {
        for c in crossings.iter_mut() {
            c.clear();
        }
        add_polygon_crossings(poly, height, &mut crossings);
        for (y, xs) in crossings.iter_mut().enumerate() {
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let start = first_center_at_or_after(pair[0], width);
                let end = first_center_at_or_after(pair[1], width);
                if start < end {
                    row_spans[y].push((start, end));
                }
            }
        }
    }
    for (y, mut spans) in row_spans.into_iter().enumerate() {
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
        for (s, e) in spans {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        out.push(RowSpans {
            row: y,
            spans: merged,
        });
    }
    Ok(out)
}

pub fn spans_area(spans: &[RowSpans]) -> u64 {
    spans
        .iter()
        .flat_map(|r| r.spans.iter())
        .map(|&(s, e)| (e - s) as u64)
        .sum()
}

pub fn spans_bbox(spans: &[RowSpans]) -> Option<[f64; 4]> {
    let y0 = spans.first()?.row;
    let y1 = spans.last()?.row;
    let x0 = spans
        .iter()
        .filter_map(|r| r.spans.first())
        .map(|s| s.0)
        .min()?;
    let x1 = spans
        .iter()
        .filter_map(|r| r.spans.last())
        .map(|s| s.1)
        .max()?;
    Some([x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0 + 1) as f64])
}

pub fn polygons_to_mask(
    polys: &[Vec<Point>],
    height: usize,
    width: usize,
) -> Result<BinaryMask, AnnoError> {
    let spans = polygon_spans(polys, height, width)?;
    let mut mask = BinaryMask::new(height, width);
    for r in &spans {
        for &(s, e) in &r.spans {
            for x in s..e {
                mask.set(r.row, x, true);
            }
        }
    }
    Ok(mask)
}

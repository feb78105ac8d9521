//! Column-major run-length masks in the COCO layout.
//!
//! Runs alternate background/foreground starting with background, so a mask
//! whose first pixel is set begins with a zero-length run. The textual form is
//! the COCO "compressed RLE" string: each run is delta-coded against the run
//! two positions earlier (from the fourth run on) and written as 5-bit
//! little-endian groups offset by `'0'`, with bit 0x20 marking continuation
//! and bit 0x10 of the last group carrying the sign.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AnnoError, BinaryMask};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

impl RleMask {
    /// Wraps raw runs, checking that they tile the mask exactly.
    pub fn from_counts(height: usize, width: usize, counts: Vec<u32>) -> Result<Self, AnnoError> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total != (height * width) as u64 {
            return Err(AnnoError::Codec(format!(
                "runs sum to {total}, expected {} for a {height}x{width} mask",
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            counts,
        })
    }

    pub fn encode(mask: &BinaryMask) -> Self {
        let (h, w) = (mask.height(), mask.width());
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let bit = mask.get(y, x);
                if bit != current {
                    counts.push(run);
                    run = 0;
                    current = bit;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self {
            height: h,
            width: w,
            counts,
        }
    }

    pub fn decode(&self) -> BinaryMask {
        let h = self.height;
        let mut mask = BinaryMask::new(self.height, self.width);
        let mut pos = 0usize;
        for (i, &run) in self.counts.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 {
                for p in pos..pos + run {
                    mask.set(p % h, p / h, true);
                }
            }
            pos += run;
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| u64::from(c))
            .sum()
    }

    /// Tight pixel bounding box `(x, y, w, h)`, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let h = self.height;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut pos = 0usize;
        for (i, &run) in self.counts.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 && run > 0 {
                let (start, end) = (pos, pos + run - 1);
                let (xs, ys) = (start / h, start % h);
                let (xe, ye) = (end / h, end % h);
                x0 = x0.min(xs);
                x1 = x1.max(xe);
                if xs == xe {
                    y0 = y0.min(ys);
                    y1 = y1.max(ye);
                } else {
                    y0 = 0;
                    y1 = h - 1;
                }
            }
            pos += run;
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

    /// Foreground overlap computed directly on the runs.
    pub fn intersection_area(&self, other: &Self) -> Result<u64, AnnoError> {
        if self.height != other.height || self.width != other.width {
            return Err(AnnoError::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut a = Runs::new(&self.counts);
        let mut b = Runs::new(&other.counts);
        let mut overlap = 0u64;
        while let (Some((a_len, a_on)), Some((b_len, b_on))) = (a.peek(), b.peek()) {
            let step = a_len.min(b_len);
            if a_on && b_on {
                overlap += step;
            }
            a.advance(step);
            b.advance(step);
        }
        Ok(overlap)
    }

    /// Intersection over union; two empty masks give 0.
    pub fn iou(&self, other: &Self) -> Result<f64, AnnoError> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// COCO compressed counts string.
    pub fn to_coco_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.counts.len() {
            let mut x = i64::from(self.counts[i]);
            if i > 2 {
                x -= i64::from(self.counts[i - 2]);
            }
            loop {
                let mut c = (x & 0x1f) as u8;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                out.push((c + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    pub fn from_coco_string(height: usize, width: usize, s: &str) -> Result<Self, AnnoError> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0usize;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                let Some(&raw) = bytes.get(p) else {
                    return Err(AnnoError::Codec("truncated counts string".into()));
                };
                if !(48..48 + 64).contains(&raw) {
                    return Err(AnnoError::Codec(format!(
                        "invalid byte {raw:#04x} at offset {p} in counts string"
                    )));
                }
                if k >= 12 {
                    return Err(AnnoError::Codec("run length overflows".into()));
                }
                let c = i64::from(raw - 48);
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            let m = counts.len();
            if m > 2 {
                x += i64::from(counts[m - 2]);
            }
            let run = u32::try_from(x)
                .map_err(|_| AnnoError::Codec(format!("run {m} decodes to {x}")))?;
            counts.push(run);
        }
        Self::from_counts(height, width, counts)
    }
}

struct Runs<'a> {
    counts: &'a [u32],
    idx: usize,
    left: u64,
}

impl<'a> Runs<'a> {
    fn new(counts: &'a [u32]) -> Self {
        let mut runs = Self {
            counts,
            idx: 0,
            left: counts.first().map_or(0, |&c| u64::from(c)),
        };
        runs.skip_empty();
        runs
    }

    fn skip_empty(&mut self) {
        while self.left == 0 && self.idx < self.counts.len() {
            self.idx += 1;
            self.left = self.counts.get(self.idx).map_or(0, |&c| u64::from(c));
        }
    }

    fn peek(&self) -> Option<(u64, bool)> {
        (self.idx < self.counts.len()).then_some((self.left, self.idx % 2 == 1))
    }

    fn advance(&mut self, n: u64) {
        self.left -= n;
        self.skip_empty();
    }
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [usize; 2],
    counts: CountsWire,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CountsWire {
    Compressed(String),
    Raw(Vec<u32>),
}

impl Serialize for RleMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RleWire {
            size: [self.height, self.width],
            counts: CountsWire::Compressed(self.to_coco_string()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = RleWire::deserialize(deserializer)?;
        let [h, w] = wire.size;
        match wire.counts {
            CountsWire::Compressed(s) => RleMask::from_coco_string(h, w, &s),
            CountsWire::Raw(c) => RleMask::from_counts(h, w, c),
        }
        .map_err(serde::de::Error::custom)
    }
}

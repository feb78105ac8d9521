//! Bucket-balanced copy-paste and four-image mosaic.
//!
//! Both operations keep masks and pixels consistent: every pixel an output
//! mask covers was copied from the instance that mask belongs to. Images and
//! masks are resampled with the same nearest-neighbor index map, compositing
//! is hard (no blending), and later pastes occlude earlier ones.

use image::{Rgb, RgbImage};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anno::{nearest_source_index, AnnoError, BinaryMask, Bucket, Dataset};
use crate::seed;

/// Fill value for canvas regions no input covers.
pub const MOSAIC_FILL: Rgb<u8> = Rgb([114, 114, 114]);

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("selection error: {0}")]
    Selection(String),
    #[error("mosaic needs exactly 4 samples, got {0}")]
    Arity(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Anno(#[from] AnnoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleAnnotation {
    pub id: u64,
    pub category_id: u64,
    pub mask: BinaryMask,
}

impl SampleAnnotation {
    pub fn area(&self) -> u64 {
        self.mask.area()
    }

    pub fn bbox(&self) -> Option<[f64; 4]> {
        self.mask.bbox()
    }
}

/// An RGB image with decoded instance masks at its extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub annotations: Vec<SampleAnnotation>,
}

impl Sample {
    pub fn new(image: RgbImage, annotations: Vec<SampleAnnotation>) -> Result<Self, ComposeError> {
        let (w, h) = image.dimensions();
        for a in &annotations {
            if a.mask.width() != w as usize || a.mask.height() != h as usize {
                return Err(ComposeError::Validation(format!(
                    "annotation {} mask is {}x{}, image is {h}x{w}",
                    a.id,
                    a.mask.height(),
                    a.mask.width()
                )));
            }
        }
        Ok(Self { image, annotations })
    }

    /// Pairs an image with all of its annotations from `ds`.
    pub fn from_dataset(
        ds: &Dataset,
        image_id: u64,
        image: RgbImage,
    ) -> Result<Self, ComposeError> {
        let rec = ds
            .image(image_id)
            .ok_or_else(|| ComposeError::Validation(format!("unknown image id {image_id}")))?;
        if image.dimensions() != (rec.width, rec.height) {
            return Err(ComposeError::Validation(format!(
                "image {image_id} pixels are {:?}, annotation says {}x{}",
                image.dimensions(),
                rec.width,
                rec.height
            )));
        }
        let annotations = ds
            .annotations()
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| {
                Ok(SampleAnnotation {
                    id: a.id,
                    category_id: a.category_id,
                    mask: ds.annotation_mask(a)?,
                })
            })
            .collect::<Result<_, AnnoError>>()?;
        Self::new(image, annotations)
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Where an output annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Kept from the paste target.
    Target { annotation_id: u64 },
    /// The `index`-th entry of the paste sources.
    Pasted { index: usize, annotation_id: u64 },
    /// From mosaic input `quadrant` (0 top-left, 1 top-right, 2 bottom-left,
    /// 3 bottom-right).
    Quadrant { quadrant: usize, annotation_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub sample: Sample,
    /// Parallel to `sample.annotations`.
    pub origins: Vec<Origin>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketWeights {
    pub rare: f64,
    pub common: f64,
    pub frequent: f64,
}

impl BucketWeights {
    pub fn get(&self, b: Bucket) -> f64 {
        match b {
            Bucket::Rare => self.rare,
            Bucket::Common => self.common,
            Bucket::Frequent => self.frequent,
        }
    }
}

impl Default for BucketWeights {
    fn default() -> Self {
        Self {
            rare: 1.0,
            common: 1.0,
            frequent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PasteParams {
    pub n_instances: usize,
    pub bucket_weights: BucketWeights,
    /// Uniform scale multiplier range applied to each pasted instance.
    pub scale_jitter: (f64, f64),
    pub hflip_prob: f64,
    /// Occluded annotations keeping less than this share of their area are
    /// dropped.
    pub min_remaining_area_frac: f64,
}

impl Default for PasteParams {
    fn default() -> Self {
        Self {
            n_instances: 6,
            bucket_weights: BucketWeights::default(),
            scale_jitter: (0.8, 1.25),
            hflip_prob: 0.5,
            min_remaining_area_frac: 0.1,
        }
    }
}

impl PasteParams {
    pub fn validate(&self) -> Result<(), ComposeError> {
        let w = self.bucket_weights;
        let ws = [w.rare, w.common, w.frequent];
        if ws.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || ws.iter().all(|&v| v == 0.0) {
            return Err(ComposeError::Config(format!(
                "bucket weights must be non-negative and not all zero: {ws:?}"
            )));
        }
        let (lo, hi) = self.scale_jitter;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ComposeError::Config(format!(
                "scale jitter must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob)
            || !(0.0..=1.0).contains(&self.min_remaining_area_frac)
        {
            return Err(ComposeError::Config(
                "probabilities and fractions must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub image_id: u64,
    pub annotation_id: u64,
    pub category_id: u64,
}

/// Draws `n_instances` annotations: a bucket with probability proportional
/// to its weight (over buckets that have instances), then an instance
/// uniformly within it.
pub fn select_paste_instances(
    ds: &Dataset,
    params: &PasteParams,
    seed: u64,
) -> Result<Vec<InstanceRef>, ComposeError> {
    params.validate()?;
    if params.n_instances == 0 {
        return Ok(Vec::new());
    }
    let mut pools: [Vec<InstanceRef>; 3] = Default::default();
    for a in ds.annotations() {
        let bucket = ds
            .category(a.category_id)
            .expect("validated reference")
            .bucket;
        let slot = Bucket::ALL
            .iter()
            .position(|&b| b == bucket)
            .expect("bucket");
        pools[slot].push(InstanceRef {
            image_id: a.image_id,
            annotation_id: a.id,
            category_id: a.category_id,
        });
    }
    let weights: Vec<f64> = Bucket::ALL
        .iter()
        .zip(&pools)
        .map(|(&b, pool)| {
            if pool.is_empty() {
                0.0
            } else {
                params.bucket_weights.get(b)
            }
        })
        .collect();
    let pick = WeightedIndex::new(&weights)
        .map_err(|_| ComposeError::Selection("every weighted bucket is empty".into()))?;
    let mut rng = seed::rng(seed, 0);
    Ok((0..params.n_instances)
        .map(|_| {
            let pool = &pools[pick.sample(&mut rng)];
            pool[rng.random_range(0..pool.len())]
        })
        .collect())
}

/// Output extent of an axis of length `len` under `scale`, at least 1 when
/// the scaled length rounds to a positive value.
fn scaled_len(len: usize, scale: f64) -> usize {
    (len as f64 * scale).round() as usize
}

struct Patch {
    pixels: Vec<Rgb<u8>>,
    mask: BinaryMask,
}

impl Patch {
    /// Nearest-neighbor crop-and-resize of `src[x0.., y0..]` (size `w x h`)
    /// to `out_w x out_h`, optionally mirrored.
    fn extract(
        src: &Sample,
        mask: &BinaryMask,
        rect: (usize, usize, usize, usize),
        out: (usize, usize),
        flip: bool,
    ) -> Self {
        let (x0, y0, w, h) = rect;
        let (ow, oh) = out;
        let mut pixels = Vec::with_capacity(ow * oh);
        let mut out_mask = BinaryMask::new(oh, ow);
        for y in 0..oh {
            let sy = y0 + nearest_source_index(y, oh, h);
            for x in 0..ow {
                let lx = if flip { ow - 1 - x } else { x };
                let sx = x0 + nearest_source_index(lx, ow, w);
                pixels.push(*src.image.get_pixel(sx as u32, sy as u32));
                out_mask.set(y, x, mask.get(sy, sx));
            }
        }
        Self {
            pixels,
            mask: out_mask,
        }
    }
}

/// Pastes each source instance onto `target`, topmost in order.
///
/// Each instance is cropped to its bbox, scaled by a factor drawn from
/// `scale_jitter`, mirrored with `hflip_prob`, and placed uniformly at random
/// (clipped to the canvas). Pixels under the pasted mask are replaced, and the
/// pasted region is subtracted from every annotation beneath it. Annotations
/// left empty, or with less than `min_remaining_area_frac` of the area they
/// had when they entered the canvas, are dropped. Instances whose scaled or
/// clipped mask is empty are skipped with a warning.
pub fn copy_paste(
    target: &Sample,
    sources: &[(&Sample, u64)],
    params: &PasteParams,
    seed: u64,
) -> Result<Composition, ComposeError> {
    params.validate()?;
    let (tw, th) = (target.width() as usize, target.height() as usize);
    let mut image = target.image.clone();
    let mut anns: Vec<(SampleAnnotation, Origin, u64)> = target
        .annotations
        .iter()
        .map(|a| {
            (
                a.clone(),
                Origin::Target {
                    annotation_id: a.id,
                },
                a.area(),
            )
        })
        .collect();
    let mut next_id = target.annotations.iter().map(|a| a.id).max().unwrap_or(0) + 1;
    let mut warnings = Vec::new();

    for (index, &(src, ann_id)) in sources.iter().enumerate() {
        let mut rng: ChaCha8Rng = seed::rng(seed, index as u64);
        let src_ann = src
            .annotations
            .iter()
            .find(|a| a.id == ann_id)
            .ok_or_else(|| {
                ComposeError::Validation(format!("source {index} has no annotation {ann_id}"))
            })?;
        let Some(bbox) = src_ann.bbox() else {
            return Err(ComposeError::Validation(format!(
                "source {index} annotation {ann_id} has an empty mask"
            )));
        };
        let rect = (
            bbox[0] as usize,
            bbox[1] as usize,
            bbox[2] as usize,
            bbox[3] as usize,
        );
        let (lo, hi) = params.scale_jitter;
        let scale = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let flip = rng.random::<f64>() < params.hflip_prob;
        let (pw, ph) = (scaled_len(rect.2, scale), scaled_len(rect.3, scale));
        if pw == 0 || ph == 0 {
            warnings.push(format!(
                "source {index} annotation {ann_id}: scaled to {pw}x{ph} px, skipped"
            ));
            continue;
        }
        let patch = Patch::extract(src, &src_ann.mask, rect, (pw, ph), flip);
        let ox = rng.random_range(0..=tw.saturating_sub(pw));
        let oy = rng.random_range(0..=th.saturating_sub(ph));

        let mut pasted = BinaryMask::new(th, tw);
        for y in 0..ph.min(th - oy) {
            for x in 0..pw.min(tw - ox) {
                if patch.mask.get(y, x) {
                    pasted.set(oy + y, ox + x, true);
                    image.put_pixel((ox + x) as u32, (oy + y) as u32, patch.pixels[y * pw + x]);
                }
            }
        }
        if pasted.is_empty() {
            warnings.push(format!(
                "source {index} annotation {ann_id}: empty after clipping, skipped"
            ));
            continue;
        }
        for (a, _, _) in anns.iter_mut() {
            a.mask.subtract(&pasted)?;
        }
        let area = pasted.area();
        anns.push((
            SampleAnnotation {
                id: next_id,
                category_id: src_ann.category_id,
                mask: pasted,
            },
            Origin::Pasted {
                index,
                annotation_id: ann_id,
            },
            area,
        ));
        next_id += 1;
    }

    let (annotations, origins) = anns
        .into_iter()
        .filter(|(a, _, original)| {
            let left = a.area();
            left > 0 && (left as f64) >= params.min_remaining_area_frac * *original as f64
        })
        .map(|(a, o, _)| (a, o))
        .unzip();
    Ok(Composition {
        sample: Sample::new(image, annotations)?,
        origins,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MosaicParams {
    pub apply_prob: f64,
    /// `(W, H)`; the canvas is `2W x 2H`.
    pub base_size: (u32, u32),
    /// Inputs are resized so their short side lands uniformly in this range.
    pub short_side_range: (u32, u32),
    /// Clipped annotations whose bbox area falls below this are dropped.
    pub min_box_area: f64,
}

impl MosaicParams {
    /// Short-side range used for mosaic training.
    pub const MOSAIC_SHORT_SIDE: (u32, u32) = (640, 1400);
    /// Short-side range used without mosaic.
    pub const DEFAULT_SHORT_SIDE: (u32, u32) = (400, 1400);

    pub fn validate(&self) -> Result<(), ComposeError> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(ComposeError::Config(format!(
                "apply_prob {} outside [0, 1]",
                self.apply_prob
            )));
        }
        let (lo, hi) = self.short_side_range;
        if lo == 0 || lo >= hi {
            return Err(ComposeError::Config(format!(
                "short side range must satisfy 0 < min < max, got ({lo}, {hi})"
            )));
        }
        if self.base_size.0 == 0 || self.base_size.1 == 0 {
            return Err(ComposeError::Config("base size must be positive".into()));
        }
        if self.min_box_area.is_nan() || self.min_box_area < 0.0 {
            return Err(ComposeError::Config(
                "min_box_area must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for MosaicParams {
    fn default() -> Self {
        Self {
            apply_prob: 0.5,
            base_size: (640, 640),
            short_side_range: Self::MOSAIC_SHORT_SIDE,
            min_box_area: 4.0,
        }
    }
}

/// Placement of one mosaic input on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadrantPlacement {
    /// Canvas position of the resized input's top-left corner (may be negative).
    pub offset: (i64, i64),
    /// Resized input extent `(w, h)`.
    pub resized: (usize, usize),
    /// Visible canvas region `[x0, x1) x [y0, y1)`.
    pub region: (usize, usize, usize, usize),
}

/// Draws the canvas center and per-input resize/placement for one mosaic.
pub fn plan_mosaic(
    sizes: &[(u32, u32); 4],
    params: &MosaicParams,
    rng: &mut ChaCha8Rng,
) -> ((usize, usize), [QuadrantPlacement; 4]) {
    let (bw, bh) = (params.base_size.0 as usize, params.base_size.1 as usize);
    let (cw, ch) = (2 * bw, 2 * bh);
    let cx = rng.random_range(bw / 2..=bw + bw / 2);
    let cy = rng.random_range(bh / 2..=bh + bh / 2);
    let (lo, hi) = params.short_side_range;
    let placements = std::array::from_fn(|k| {
        let (w, h) = (sizes[k].0 as usize, sizes[k].1 as usize);
        let short = rng.random_range(lo..=hi) as f64;
        let scale = short / w.min(h) as f64;
        let rw = scaled_len(w, scale).max(1);
        let rh = scaled_len(h, scale).max(1);
        let (ox, oy) = match k {
            0 => (cx as i64 - rw as i64, cy as i64 - rh as i64),
            1 => (cx as i64, cy as i64 - rh as i64),
            2 => (cx as i64 - rw as i64, cy as i64),
            _ => (cx as i64, cy as i64),
        };
        let (x0, x1) = if k % 2 == 0 {
            (ox.max(0) as usize, cx)
        } else {
            (cx, (cx + rw).min(cw))
        };
        let (y0, y1) = if k < 2 {
            (oy.max(0) as usize, cy)
        } else {
            (cy, (cy + rh).min(ch))
        };
        QuadrantPlacement {
            offset: (ox, oy),
            resized: (rw, rh),
            region: (x0, x1, y0, y1),
        }
    });
    ((cx, cy), placements)
}

/// Stitches four samples around a random center on a `2W x 2H` canvas.
///
/// Input `k` is resized (short side drawn from `short_side_range`), anchored
/// at the center by its inner corner, and cropped to its quadrant. Masks go
/// through the same index map as pixels; annotations whose clipped mask is
/// empty or whose clipped bbox area is below `min_box_area` are dropped.
pub fn mosaic(
    samples: &[Sample],
    params: &MosaicParams,
    seed: u64,
) -> Result<Composition, ComposeError> {
    params.validate()?;
    let samples: &[Sample; 4] = samples
        .try_into()
        .map_err(|_| ComposeError::Arity(samples.len()))?;
    let mut rng = seed::rng(seed, 0);
    let sizes = samples.each_ref().map(|s| s.image.dimensions());
    let (_, placements) = plan_mosaic(&sizes, params, &mut rng);
    let (cw, ch) = (
        2 * params.base_size.0 as usize,
        2 * params.base_size.1 as usize,
    );
    let mut canvas = RgbImage::from_pixel(cw as u32, ch as u32, MOSAIC_FILL);
    let mut annotations = Vec::new();
    let mut origins = Vec::new();

    for (k, (sample, place)) in samples.iter().zip(&placements).enumerate() {
        let (sw, sh) = (sample.width() as usize, sample.height() as usize);
        let (rw, rh) = place.resized;
        let (x0, x1, y0, y1) = place.region;
        let src_x = |x: usize| nearest_source_index((x as i64 - place.offset.0) as usize, rw, sw);
        let src_y = |y: usize| nearest_source_index((y as i64 - place.offset.1) as usize, rh, sh);
        for y in y0..y1 {
            let sy = src_y(y);
            for x in x0..x1 {
                canvas.put_pixel(
                    x as u32,
                    y as u32,
                    *sample.image.get_pixel(src_x(x) as u32, sy as u32),
                );
            }
        }
        for a in &sample.annotations {
            let mut mask = BinaryMask::new(ch, cw);
            for y in y0..y1 {
                let sy = src_y(y);
                for x in x0..x1 {
                    if a.mask.get(sy, src_x(x)) {
                        mask.set(y, x, true);
                    }
                }
            }
            let Some(b) = mask.bbox() else { continue };
            if b[2] * b[3] < params.min_box_area {
                continue;
            }
            annotations.push(SampleAnnotation {
                id: annotations.len() as u64 + 1,
                category_id: a.category_id,
                mask,
            });
            origins.push(Origin::Quadrant {
                quadrant: k,
                annotation_id: a.id,
            });
        }
    }
    Ok(Composition {
        sample: Sample::new(canvas, annotations)?,
        origins,
        warnings: Vec::new(),
    })
}

/// One item from [`MosaicStream`].
#[derive(Debug, Clone, PartialEq)]
pub enum Emitted {
    Mosaic(Composition),
    Single(Sample),
}

impl Emitted {
    pub fn is_mosaic(&self) -> bool {
        matches!(self, Emitted::Mosaic(_))
    }

    pub fn into_sample(self) -> Sample {
        match self {
            Emitted::Mosaic(c) => c.sample,
            Emitted::Single(s) => s,
        }
    }
}

/// Applies mosaic with probability `apply_prob` per output: a mosaic of the
/// next four samples, or the next sample unchanged. When fewer than four
/// samples remain for a mosaic, they are passed through one by one.
pub struct MosaicStream<I> {
    inner: I,
    params: MosaicParams,
    seed: u64,
    decisions: ChaCha8Rng,
    emitted: u64,
    pending: std::collections::VecDeque<Sample>,
}

impl<I: Iterator<Item = Sample>> MosaicStream<I> {
    pub fn new(inner: I, params: MosaicParams, seed: u64) -> Result<Self, ComposeError> {
        params.validate()?;
        Ok(Self {
            inner,
            params,
            seed,
            decisions: seed::rng(seed, u64::MAX),
            emitted: 0,
            pending: Default::default(),
        })
    }
}

impl<I: Iterator<Item = Sample>> Iterator for MosaicStream<I> {
    type Item = Result<Emitted, ComposeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(s) = self.pending.pop_front() {
            return Some(Ok(Emitted::Single(s)));
        }
        let apply = self.decisions.random::<f64>() < self.params.apply_prob;
        let index = self.emitted;
        self.emitted += 1;
        if !apply {
            return self.inner.next().map(|s| Ok(Emitted::Single(s)));
        }
        let group: Vec<Sample> = self.inner.by_ref().take(4).collect();
        if group.len() < 4 {
            self.pending.extend(group);
            return self.pending.pop_front().map(|s| Ok(Emitted::Single(s)));
        }
        Some(mosaic(&group, &self.params, seed::derive(self.seed, index)).map(Emitted::Mosaic))
    }
}

/// [`MosaicStream`] over `samples`.
pub fn maybe_mosaic<I: IntoIterator<Item = Sample>>(
    samples: I,
    params: MosaicParams,
    seed: u64,
) -> Result<MosaicStream<I::IntoIter>, ComposeError> {
    MosaicStream::new(samples.into_iter(), params, seed)
}

//! Slow, direct reference implementations used to check the library.
#![allow(dead_code)]

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use longtail_core::anno::{
    AnnotationRecord, BinaryMask, CategoryRecord, Dataset, ImageRecord, RleMask, Segmentation,
};
use longtail_core::compositor::{Composition, Origin, Sample, SampleAnnotation};
use longtail_core::eval::Detection;
use longtail_core::fixture::instance_color;
use longtail_core::seed;
use rand::seq::SliceRandom;
use rand::Rng;

/// Even-odd point-in-polygon test (PNPOLY).
pub fn pnpoly(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Foreground pixels having a background or out-of-extent pixel within
/// Chebyshev distance `d`, by scanning the full window.
pub fn brute_band(m: &BinaryMask, d: usize) -> BinaryMask {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let d = d as i64;
    BinaryMask::from_fn(m.height(), m.width(), |y, x| {
        if !m.get(y, x) {
            return false;
        }
        for dy in -d..=d {
            for dx in -d..=d {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                if yy < 0 || xx < 0 || yy >= h || xx >= w || !m.get(yy as usize, xx as usize) {
                    return true;
                }
            }
        }
        false
    })
}

pub fn band_width(h: usize, w: usize, frac: f64) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    ((frac * diag).ceil() as usize).max(1)
}

pub fn brute_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(y, x), b.get(y, x));
            inter += u64::from(p && q);
            union += u64::from(p || q);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `-ln(e^{z_y} / sum_j w_j e^{z_j})` written out directly.
pub fn naive_weighted_ce(logits: &[f64], label: usize, weights: &[f64]) -> f64 {
    let denom: f64 = logits.iter().zip(weights).map(|(z, w)| w * z.exp()).sum();
    -(logits[label].exp() / denom).ln()
}

/// Seesaw negative weights from the definition: mitigation
/// `min(1, (N_j / N_i)^p)` times compensation `max(1, (s_j / s_i)^q)`.
pub fn naive_seesaw_weights(
    logits: &[f64],
    label: usize,
    counts: &[u64],
    p: f64,
    q: f64,
    eps: f64,
) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
    let total: f64 = e.iter().sum();
    let sigma: Vec<f64> = e.iter().map(|v| v / total).collect();
    let n = |k: usize| (counts[k] as f64).max(eps);
    (0..logits.len())
        .map(|j| {
            if j == label {
                1.0
            } else {
                let m = (n(j) / n(label)).powf(p).min(1.0);
                let c = (sigma[j] / sigma[label]).powf(q).max(1.0);
                m * c
            }
        })
        .collect()
}

pub struct RefConfig {
    pub thresholds: Vec<f64>,
    pub max_per_img: usize,
    /// Boundary band fraction; `None` evaluates full masks.
    pub boundary_frac: Option<f64>,
}

/// Exhaustive COCO-style AP. Detections must have distinct scores.
///
/// Returns `(AP, per-category AP)` in percent.
pub fn reference_evaluate(
    gt: &Dataset,
    dets: &[Detection],
    cfg: &RefConfig,
) -> (f64, BTreeMap<u64, f64>) {
    let prep = |m: BinaryMask| match cfg.boundary_frac {
        Some(f) => {
            let d = band_width(m.height(), m.width(), f);
            brute_band(&m, d)
        }
        None => m,
    };

    // per-image cap by score
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut kept = Vec::new();
    let mut per_image: BTreeMap<u64, usize> = BTreeMap::new();
    for d in sorted {
        let n = per_image.entry(d.image_id).or_default();
        if *n < cfg.max_per_img {
            kept.push(d);
        }
        *n += 1;
    }

    let mut categories: Vec<u64> = gt.annotations().iter().map(|a| a.category_id).collect();
    categories.sort_unstable();
    categories.dedup();

    let mut per_cat = BTreeMap::new();
    for &c in &categories {
        let gts: Vec<(u64, u64, BinaryMask)> = {
            let mut v: Vec<_> = gt
                .annotations()
                .iter()
                .filter(|a| a.category_id == c)
                .map(|a| (a.image_id, a.id, prep(gt.annotation_mask(a).unwrap())))
                .collect();
            v.sort_by_key(|(_, id, _)| *id);
            v
        };
        let cdets: Vec<(u64, BinaryMask)> = kept
            .iter()
            .filter(|d| d.category_id == c)
            .map(|d| (d.image_id, prep(d.mask.decode())))
            .collect();
        let mut total = 0.0;
        for &t in &cfg.thresholds {
            let mut taken = vec![false; gts.len()];
            let mut flags = Vec::new();
            for (img, dm) in &cdets {
                let mut best: Option<(usize, f64)> = None;
                for (g, (gimg, _, gm)) in gts.iter().enumerate() {
                    if gimg != img || taken[g] {
                        continue;
                    }
                    let iou = brute_iou(dm, gm);
                    if iou >= t && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                if let Some((g, _)) = best {
                    taken[g] = true;
                }
                flags.push(best.is_some());
            }
            // precision/recall curve with a monotone envelope
            let (mut tp, mut fp) = (0usize, 0usize);
            let mut rc = Vec::new();
            let mut pr = Vec::new();
            for &f in &flags {
                if f {
                    tp += 1
                } else {
                    fp += 1
                }
                rc.push(tp as f64 / gts.len() as f64);
                pr.push(tp as f64 / (tp + fp) as f64);
            }
            for i in (0..pr.len()).rev() {
                let next = if i + 1 < pr.len() { pr[i + 1] } else { 0.0 };
                pr[i] = f64::max(pr[i], next);
            }
            let mut sum = 0.0;
            for i in 0..101 {
                // numpy linspace(0, 1, 101) spacing
                let r = if i == 100 { 1.0 } else { i as f64 * 0.01 };
                if let Some(k) = rc.iter().position(|&x| x >= r) {
                    sum += pr[k];
                }
            }
            total += sum / 101.0;
        }
        per_cat.insert(c, 100.0 * (total / cfg.thresholds.len() as f64));
    }
    let ap = if per_cat.is_empty() {
        0.0
    } else {
        per_cat.values().sum::<f64>() / per_cat.len() as f64
    };
    (ap, per_cat)
}

/// A sample on a gray background with each `(id, category, mask)` painted in
/// its [`instance_color`], later entries on top.
pub fn painted_sample(
    height: usize,
    width: usize,
    instances: Vec<(u64, u64, BinaryMask)>,
) -> Sample {
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([1, 2, 3]));
    for (id, _, m) in &instances {
        for y in 0..height {
            for x in 0..width {
                if m.get(y, x) {
                    img.put_pixel(x as u32, y as u32, instance_color(*id));
                }
            }
        }
    }
    let annotations = instances
        .into_iter()
        .map(|(id, category_id, mask)| SampleAnnotation {
            id,
            category_id,
            mask,
        })
        .collect();
    Sample::new(img, annotations).unwrap()
}

pub fn rect_mask(
    height: usize,
    width: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| {
        x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
    })
}

pub fn ellipse_mask(height: usize, width: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

/// Share of output mask pixels whose color is the color of the source
/// instance the annotation came from. Source instance ids must be unique
/// across all inputs.
pub fn provenance_fraction(out: &Composition) -> f64 {
    let (mut good, mut total) = (0u64, 0u64);
    for (a, origin) in out.sample.annotations.iter().zip(&out.origins) {
        let id = match *origin {
            Origin::Target { annotation_id } => annotation_id,
            Origin::Pasted { annotation_id, .. } => annotation_id,
            Origin::Quadrant { annotation_id, .. } => annotation_id,
        };
        let want = instance_color(id);
        for y in 0..a.mask.height() {
            for x in 0..a.mask.width() {
                if a.mask.get(y, x) {
                    total += 1;
                    good += u64::from(*out.sample.image.get_pixel(x as u32, y as u32) == want);
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        good as f64 / total as f64
    }
}

/// Ranks (per image) at which a detection is a true positive in
/// [`dense_detection_fixture`].
pub const DENSE_TP_RANKS: [usize; 20] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 150, 151, 152, 153, 154, 500, 501, 502, 503, 504,
];

/// `n_images` 60x60 images with 20 ground-truth squares each and
/// `per_image` detections per image. Scores are rank-aligned: the detection
/// of rank `r` in any image outscores every detection of rank `r + 1`, so
/// a per-image cap only ever removes a global suffix.
pub fn dense_detection_fixture(n_images: u64, per_image: usize) -> (Dataset, Vec<Detection>) {
    let cell = |k: usize| ((k % 6) * 10 + 1, (k / 6) * 10 + 1);
    let square = |k: usize| {
        let (x0, y0) = cell(k);
        rect_mask(60, 60, x0, y0, 8, 8)
    };
    let images: Vec<ImageRecord> = (1..=n_images)
        .map(|id| ImageRecord {
            id,
            width: 60,
            height: 60,
            file_name: format!("{id}.png"),
        })
        .collect();
    let mut anns = Vec::new();
    for im in &images {
        for k in 0..20 {
            anns.push(AnnotationRecord {
                id: anns.len() as u64 + 1,
                image_id: im.id,
                category_id: 1 + (k % 2) as u64,
                segmentation: Segmentation::Rle(RleMask::encode(&square(k))),
                bbox: [0.0; 4],
                area: f64::NAN,
            });
        }
    }
    let categories = vec![
        CategoryRecord::new(1, "one", 5),
        CategoryRecord::new(2, "two", 500),
    ];
    let mut dets = Vec::new();
    for im in &images {
        let mut next_tp = 0;
        for r in 0..per_image {
            let (k, cat) = if DENSE_TP_RANKS.contains(&r) {
                next_tp += 1;
                (next_tp - 1, 1 + ((next_tp - 1) % 2) as u64)
            } else {
                (20 + r % 16, 1 + (r % 2) as u64)
            };
            let offset = (im.id - 1) as f64 / n_images as f64 * 0.5;
            dets.push(Detection {
                image_id: im.id,
                category_id: cat,
                score: 1.0 - (r as f64 + offset) / (per_image + 1) as f64,
                mask: RleMask::encode(&square(k)),
                iou_pred: None,
            });
        }
    }
    (Dataset::new(images, categories, anns).unwrap(), dets)
}

pub fn random_blob(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    let x0 = rng.random_range(0..w - 3);
    let y0 = rng.random_range(0..h - 3);
    let bw = rng.random_range(3..=(w - x0).min(12));
    let bh = rng.random_range(3..=(h - y0).min(12));
    let mut m = BinaryMask::from_fn(h, w, |y, x| {
        x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh
    });
    // knock out a few pixels so shapes are not all rectangles
    for _ in 0..rng.random_range(0..4) {
        m.set(
            y0 + rng.random_range(0..bh),
            x0 + rng.random_range(0..bw),
            false,
        );
    }
    m
}

fn jitter(rng: &mut impl Rng, m: &BinaryMask) -> BinaryMask {
    let (dx, dy) = (rng.random_range(-2i64..=2), rng.random_range(-2i64..=2));
    BinaryMask::from_fn(m.height(), m.width(), |y, x| {
        let (sy, sx) = (y as i64 - dy, x as i64 - dx);
        sy >= 0
            && sx >= 0
            && (sy as usize) < m.height()
            && (sx as usize) < m.width()
            && m.get(sy as usize, sx as usize)
    })
}

/// Up to 3 images and 10 detections; categories 1-3, scores distinct.
pub fn random_eval_case(seed: u64) -> (Dataset, Vec<Detection>) {
    let mut rng = seed::rng(seed, 0);
    let n_images = rng.random_range(1..=3u64);
    let images: Vec<ImageRecord> = (1..=n_images)
        .map(|id| ImageRecord {
            id,
            width: rng.random_range(16..=28),
            height: rng.random_range(16..=28),
            file_name: String::new(),
        })
        .collect();
    let categories = vec![
        CategoryRecord::new(1, "a", 3),
        CategoryRecord::new(2, "b", 50),
        CategoryRecord::new(3, "c", 500),
    ];
    let mut anns = Vec::new();
    let mut gt_masks = Vec::new();
    for im in &images {
        for _ in 0..rng.random_range(1..=3) {
            let m = random_blob(&mut rng, im.height as usize, im.width as usize);
            if m.is_empty() {
                continue;
            }
            let cat = rng.random_range(1..=3);
            gt_masks.push((im.id, cat, m.clone()));
            anns.push(AnnotationRecord {
                id: anns.len() as u64 + 1,
                image_id: im.id,
                category_id: cat,
                segmentation: Segmentation::Rle(RleMask::encode(&m)),
                bbox: [0.0; 4],
                area: f64::NAN,
            });
        }
    }
    let n_dets = rng.random_range(0..=10);
    let mut scores: Vec<u32> = (1..=99).collect();
    scores.shuffle(&mut rng);
    let dets = (0..n_dets)
        .map(|k| {
            let (image_id, category_id, mask) = if rng.random_bool(0.7) {
                let (i, c, m) = &gt_masks[rng.random_range(0..gt_masks.len())];
                let c = if rng.random_bool(0.15) {
                    rng.random_range(1..=3)
                } else {
                    *c
                };
                (*i, c, jitter(&mut rng, m))
            } else {
                let im = &images[rng.random_range(0..images.len())];
                (
                    im.id,
                    rng.random_range(1..=3),
                    random_blob(&mut rng, im.height as usize, im.width as usize),
                )
            };
            Detection {
                image_id,
                category_id,
                score: f64::from(scores[k]) / 100.0,
                mask: RleMask::encode(&mask),
                iou_pred: None,
            }
        })
        .collect();
    (Dataset::new(images, categories, anns).unwrap(), dets)
}

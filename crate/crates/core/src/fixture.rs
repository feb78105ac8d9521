//! Synthetic long-tail datasets with known category frequency statistics.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anno::{
    AnnoError, AnnotationRecord, BucketFractions, CategoryRecord, Dataset, ImageRecord,
    Segmentation,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Anno(#[from] AnnoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureParams {
    pub n_categories: usize,
    pub zipf_s: f64,
    pub n_images: usize,
    /// Image sides are drawn uniformly from this range.
    pub side_range: (u32, u32),
    /// Instances per (image, category) pair are drawn uniformly from this range.
    pub instances_range: (u32, u32),
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            n_categories: 50,
            zipf_s: 1.2,
            n_images: 200,
            side_range: (48, 96),
            instances_range: (1, 3),
        }
    }
}

/// Ground truth recorded while generating a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub seed: u64,
    pub params: FixtureParams,
    /// Category id to number of images it was placed in.
    pub category_image_counts: BTreeMap<u64, u64>,
    /// Category id to number of instances generated.
    pub category_instance_counts: BTreeMap<u64, u64>,
    /// Categories per bucket, ordered rare, common, frequent.
    pub bucket_categories: [u64; 3],
    /// Instances per bucket, ordered rare, common, frequent.
    pub bucket_instances: [u64; 3],
    pub category_fractions: BucketFractions,
    pub instance_fractions: BucketFractions,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub dataset: Dataset,
    pub truth: FixtureTruth,
}

/// Number of images category `rank` (1-based) appears in.
pub fn zipf_image_count(n_images: usize, rank: usize, s: f64) -> u64 {
    ((n_images as f64 / (rank as f64).powf(s)).round() as u64).max(1)
}

fn bucket_slot(image_count: u64) -> usize {
    if image_count <= 10 {
        0
    } else if image_count <= 100 {
        1
    } else {
        2
    }
}

fn fractions(counts: [u64; 3]) -> BucketFractions {
    let total: u64 = counts.iter().sum();
    let f = |c: u64| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    };
    BucketFractions {
        rare: f(counts[0]),
        common: f(counts[1]),
        frequent: f(counts[2]),
    }
}

fn random_shape(rng: &mut impl Rng, w: u32, h: u32) -> Vec<f64> {
    let (w, h) = (w as f64, h as f64);
    if rng.random_bool(0.5) {
        let rw = rng.random_range(4..=(w as u32 / 3).max(4)) as f64;
        let rh = rng.random_range(4..=(h as u32 / 3).max(4)) as f64;
        let x0 = rng.random_range(0..=(w - rw) as u32) as f64;
        let y0 = rng.random_range(0..=(h - rh) as u32) as f64;
        vec![x0, y0, x0 + rw, y0, x0 + rw, y0 + rh, x0, y0 + rh]
    } else {
        let rx = rng.random_range(3.0..(w / 6.0).max(3.5));
        let ry = rng.random_range(3.0..(h / 6.0).max(3.5));
        let cx = rng.random_range(rx..=w - rx);
        let cy = rng.random_range(ry..=h - ry);
        (0..16)
            .flat_map(|i| {
                let t = TAU * i as f64 / 16.0;
                [cx + rx * t.cos(), cy + ry * t.sin()]
            })
            .collect()
    }
}

/// Generates a dataset whose category `k` (1-based) appears in
/// `max(1, round(n_images / k^s))` distinct images.
///
/// Each (image, category) pair gets between `instances_range.0` and
/// `instances_range.1` rectangle or ellipse instances. Buckets left empty by
/// the parameters are reported in `truth.warnings`.
pub fn gen_fixture(params: &FixtureParams, seed: u64) -> Result<Fixture, FixtureError> {
    if params.n_categories < 3 {
        return Err(FixtureError::Config(format!(
            "need at least 3 categories, got {}",
            params.n_categories
        )));
    }
    if params.n_images == 0 || !(params.zipf_s.is_finite() && params.zipf_s >= 0.0) {
        return Err(FixtureError::Config(
            "n_images must be positive and zipf_s finite and non-negative".into(),
        ));
    }
    let (smin, smax) = params.side_range;
    let (imin, imax) = params.instances_range;
    if smin < 12 || smin > smax || imin == 0 || imin > imax {
        return Err(FixtureError::Config(
            "side range must start at 12 or more and instance range at 1 or more".into(),
        ));
    }

    let mut rng = seed::rng(seed, 0);
    let images: Vec<ImageRecord> = (1..=params.n_images as u64)
        .map(|id| ImageRecord {
            id,
            width: rng.random_range(smin..=smax),
            height: rng.random_range(smin..=smax),
            file_name: format!("{id:06}.png"),
        })
        .collect();

    let mut categories = Vec::with_capacity(params.n_categories);
    let mut placements: Vec<(u64, u64)> = Vec::new();
    let mut category_image_counts = BTreeMap::new();
    for rank in 1..=params.n_categories {
        let id = rank as u64;
        let count =
            zipf_image_count(params.n_images, rank, params.zipf_s).min(params.n_images as u64);
        categories.push(CategoryRecord::new(
            id,
            format!("category_{rank:03}"),
            count,
        ));
        category_image_counts.insert(id, count);
        let mut chosen = index::sample(&mut rng, params.n_images, count as usize).into_vec();
        chosen.sort_unstable();
        placements.extend(chosen.into_iter().map(|i| (i as u64 + 1, id)));
    }
    placements.sort_unstable();

    let mut annotations = Vec::new();
    let mut category_instance_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for (image_id, category_id) in placements {
        let im = &images[image_id as usize - 1];
        for _ in 0..rng.random_range(imin..=imax) {
            annotations.push(AnnotationRecord {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id,
                segmentation: Segmentation::Polygons(vec![random_shape(
                    &mut rng, im.width, im.height,
                )]),
                bbox: [0.0; 4],
                area: f64::NAN,
            });
            *category_instance_counts.entry(category_id).or_insert(0) += 1;
        }
    }

    let mut bucket_categories = [0u64; 3];
    let mut bucket_instances = [0u64; 3];
    for (id, &count) in &category_image_counts {
        let slot = bucket_slot(count);
        bucket_categories[slot] += 1;
        bucket_instances[slot] += category_instance_counts.get(id).copied().unwrap_or(0);
    }
    let warnings = ["rare", "common", "frequent"]
        .iter()
        .zip(bucket_categories)
        .filter(|(_, n)| *n == 0)
        .map(|(name, _)| format!("bucket {name} is empty for these parameters"))
        .collect();

    let dataset = Dataset::new(images, categories, annotations)?;
    Ok(Fixture {
        dataset,
        truth: FixtureTruth {
            seed,
            params: params.clone(),
            category_image_counts,
            category_instance_counts,
            bucket_categories,
            bucket_instances,
            category_fractions: fractions(bucket_categories),
            instance_fractions: fractions(bucket_instances),
            warnings,
        },
    })
}

/// Color used to paint annotation `id`; never black.
pub fn instance_color(id: u64) -> Rgb<u8> {
    let v = (id.wrapping_mul(0x9E37_79B9) % 0xFF_FFFF) + 1;
    Rgb([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

/// Renders an image of `image_id` on black, painting each annotation in
/// [`instance_color`] in id order.
pub fn render_image(ds: &Dataset, image_id: u64) -> Result<RgbImage, FixtureError> {
    let im = ds
        .image(image_id)
        .ok_or_else(|| FixtureError::Config(format!("unknown image id {image_id}")))?;
    let mut img = RgbImage::new(im.width, im.height);
    for a in ds.annotations().iter().filter(|a| a.image_id == image_id) {
        let mask = ds.annotation_mask(a)?;
        let color = instance_color(a.id);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_counts() {
        assert_eq!(zipf_image_count(200, 1, 1.2), 200);
        assert_eq!(zipf_image_count(200, 2, 1.0), 100);
        assert_eq!(zipf_image_count(10, 1000, 2.0), 1);
    }

    #[test]
    fn uniform_limit_has_no_rare() {
        let p = FixtureParams {
            n_categories: 5,
            zipf_s: 0.0,
            n_images: 20,
            ..FixtureParams::default()
        };
        let f = gen_fixture(&p, 1).unwrap();
        assert_eq!(f.truth.bucket_categories, [0, 5, 0]);
        assert_eq!(f.truth.warnings.len(), 2);
    }

    #[test]
    fn reproducible() {
        let p = FixtureParams {
            n_categories: 10,
            n_images: 30,
            ..FixtureParams::default()
        };
        let a = gen_fixture(&p, 3).unwrap();
        let b = gen_fixture(&p, 3).unwrap();
        assert_eq!(a.dataset.annotations(), b.dataset.annotations());
        assert_eq!(a.truth, b.truth);
        let c = gen_fixture(&p, 4).unwrap();
        assert_ne!(a.dataset.annotations(), c.dataset.annotations());
    }

    #[test]
    fn placement_matches_recorded_counts() {
        let f = gen_fixture(&FixtureParams::default(), 7).unwrap();
        let counted = f.dataset.count_images_per_category();
        for (id, n) in &f.truth.category_image_counts {
            assert_eq!(counted.get(id).copied().unwrap_or(0), *n);
        }
        assert!(f.dataset.annotations().iter().all(|a| a.area > 0.0));
    }

    #[test]
    fn too_few_categories() {
        let p = FixtureParams {
            n_categories: 2,
            ..FixtureParams::default()
        };
        assert!(matches!(gen_fixture(&p, 0), Err(FixtureError::Config(_))));
    }
}

//! Repeat-factor sampling.
//!
//! Category repeat factor `r_c = max(1, sqrt(t / f_c))` where `f_c` is the
//! fraction of images containing `c`; image repeat factor `r_I` is the max of
//! `r_c` over the categories present in the image (1 for unannotated images).
//! An epoch repeats each image `floor(r_I)` times plus one extra copy with
//! probability `frac(r_I)`, then shuffles.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anno::Dataset;
use crate::seed;

pub const DEFAULT_THRESHOLD: f64 = 0.001;

#[derive(Debug, Error, PartialEq)]
pub enum RfsError {
    #[error("config error: threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("config error: dataset has no images")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFactors {
    pub threshold: f64,
    /// Only categories that occur in at least one image.
    pub per_category: BTreeMap<u64, f64>,
    /// `(image_id, r_I)` in dataset image order.
    pub per_image: Vec<(u64, f64)>,
}

impl RepeatFactors {
    /// Expected schedule length, `sum r_I`.
    pub fn expected_len(&self) -> f64 {
        self.per_image.iter().map(|&(_, r)| r).sum()
    }

    pub fn image_factor(&self, image_id: u64) -> Option<f64> {
        self.per_image
            .iter()
            .find(|&&(id, _)| id == image_id)
            .map(|&(_, r)| r)
    }
}

pub fn category_repeat_factor(threshold: f64, image_fraction: f64) -> f64 {
    (threshold / image_fraction).sqrt().max(1.0)
}

/// Repeat factors with category frequencies counted from `ds`'s annotations.
pub fn compute_repeat_factors(ds: &Dataset, threshold: f64) -> Result<RepeatFactors, RfsError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RfsError::Threshold(threshold));
    }
    let n_images = ds.images().len();
    if n_images == 0 {
        return Err(RfsError::EmptyDataset);
    }
    let per_category: BTreeMap<u64, f64> = ds
        .count_images_per_category()
        .into_iter()
        .map(|(c, n)| {
            (
                c,
                category_repeat_factor(threshold, n as f64 / n_images as f64),
            )
        })
        .collect();
    let mut per_image_max: BTreeMap<u64, f64> = BTreeMap::new();
    for a in ds.annotations() {
        let r = per_category[&a.category_id];
        let slot = per_image_max.entry(a.image_id).or_insert(1.0);
        *slot = slot.max(r);
    }
    let per_image = ds
        .images()
        .iter()
        .map(|im| (im.id, per_image_max.get(&im.id).copied().unwrap_or(1.0)))
        .collect();
    Ok(RepeatFactors {
        threshold,
        per_category,
        per_image,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub seed: u64,
    pub epoch: u64,
    pub entries: Vec<u64>,
}

impl EpochSchedule {
    pub fn multiplicity(&self, image_id: u64) -> usize {
        self.entries.iter().filter(|&&id| id == image_id).count()
    }
}

/// Stochastically rounded, shuffled schedule for one epoch.
///
/// The generator is derived from `(seed, epoch)` alone, so any epoch can be
/// regenerated independently.
pub fn build_epoch_schedule(rf: &RepeatFactors, epoch: u64, seed: u64) -> EpochSchedule {
    let mut rng = seed::rng(seed, epoch);
    let mut entries = Vec::with_capacity(rf.expected_len().ceil() as usize + 1);
    for &(id, r) in &rf.per_image {
        let whole = r.floor();
        let mut copies = whole as usize;
        if rng.random::<f64>() < r - whole {
            copies += 1;
        }
        entries.extend(std::iter::repeat_n(id, copies));
    }
    entries.shuffle(&mut rng);
    EpochSchedule {
        seed,
        epoch,
        entries,
    }
}

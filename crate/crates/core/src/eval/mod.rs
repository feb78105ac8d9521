//! COCO-style mask and boundary AP over LVIS frequency buckets, detection
//! caps, and mask-quality rescoring.

mod ap;
mod caps;
mod iou;

pub use ap::{evaluate, EvalReport};
pub use caps::{apply_caps, calibration_oracle, canonical_order, rescore};
pub use iou::{boundary_band, boundary_iou, boundary_width, mask_boundary, mask_iou};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anno::{AnnoError, Dataset, RleMask};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Anno(#[from] AnnoError),
}

/// One predicted instance; serialized as a results-file entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    #[serde(rename = "segmentation")]
    pub mask: RleMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_pred: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MaskIou,
    BoundaryIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub metric: MetricKind,
    /// Boundary band width as a fraction of the image diagonal.
    pub boundary_dilation_frac: f64,
    pub max_per_img: usize,
    pub fixed_ap: bool,
    /// Per-category cap over the whole dataset, applied when `fixed_ap`.
    pub max_per_class_dataset: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect(),
            metric: MetricKind::MaskIou,
            boundary_dilation_frac: 0.02,
            max_per_img: 300,
            fixed_ap: false,
            max_per_class_dataset: 10_000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Config("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(EvalError::Config(
                "IoU thresholds must lie in (0, 1]".into(),
            ));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvalError::Config(
                "IoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.max_per_img == 0 || self.max_per_class_dataset == 0 {
            return Err(EvalError::Config("caps must be at least 1".into()));
        }
        if !(self.boundary_dilation_frac > 0.0 && self.boundary_dilation_frac.is_finite()) {
            return Err(EvalError::Config(
                "boundary dilation fraction must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Parses a results JSON array.
pub fn parse_results(json_text: &str) -> Result<Vec<Detection>, EvalError> {
    let dets: Vec<Detection> =
        serde_json::from_str(json_text).map_err(|e| AnnoError::json(json_text, &e))?;
    for (i, d) in dets.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::Validation(format!(
                "detection {i}: score {} outside [0, 1]",
                d.score
            )));
        }
        if let Some(p) = d.iou_pred {
            if !(0.0..=1.0).contains(&p) {
                return Err(EvalError::Validation(format!(
                    "detection {i}: iou_pred {p} outside [0, 1]"
                )));
            }
        }
    }
    Ok(dets)
}

pub fn serialize_results(dets: &[Detection]) -> String {
    serde_json::to_string(dets).expect("results serialization is infallible")
}

/// Checks that every detection names a known image and category, carries a
/// finite score, and has a mask at its image's extent.
pub fn validate_detections(gt: &Dataset, dets: &[Detection]) -> Result<(), EvalError> {
    for d in dets {
        let im = gt.image(d.image_id).ok_or_else(|| {
            EvalError::Validation(format!(
                "detection references missing image id {}",
                d.image_id
            ))
        })?;
        if gt.category(d.category_id).is_none() {
            return Err(EvalError::Validation(format!(
                "detection references missing category id {}",
                d.category_id
            )));
        }
        if !d.score.is_finite() {
            return Err(EvalError::Validation(format!(
                "non-finite score on image {}",
                d.image_id
            )));
        }
        if d.mask.height() != im.height as usize || d.mask.width() != im.width as usize {
            return Err(EvalError::Validation(format!(
                "detection mask {}x{} does not match image {} extent {}x{}",
                d.mask.height(),
                d.mask.width(),
                im.id,
                im.height,
                im.width
            )));
        }
    }
    Ok(())
}

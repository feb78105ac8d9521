use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Detection, EvalConfig, EvalError};
use crate::anno::{Dataset, RleMask};

/// Total order used wherever detections are ranked: score descending, then
/// image, category, mask runs and predicted IoU. Ranking therefore never
/// depends on input order.
pub fn canonical_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then(a.category_id.cmp(&b.category_id))
        .then_with(|| a.mask.counts().cmp(b.mask.counts()))
        .then_with(|| {
            let pa = a.iou_pred.unwrap_or(-1.0);
            let pb = b.iou_pred.unwrap_or(-1.0);
            pa.total_cmp(&pb)
        })
}

/// Keeps the top `max_per_img` detections of every image; with `fixed_ap`,
/// then keeps the top `max_per_class_dataset` of every category over the
/// whole dataset. Output is in canonical rank order.
pub fn apply_caps(dets: &[Detection], cfg: &EvalConfig) -> Vec<Detection> {
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| canonical_order(a, b));
    let mut per_image: HashMap<u64, usize> = HashMap::new();
    let mut per_class: HashMap<u64, usize> = HashMap::new();
    ranked
        .into_iter()
        .filter(|d| {
            let n = per_image.entry(d.image_id).or_insert(0);
            *n += 1;
            *n <= cfg.max_per_img
        })
        .filter(|d| {
            if !cfg.fixed_ap {
                return true;
            }
            let n = per_class.entry(d.category_id).or_insert(0);
            *n += 1;
            *n <= cfg.max_per_class_dataset
        })
        .cloned()
        .collect()
}

/// Multiplies each score by its predicted mask IoU.
pub fn rescore(dets: &[Detection]) -> Result<Vec<Detection>, EvalError> {
    dets.iter()
        .enumerate()
        .map(|(i, d)| {
            let iou = d
                .iou_pred
                .ok_or_else(|| EvalError::Validation(format!("detection {i} has no iou_pred")))?;
            Ok(Detection {
                score: d.score * iou,
                ..d.clone()
            })
        })
        .collect()
}

/// True mask IoU of each detection against its best same-category ground
/// truth in the same image (0 when there is none).
pub fn calibration_oracle(dets: &[Detection], gt: &Dataset) -> Result<Vec<f64>, EvalError> {
    let mut gt_masks: HashMap<(u64, u64), Vec<RleMask>> = HashMap::new();
    for a in gt.annotations() {
        let im = gt.image(a.image_id).expect("validated reference");
        let rle = a
            .segmentation
            .to_rle(im.height as usize, im.width as usize)?;
        gt_masks
            .entry((a.image_id, a.category_id))
            .or_default()
            .push(rle);
    }
    dets.iter()
        .map(|d| {
            let Some(masks) = gt_masks.get(&(d.image_id, d.category_id)) else {
                return Ok(0.0);
            };
            let mut best = 0.0f64;
            for g in masks {
                best = best.max(d.mask.iou(g)?);
            }
            Ok(best)
        })
        .collect()
}

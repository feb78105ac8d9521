use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::iou::boundary_band;
use super::{apply_caps, validate_detections, Detection, EvalConfig, EvalError, MetricKind};
use crate::anno::{Bucket, Dataset, RleMask};

const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    /// `None` when no evaluated category falls in the bucket.
    #[serde(rename = "APr")]
    pub ap_r: Option<f64>,
    #[serde(rename = "APc")]
    pub ap_c: Option<f64>,
    #[serde(rename = "APf")]
    pub ap_f: Option<f64>,
    pub per_category_ap: BTreeMap<u64, f64>,
    /// Detections left after caps.
    pub num_detections: usize,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn bucket_ap(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Rare => self.ap_r,
            Bucket::Common => self.ap_c,
            Bucket::Frequent => self.ap_f,
        }
    }
}

/// Recall sample points `0, 0.01, ..., 1`, spaced as `i * 0.01` with the
/// last point pinned to 1.
fn recall_points() -> [f64; RECALL_POINTS] {
    let step = 1.0 / (RECALL_POINTS - 1) as f64;
    let mut pts = [0.0; RECALL_POINTS];
    for (i, p) in pts.iter_mut().enumerate() {
        *p = i as f64 * step;
    }
    pts[RECALL_POINTS - 1] = 1.0;
    pts
}

/// Interpolated precision averaged over the recall points, for detections
/// already in rank order.
fn average_precision(is_tp: &[bool], num_gt: usize) -> f64 {
    let n = is_tp.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in is_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..n).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for r in recall_points() {
        let idx = recall.partition_point(|&x| x < r);
        if idx < n {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Greedy matching in rank order: each detection takes the unmatched ground
/// truth of highest IoU (lowest index on ties) if that IoU reaches the
/// threshold.
fn match_detections(ious: &[Vec<f64>], num_gt: usize, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; num_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if taken[g] || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

struct RankedHit {
    /// Position of the detection in global rank order.
    rank: usize,
    /// Match outcome per IoU threshold.
    hits: Vec<bool>,
}

/// COCO-style AP of `dets` against `gt`.
///
/// Detections are capped, ranked in canonical order and matched per
/// (image, category) at every IoU threshold. Per-category AP averages
/// interpolated precision over 101 recall points and the thresholds; AP is the
/// mean over categories that have ground truth and bucket APs are means over
/// those categories' buckets. All values are percentages.
pub fn evaluate(
    gt: &Dataset,
    dets: &[Detection],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    validate_detections(gt, dets)?;
    let kept = apply_caps(dets, cfg);

    let mut gt_groups: BTreeMap<(u64, u64), Vec<(u64, usize)>> = BTreeMap::new();
    for (i, a) in gt.annotations().iter().enumerate() {
        gt_groups
            .entry((a.image_id, a.category_id))
            .or_default()
            .push((a.id, i));
    }
    for v in gt_groups.values_mut() {
        v.sort_unstable();
    }
    let evaluated: BTreeSet<u64> = gt_groups.keys().map(|&(_, c)| c).collect();

    let mut det_groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (rank, d) in kept.iter().enumerate() {
        if evaluated.contains(&d.category_id) {
            det_groups
                .entry((d.image_id, d.category_id))
                .or_default()
                .push(rank);
        }
    }

    let metric_mask = |m: &RleMask| -> RleMask {
        match cfg.metric {
            MetricKind::MaskIou => m.clone(),
            MetricKind::BoundaryIou => boundary_band(m, cfg.boundary_dilation_frac),
        }
    };

    let groups: Vec<((u64, u64), &Vec<usize>)> = det_groups.iter().map(|(k, v)| (*k, v)).collect();
    let matched: Vec<(u64, Vec<RankedHit>)> = groups
        .par_iter()
        .map(
            |&((image_id, category_id), ranks)| -> Result<_, EvalError> {
                let im = gt.image(image_id).expect("validated");
                let (h, w) = (im.height as usize, im.width as usize);
                let gts: Vec<RleMask> = match gt_groups.get(&(image_id, category_id)) {
                    Some(list) => list
                        .iter()
                        .map(|&(_, i)| {
                            Ok(metric_mask(&gt.annotations()[i].segmentation.to_rle(h, w)?))
                        })
                        .collect::<Result<_, EvalError>>()?,
                    None => Vec::new(),
                };
                let ious: Vec<Vec<f64>> = ranks
                    .iter()
                    .map(|&r| {
                        let dm = metric_mask(&kept[r].mask);
                        gts.iter().map(|g| dm.iou(g)).collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<_, _>>()?;
                let per_threshold: Vec<Vec<bool>> = cfg
                    .iou_thresholds
                    .iter()
                    .map(|&t| match_detections(&ious, gts.len(), t))
                    .collect();
                let hits = ranks
                    .iter()
                    .enumerate()
                    .map(|(k, &rank)| RankedHit {
                        rank,
                        hits: per_threshold.iter().map(|m| m[k]).collect(),
                    })
                    .collect();
                Ok((category_id, hits))
            },
        )
        .collect::<Result<_, _>>()?;

    let mut by_category: BTreeMap<u64, Vec<RankedHit>> = BTreeMap::new();
    for (c, hits) in matched {
        by_category.entry(c).or_default().extend(hits);
    }
    let mut num_gt: BTreeMap<u64, usize> = BTreeMap::new();
    for (&(_, c), list) in &gt_groups {
        *num_gt.entry(c).or_insert(0) += list.len();
    }

    let mut per_category_ap = BTreeMap::new();
    for &c in &evaluated {
        let mut hits = by_category.remove(&c).unwrap_or_default();
        hits.sort_unstable_by_key(|h| h.rank);
        let n_gt = num_gt[&c];
        let mut sum = 0.0;
        for t in 0..cfg.iou_thresholds.len() {
            let column: Vec<bool> = hits.iter().map(|h| h.hits[t]).collect();
            sum += average_precision(&column, n_gt);
        }
        per_category_ap.insert(c, 100.0 * (sum / cfg.iou_thresholds.len() as f64));
    }

    let mean = |values: &[f64]| -> Option<f64> {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let all: Vec<f64> = per_category_ap.values().copied().collect();
    let bucket_mean = |bucket: Bucket| {
        let vals: Vec<f64> = per_category_ap
            .iter()
            .filter(|(c, _)| gt.category(**c).map(|r| r.bucket) == Some(bucket))
            .map(|(_, &v)| v)
            .collect();
        mean(&vals)
    };
    Ok(EvalReport {
        ap: mean(&all).unwrap_or(0.0),
        ap_r: bucket_mean(Bucket::Rare),
        ap_c: bucket_mean(Bucket::Common),
        ap_f: bucket_mean(Bucket::Frequent),
        per_category_ap,
        num_detections: kept.len(),
        config: cfg.clone(),
    })
}

//! Multi-view test-time augmentation: map per-view detections back to the
//! original image and fuse them.
//!
//! Masks are resampled nearest-neighbor: output pixel `x` samples source
//! column `floor((x + 0.5) * src_w / dst_w)` (rows likewise). Fusion is
//! per-(image, category) greedy NMS on mask bounding boxes, optionally
//! replacing each survivor's mask by a score-weighted pixel vote over the
//! detections it suppressed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anno::{AnnoError, BinaryMask, RleMask};
use crate::eval::{canonical_order, Detection};

#[derive(Debug, Error)]
pub enum TtaError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Anno(#[from] AnnoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TtaView {
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub hflip: bool,
}

impl TtaView {
    pub fn new(width: u32, height: u32, hflip: bool) -> Result<Self, TtaError> {
        if width == 0 || height == 0 {
            return Err(TtaError::Config(format!(
                "view {width}x{height} has an empty extent"
            )));
        }
        Ok(Self {
            width,
            height,
            hflip,
        })
    }

    /// The four test resolutions, each with and without horizontal flip.
    pub fn default_views() -> Vec<TtaView> {
        [(1600, 1000), (1600, 1400), (1800, 1200), (1800, 1600)]
            .into_iter()
            .flat_map(|(w, h)| {
                [false, true].map(|hflip| TtaView {
                    width: w,
                    height: h,
                    hflip,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseConfig {
    pub nms_iou: f64,
    pub mask_vote: bool,
    pub vote_iou: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.6,
            mask_vote: false,
            vote_iou: 0.5,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<(), TtaError> {
        for (name, v) in [("nms_iou", self.nms_iou), ("vote_iou", self.vote_iou)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(TtaError::Config(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn transform(
    det: &Detection,
    from: (usize, usize),
    to: (usize, usize),
    flip_first: bool,
    flip_last: bool,
) -> Result<Detection, TtaError> {
    let (fw, fh) = from;
    if det.mask.width() != fw || det.mask.height() != fh {
        return Err(TtaError::Shape(format!(
            "mask {}x{} (w x h) does not match {}x{}",
            det.mask.width(),
            det.mask.height(),
            fw,
            fh
        )));
    }
    let mut m = det.mask.decode();
    if flip_first {
        m = m.flip_horizontal();
    }
    if (fw, fh) != to {
        m = m.resize_nearest(to.1, to.0);
    }
    if flip_last {
        m = m.flip_horizontal();
    }
    Ok(Detection {
        mask: RleMask::encode(&m),
        ..det.clone()
    })
}

/// Maps detections made on `view` back to an image of size `orig = (w, h)`:
/// undo the flip, then resize.
pub fn unmap(
    dets: &[Detection],
    view: TtaView,
    orig: (u32, u32),
) -> Result<Vec<Detection>, TtaError> {
    let from = (view.width as usize, view.height as usize);
    let to = (orig.0 as usize, orig.1 as usize);
    dets.iter()
        .map(|d| transform(d, from, to, view.hflip, false))
        .collect()
}

/// Inverse of [`unmap`]: resize original-resolution detections to `view`,
/// then flip.
pub fn map_to_view(
    dets: &[Detection],
    view: TtaView,
    orig: (u32, u32),
) -> Result<Vec<Detection>, TtaError> {
    let from = (orig.0 as usize, orig.1 as usize);
    let to = (view.width as usize, view.height as usize);
    dets.iter()
        .map(|d| transform(d, from, to, false, view.hflip))
        .collect()
}

/// Box IoU of two `(x, y, w, h)` boxes.
pub fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn vote(keeper: &Detection, members: &[&Detection]) -> Result<RleMask, TtaError> {
    let (h, w) = (keeper.mask.height(), keeper.mask.width());
    let mut acc = vec![0.0f64; h * w];
    let mut total = 0.0f64;
    for d in members {
        total += d.score;
        let m = d.mask.decode();
        for (a, &bit) in acc.iter_mut().zip(m.bits()) {
            if bit {
                *a += d.score;
            }
        }
    }
    if total <= 0.0 {
        return Ok(keeper.mask.clone());
    }
    let bits = acc.into_iter().map(|v| v / total >= 0.5).collect();
    Ok(RleMask::encode(&BinaryMask::from_bits(h, w, bits)?))
}

fn fuse_group(mut group: Vec<&Detection>, cfg: &FuseConfig) -> Result<Vec<Detection>, TtaError> {
    group.sort_by(|a, b| canonical_order(a, b));
    let boxes: Vec<Option<[f64; 4]>> = group.iter().map(|d| d.mask.bbox()).collect();
    let mut suppressed = vec![false; group.len()];
    let mut out = Vec::new();
    for i in 0..group.len() {
        if suppressed[i] {
            continue;
        }
        let mut members = vec![group[i]];
        for j in i + 1..group.len() {
            if suppressed[j] {
                continue;
            }
            let overlap = match (boxes[i], boxes[j]) {
                (Some(a), Some(b)) => box_iou(a, b),
                _ => 0.0,
            };
            if overlap > cfg.nms_iou {
                suppressed[j] = true;
                if cfg.mask_vote && group[i].mask.iou(&group[j].mask)? >= cfg.vote_iou {
                    members.push(group[j]);
                }
            }
        }
        let mut kept = group[i].clone();
        if cfg.mask_vote && members.len() > 1 {
            kept.mask = vote(group[i], &members)?;
        }
        out.push(kept);
    }
    Ok(out)
}

/// Concatenates per-view detection sets (already in original coordinates)
/// and suppresses duplicates per (image, category).
pub fn fuse(det_sets: &[Vec<Detection>], cfg: &FuseConfig) -> Result<Vec<Detection>, TtaError> {
    cfg.validate()?;
    let mut extents: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let mut groups: BTreeMap<(u64, u64), Vec<&Detection>> = BTreeMap::new();
    for d in det_sets.iter().flatten() {
        let ext = (d.mask.height(), d.mask.width());
        if let Some(&prev) = extents.get(&d.image_id) {
            if prev != ext {
                return Err(TtaError::Validation(format!(
                    "image {} has masks of extents {}x{} and {}x{}",
                    d.image_id, prev.0, prev.1, ext.0, ext.1
                )));
            }
        } else {
            extents.insert(d.image_id, ext);
        }
        groups
            .entry((d.image_id, d.category_id))
            .or_default()
            .push(d);
    }
    let fused: Vec<Vec<Detection>> = groups
        .into_par_iter()
        .map(|(_, group)| fuse_group(group, cfg))
        .collect::<Result<_, _>>()?;
    let mut out: Vec<Detection> = fused.into_iter().flatten().collect();
    out.sort_by(canonical_order);
    Ok(out)
}

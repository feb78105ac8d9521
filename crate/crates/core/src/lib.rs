//! Toolkit for long-tailed instance segmentation data and evaluation.
//!
//! - [`anno`]: LVIS/COCO annotation model, RLE codec, polygon rasterization,
//!   category frequency buckets.
//! - [`rfs`]: repeat-factor sampling and per-epoch schedules.
//! - [`compositor`]: bucket-balanced copy-paste and four-image mosaic.
//! - [`seesaw`]: Seesaw classification loss and its gradient.
//! - [`ema`]: parameter EMA, flat checkpoints, early-stop epoch selection.
//! - [`eval`]: mask/boundary AP with per-image and per-class caps, mask rescoring.
//! - [`tta`]: mapping multi-view detections back and fusing them.
//! - [`fixture`]: seeded synthetic long-tail datasets.

pub mod anno;
pub mod compositor;
pub mod ema;
pub mod eval;
pub mod fixture;
pub mod rfs;
pub mod seed;
pub mod seesaw;
pub mod tta;

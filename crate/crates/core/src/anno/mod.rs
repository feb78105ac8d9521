//! LVIS-format annotation model, mask codecs, rasterization and category
//! frequency statistics.

mod dataset;
mod mask;
pub mod raster;
mod rle;
mod stats;

pub use dataset::{
    parse_dataset, serialize_dataset, AnnotationRecord, Bucket, CategoryRecord, Dataset,
    ImageRecord, Segmentation,
};
pub use mask::{nearest_source_index, BinaryMask};
pub use raster::polygons_to_mask;
pub use rle::RleMask;
pub use stats::{category_stats, BucketFractions, CategoryStats, DatasetStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnoError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl AnnoError {
    /// Wraps a serde_json error, converting its line/column to a byte offset
    /// into `text`.
    pub fn json(text: &str, err: &serde_json::Error) -> Self {
        let offset = if err.line() == 0 {
            0
        } else {
            let line_start: usize = text
                .split_inclusive('\n')
                .take(err.line() - 1)
                .map(str::len)
                .sum();
            (line_start + err.column().saturating_sub(1)).min(text.len())
        };
        AnnoError::Json {
            offset,
            message: err.to_string(),
        }
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    RleMask::encode(mask)
}

pub fn rle_decode(rle: &RleMask) -> BinaryMask {
    rle.decode()
}

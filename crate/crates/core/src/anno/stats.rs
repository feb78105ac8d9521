use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Bucket, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category_id: u64,
    pub instance_count: u64,
    pub image_count: u64,
    pub bucket: Bucket,
}

/// Shares of a total per bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketFractions {
    pub rare: f64,
    pub common: f64,
    pub frequent: f64,
}

impl BucketFractions {
    /// `counts[b] / total` per bucket; all zero when the total is zero.
    pub fn from_counts(counts: [u64; 3]) -> Self {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Self::default();
        }
        let t = total as f64;
        Self {
            rare: counts[0] as f64 / t,
            common: counts[1] as f64 / t,
            frequent: counts[2] as f64 / t,
        }
    }

    pub fn get(&self, bucket: Bucket) -> f64 {
        match bucket {
            Bucket::Rare => self.rare,
            Bucket::Common => self.common,
            Bucket::Frequent => self.frequent,
        }
    }

    pub fn sum(&self) -> f64 {
        self.rare + self.common + self.frequent
    }
}

fn bucket_slot(b: Bucket) -> usize {
    match b {
        Bucket::Rare => 0,
        Bucket::Common => 1,
        Bucket::Frequent => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub categories: Vec<CategoryStats>,
    pub category_counts: [u64; 3],
    pub instance_counts: [u64; 3],
    /// Share of categories in each bucket.
    pub category_fractions: BucketFractions,
    /// Share of annotated instances whose category falls in each bucket.
    pub instance_fractions: BucketFractions,
}

/// Per-category instance/image counts and bucket shares.
///
/// Image counts and buckets are the category records' (which the parser
/// fills from the file or recomputes from the annotations).
pub fn category_stats(ds: &Dataset) -> DatasetStats {
    let mut instances: HashMap<u64, u64> = HashMap::new();
    for a in ds.annotations() {
        *instances.entry(a.category_id).or_insert(0) += 1;
    }
    let mut category_counts = [0u64; 3];
    let mut instance_counts = [0u64; 3];
    let categories = ds
        .categories()
        .iter()
        .map(|c| {
            let n = instances.get(&c.id).copied().unwrap_or(0);
            category_counts[bucket_slot(c.bucket)] += 1;
            instance_counts[bucket_slot(c.bucket)] += n;
            CategoryStats {
                category_id: c.id,
                instance_count: n,
                image_count: c.image_count,
                bucket: c.bucket,
            }
        })
        .collect();
    DatasetStats {
        categories,
        category_counts,
        instance_counts,
        category_fractions: BucketFractions::from_counts(category_counts),
        instance_fractions: BucketFractions::from_counts(instance_counts),
    }
}

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raster::{self, Point};
use super::{AnnoError, BinaryMask, RleMask};

/// LVIS frequency bucket, derived from a category's training-image count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "r")]
    Rare,
    #[serde(rename = "c")]
    Common,
    #[serde(rename = "f")]
    Frequent,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Rare, Bucket::Common, Bucket::Frequent];

    /// rare: at most 10 images, common: 11..=100, frequent: more than 100.
    /// Categories with no images at all are counted as rare.
    pub fn from_image_count(image_count: u64) -> Self {
        match image_count {
            0..=10 => Bucket::Rare,
            11..=100 => Bucket::Common,
            _ => Bucket::Frequent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Rare => "rare",
            Bucket::Common => "common",
            Bucket::Frequent => "frequent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRecord {
    pub id: u64,
    pub name: String,
    pub image_count: u64,
    pub bucket: Bucket,
}

impl CategoryRecord {
    pub fn new(id: u64, name: impl Into<String>, image_count: u64) -> Self {
        Self {
            id,
            name: name.into(),
            image_count,
            bucket: Bucket::from_image_count(image_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    /// COCO flat polygons, `[[x0, y0, x1, y1, ...], ...]`.
    Polygons(Vec<Vec<f64>>),
    Rle(RleMask),
}

impl Segmentation {
    fn polygon_points(polys: &[Vec<f64>]) -> Result<Vec<Vec<Point>>, AnnoError> {
        polys.iter().map(|p| raster::points_from_flat(p)).collect()
    }

    /// Decodes to a dense mask at the given image extent.
    pub fn to_mask(&self, height: usize, width: usize) -> Result<BinaryMask, AnnoError> {
        match self {
            Segmentation::Polygons(polys) => {
                raster::polygons_to_mask(&Self::polygon_points(polys)?, height, width)
            }
            Segmentation::Rle(rle) => {
                if rle.height() != height || rle.width() != width {
                    return Err(AnnoError::Validation(format!(
                        "RLE size {}x{} does not match image {height}x{width}",
                        rle.height(),
                        rle.width()
                    )));
                }
                Ok(rle.decode())
            }
        }
    }

    pub fn to_rle(&self, height: usize, width: usize) -> Result<RleMask, AnnoError> {
        match self {
            Segmentation::Rle(rle) => {
                self.to_mask(height, width)?;
                Ok(rle.clone())
            }
            Segmentation::Polygons(_) => Ok(RleMask::encode(&self.to_mask(height, width)?)),
        }
    }

    /// Foreground pixel count and tight bbox without materializing a mask.
    fn area_and_bbox(
        &self,
        height: usize,
        width: usize,
    ) -> Result<(u64, Option<[f64; 4]>), AnnoError> {
        match self {
            Segmentation::Polygons(polys) => {
                let spans = raster::polygon_spans(&Self::polygon_points(polys)?, height, width)?;
                Ok((raster::spans_area(&spans), raster::spans_bbox(&spans)))
            }
            Segmentation::Rle(rle) => {
                if rle.height() != height || rle.width() != width {
                    return Err(AnnoError::Validation(format!(
                        "RLE size {}x{} does not match image {height}x{width}",
                        rle.height(),
                        rle.width()
                    )));
                }
                Ok((rle.area(), rle.bbox()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    pub bbox: [f64; 4],
    pub area: f64,
}

/// Images, categories and annotations with all cross-references checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    categories: Vec<CategoryRecord>,
    annotations: Vec<AnnotationRecord>,
    image_index: HashMap<u64, usize>,
    category_index: HashMap<u64, usize>,
}

impl Dataset {
    /// Validates ids and references and normalizes every annotation's area
    /// against its decoded mask. A bbox with zero width or height is replaced
    /// by the mask's bbox.
    pub fn new(
        images: Vec<ImageRecord>,
        categories: Vec<CategoryRecord>,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<Self, AnnoError> {
        let mut ds = Self::index(images, categories, annotations)?;
        ds.normalize_annotations(|_, a| a.bbox[2] <= 0.0 || a.bbox[3] <= 0.0)?;
        Ok(ds)
    }

    fn index(
        images: Vec<ImageRecord>,
        categories: Vec<CategoryRecord>,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<Self, AnnoError> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, im) in images.iter().enumerate() {
            if im.width == 0 || im.height == 0 {
                return Err(AnnoError::Validation(format!(
                    "image {} has empty extent {}x{}",
                    im.id, im.width, im.height
                )));
            }
            if image_index.insert(im.id, i).is_some() {
                return Err(AnnoError::Validation(format!(
                    "duplicate image id {}",
                    im.id
                )));
            }
        }
        let mut category_index = HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            if category_index.insert(c.id, i).is_some() {
                return Err(AnnoError::Validation(format!(
                    "duplicate category id {}",
                    c.id
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &annotations {
            if !seen.insert(a.id) {
                return Err(AnnoError::Validation(format!(
                    "duplicate annotation id {}",
                    a.id
                )));
            }
            if !image_index.contains_key(&a.image_id) {
                return Err(AnnoError::Validation(format!(
                    "annotation {} references missing image id {}",
                    a.id, a.image_id
                )));
            }
            if !category_index.contains_key(&a.category_id) {
                return Err(AnnoError::Validation(format!(
                    "annotation {} references missing category id {}",
                    a.id, a.category_id
                )));
            }
        }
        Ok(Self {
            images,
            categories,
            annotations,
            image_index,
            category_index,
        })
    }

    fn normalize_annotations(
        &mut self,
        missing_bbox: impl Fn(usize, &AnnotationRecord) -> bool + Sync,
    ) -> Result<(), AnnoError> {
        let images = &self.images;
        let index = &self.image_index;
        self.annotations
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, a)| {
                let im = &images[index[&a.image_id]];
                let (area, bbox) = a
                    .segmentation
                    .area_and_bbox(im.height as usize, im.width as usize)
                    .map_err(|e| AnnoError::Validation(format!("annotation {}: {e}", a.id)))?;
                let tolerance = match a.segmentation {
                    Segmentation::Polygons(_) => 1.0,
                    Segmentation::Rle(_) => 0.0,
                };
                if !a.area.is_finite() || (a.area - area as f64).abs() > tolerance {
                    a.area = area as f64;
                }
                if missing_bbox(i, a) {
                    a.bbox = bbox.unwrap_or([0.0; 4]);
                }
                Ok(())
            })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn categories(&self) -> &[CategoryRecord] {
        &self.categories
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: u64) -> Option<&CategoryRecord> {
        self.category_index.get(&id).map(|&i| &self.categories[i])
    }

    /// Annotation indices grouped by image id, in annotation order.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, a) in self.annotations.iter().enumerate() {
            map.entry(a.image_id).or_default().push(i);
        }
        map
    }

    /// Decoded mask of one annotation at its image's extent.
    pub fn annotation_mask(&self, ann: &AnnotationRecord) -> Result<BinaryMask, AnnoError> {
        let im = self
            .image(ann.image_id)
            .ok_or_else(|| AnnoError::Validation(format!("missing image id {}", ann.image_id)))?;
        ann.segmentation
            .to_mask(im.height as usize, im.width as usize)
    }

    /// Distinct images per category, counted from the annotations.
    pub fn count_images_per_category(&self) -> HashMap<u64, u64> {
        let mut pairs: BTreeSet<(u64, u64)> = BTreeSet::new();
        for a in &self.annotations {
            pairs.insert((a.category_id, a.image_id));
        }
        let mut counts = HashMap::new();
        for (c, _) in pairs {
            *counts.entry(c).or_insert(0u64) += 1;
        }
        counts
    }
}

#[derive(Deserialize)]
struct RawDataset {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    categories: Vec<RawCategory>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    coco_url: Option<String>,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u64,
    #[serde(default)]
    name: String,
    #[serde(default)]
    image_count: Option<u64>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: Segmentation,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    area: Option<f64>,
}

#[derive(Serialize)]
struct WireDataset<'a> {
    images: &'a [ImageRecord],
    categories: Vec<WireCategory<'a>>,
    annotations: &'a [AnnotationRecord],
}

#[derive(Serialize)]
struct WireCategory<'a> {
    id: u64,
    name: &'a str,
    image_count: u64,
    frequency: Bucket,
}

/// Parses LVIS/COCO-structured annotation JSON.
///
/// Missing `image_count`s are recomputed from the annotations (all of them,
/// if any category lacks one), buckets are assigned from the counts, and
/// each annotation's area is checked against its decoded mask.
pub fn parse_dataset(json_text: &str) -> Result<Dataset, AnnoError> {
    let raw: RawDataset =
        serde_json::from_str(json_text).map_err(|e| AnnoError::json(json_text, &e))?;
    let images = raw
        .images
        .into_iter()
        .map(|im| ImageRecord {
            id: im.id,
            width: im.width,
            height: im.height,
            file_name: im
                .file_name
                .or_else(|| {
                    im.coco_url
                        .as_deref()
                        .and_then(|u| u.rsplit('/').next())
                        .map(str::to_owned)
                })
                .unwrap_or_default(),
        })
        .collect();

    let recount = raw.categories.iter().any(|c| c.image_count.is_none());
    let mut missing_bbox = Vec::with_capacity(raw.annotations.len());
    let annotations: Vec<AnnotationRecord> = raw
        .annotations
        .into_iter()
        .map(|a| {
            missing_bbox.push(a.bbox.is_none());
            AnnotationRecord {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                segmentation: a.segmentation,
                bbox: a.bbox.unwrap_or([0.0; 4]),
                area: a.area.unwrap_or(f64::NAN),
            }
        })
        .collect();
    let placeholder: Vec<CategoryRecord> = raw
        .categories
        .iter()
        .map(|c| CategoryRecord::new(c.id, c.name.clone(), c.image_count.unwrap_or(0)))
        .collect();
    let mut ds = Dataset::index(images, placeholder, annotations)?;
    if recount {
        let counts = ds.count_images_per_category();
        for (cat, raw_cat) in ds.categories.iter_mut().zip(&raw.categories) {
            let n = raw_cat
                .image_count
                .unwrap_or_else(|| counts.get(&cat.id).copied().unwrap_or(0));
            *cat = CategoryRecord::new(cat.id, std::mem::take(&mut cat.name), n);
        }
    }
    ds.normalize_annotations(|i, _| missing_bbox[i])?;
    Ok(ds)
}

/// Writes the retained fields as LVIS-style JSON.
pub fn serialize_dataset(ds: &Dataset) -> String {
    let wire = WireDataset {
        images: &ds.images,
        categories: ds
            .categories
            .iter()
            .map(|c| WireCategory {
                id: c.id,
                name: &c.name,
                image_count: c.image_count,
                frequency: c.bucket,
            })
            .collect(),
        annotations: &ds.annotations,
    };
    serde_json::to_string(&wire).expect("dataset serialization is infallible")
}

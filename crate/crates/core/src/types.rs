use std::fmt;
use std::path::PathBuf;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Pool an image was drawn from when assembling a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourcePool {
    #[serde(rename = "DUTS-TR")]
    DutsTr,
    #[serde(rename = "COCO")]
    Coco,
    #[serde(rename = "OpenImages")]
    OpenImages,
    #[serde(rename = "VOC2012")]
    Voc2012,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl SourcePool {
    pub const ALL: [SourcePool; 5] = [
        SourcePool::DutsTr,
        SourcePool::Coco,
        SourcePool::OpenImages,
        SourcePool::Voc2012,
        SourcePool::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourcePool::DutsTr => "DUTS-TR",
            SourcePool::Coco => "COCO",
            SourcePool::OpenImages => "OpenImages",
            SourcePool::Voc2012 => "VOC2012",
            SourcePool::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SourcePool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourcePool {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        SourcePool::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CoreError::Invalid(format!("unknown source pool `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Two-level category label: a parent class and a finer subcategory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub parent_category: String,
    pub subcategory: String,
}

impl Category {
    pub fn new(parent: impl Into<String>, sub: impl Into<String>) -> Self {
        Category {
            parent_category: parent.into(),
            subcategory: sub.into(),
        }
    }
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub source_pool: SourcePool,
    pub split: Split,
    #[serde(default)]
    pub categories: Vec<Category>,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(CoreError::Invalid("empty image_id".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::Invalid(format!(
                "image `{}` has zero dimension {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Row-major grid of {0,1} values, `(height, width)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask(Array2<u8>);

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask(Array2::zeros((height, width)))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask(Array2::ones((height, width)))
    }

    pub fn from_array(values: Array2<u8>) -> Result<Self> {
        if let Some(((row, col), &value)) = values.indexed_iter().find(|(_, &v)| v > 1) {
            return Err(CoreError::NotBinary { row, col, value });
        }
        Ok(BinaryMask(values))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        BinaryMask(Array2::from_shape_fn((height, width), |(r, c)| f(r, c) as u8))
    }

    /// `true` pixels are those strictly above `threshold`.
    pub fn from_threshold(values: ArrayView2<f64>, threshold: f64) -> Self {
        BinaryMask(values.mapv(|v| (v > threshold) as u8))
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[(row, col)] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.0[(row, col)] = value as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<u8> {
        &self.0
    }

    pub fn into_array(self) -> Array2<u8> {
        self.0
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.0.mapv(f64::from)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        let mut out = self.0.clone();
        Zip::from(&mut out).and(&other.0).for_each(|a, &b| *a |= b);
        Ok(BinaryMask(out))
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask(self.0.mapv(|v| 1 - v))
    }

    /// Horizontal mirror (columns reversed).
    pub fn flip_horizontal(&self) -> BinaryMask {
        let mut out = self.0.clone();
        out.invert_axis(ndarray::Axis(1));
        BinaryMask(out.as_standard_layout().to_owned())
    }

    pub fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }
}

/// Real-valued saliency prediction with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap(Array2<f64>);

impl SaliencyMap {
    /// Rejects (never clamps) values outside `[0, 1]`, including NaN.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((row, col), &value)) = values.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::OutOfRange { row, col, value });
        }
        Ok(SaliencyMap(values))
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        SaliencyMap::new(Array2::from_elem((height, width), value))
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        SaliencyMap(mask.to_f64())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// Box in pixel coordinates: `(x1, y1)` top-left, `(x2, y2)` bottom-right,
/// covering the half-open ranges `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoords {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxCoords {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoxCoords { x1, y1, x2, y2 }
    }

    pub fn is_well_formed(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width as f64 && self.y2 <= height as f64
    }

    /// Integer pixel ranges `(rows, cols)` covered by the box, clamped to the image.
    pub fn pixel_ranges(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        let rows = clamp(self.y1.floor(), height)..clamp(self.y2.ceil(), height);
        let cols = clamp(self.x1.floor(), width)..clamp(self.x2.ceil(), width);
        (rows, cols)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Which phrase and box produced (part of) a pseudo-label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub phrase: String,
    pub bbox: BoxCoords,
    pub logit: f64,
}

/// Binary saliency mask standing in for ground truth during training.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub mask: BinaryMask,
    pub provenance: Vec<Provenance>,
}

impl PseudoLabel {
    pub fn new(mask: BinaryMask, provenance: Vec<Provenance>) -> Self {
        PseudoLabel { mask, provenance }
    }

    /// No foreground pixel at all.
    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Thin boundary map used as edge supervision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap(pub BinaryMask);

/// Pixels whose label is trusted (1) by the partial cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertaintyMask(pub BinaryMask);

impl CertaintyMask {
    pub fn all_certain(height: usize, width: usize) -> Self {
        CertaintyMask(BinaryMask::ones(height, width))
    }

    /// `|J|`.
    pub fn certain_count(&self) -> usize {
        self.0.count_ones()
    }

    /// `|N|`.
    pub fn pixel_count(&self) -> usize {
        self.0.height() * self.0.width()
    }
}

//! Hyperspectral cubes, their file format, patch extraction, tokenization,
//! stratified splitting and a seeded synthetic scene generator.

mod format;
mod labelmap;
mod patches;
mod split;
mod synth;
mod tokens;

pub use format::{decode_cube, encode_cube, load_cube, save_cube, CUBE_MAGIC};
pub use labelmap::{encode_pgm, encode_ppm, write_pgm, write_ppm, PALETTE};
pub use patches::{extract_patches, extract_patches_at, mirror_index, PadMode, PatchConfig, PatchSet};
pub use split::{stratified_split, Split, SplitSpec};
pub use synth::{synth_cube, SynthSpec};
pub use tokens::{make_tokens, TokenPair};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("no labeled pixels: {0}")]
    EmptyData(String),
    #[error("index {index} out of range for {len} patches")]
    Index { index: usize, len: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `H x W x C` radiance cube stored band-interleaved-by-pixel, with one
/// class label per pixel. Label 0 marks unlabeled background.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    classes: u16,
    values: Vec<f64>,
    labels: Vec<u16>,
}

impl HsiCube {
    /// `classes` is the declared class count K; every label must be `<= K`.
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        classes: u16,
        values: Vec<f64>,
        labels: Vec<u16>,
    ) -> Result<Self, DataError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(DataError::Contract(format!(
                "cube extents must be >= 1, got {height}x{width}x{bands}"
            )));
        }
        let pixels = height
            .checked_mul(width)
            .ok_or_else(|| DataError::Contract("extent overflow".into()))?;
        if values.len() != pixels * bands || labels.len() != pixels {
            return Err(DataError::Contract(format!(
                "{height}x{width}x{bands} cube needs {} values and {pixels} labels, got {} and {}",
                pixels * bands,
                values.len(),
                labels.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Contract(format!("value {i} is not finite")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > classes) {
            return Err(DataError::Contract(format!("label {l} exceeds class count {classes}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            classes,
            values,
            labels,
        })
    }

    /// Like [`HsiCube::new`] with K taken as the largest label present.
    pub fn with_labels(
        height: usize,
        width: usize,
        bands: usize,
        values: Vec<f64>,
        labels: Vec<u16>,
    ) -> Result<Self, DataError> {
        let classes = labels.iter().copied().max().unwrap_or(0);
        Self::new(height, width, bands, classes, values, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_classes(&self) -> usize {
        self.classes as usize
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.width + col) * self.bands;
        &self.values[at..at + self.bands]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bands == other.bands
            && self.classes == other.classes
            && self.labels == other.labels
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

//! Cube and label files, difference images, patches, splits and reports.
//!
//! Binary layouts (all little-endian):
//!
//! | file   | layout |
//! |--------|--------|
//! | `HSIC` | magic, `u16` version = 1, `u16` dtype = 1 (f32), `u32` B, `u32` h, `u32` w, `B·h·w` f32 band-major |
//! | `HSIL` | magic, `u16` version = 1, `u32` h, `u32` w, `h·w` u8 ∈ {0, 1, 2} |
//!
//! Change maps are binary PGM (`P5`, maxval 255, changed = 255) and
//! reports are CSV with a header row.

mod cube;
mod entropy;
mod patches;
mod report;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use cube::{
    decode_cube, difference_image, encode_cube, read_cube, read_labels, write_cube, write_labels,
    HsiCube, Label, LabelMask,
};
pub use entropy::{band_entropy, ENTROPY_BINS};
pub use patches::{extract_patch, extract_patches, PatchRef, PatchSet};
pub use report::{read_change_map, read_csv_report, write_change_map, write_csv_report, CsvReport};
pub use split::{split, Split, SplitSpec};

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("a cube needs at least 2 bands, got {0}")]
    TooFewBands(usize),
    #[error("invalid dimensions {0:?}")]
    InvalidDimensions(Vec<usize>),
    #[error("invalid label {value} at pixel {index}")]
    InvalidLabel { value: u8, index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("patch size {size} must be odd and at most {limit}")]
    InvalidPatchSize { size: usize, limit: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("training split would contain no samples of class {0}")]
    Stratification(u8),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HsiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HsiError::Io {
            path: path.into(),
            source,
        }
    }
}

//! Feature extractor and classifier on top of the band-selection head.
//!
//! Shape trace for `s = 5` with `C = e·b` channels:
//!
//! ```text
//! χ  b×5×5 ─ 1×1 grouped conv ─▶ C×5×5 ─ BSA block ─▶ x_b1 C×5×5
//!    ─ 3×3 valid conv, ReLU ─▶ C×3×3 ─ BSA block ─▶ x_b2 C×3×3
//!    ─ 3×3 valid conv, ReLU ─▶ x_b3 C×1×1
//! x_a = [gap(x_b1), gap(x_b2), gap(x_b3)]  (length 3C)
//! p   = softmax(Θ₂(Θ₁ x_a + b₁) + b₂)
//! ```

mod bsa;
mod checkpoint;
mod model;

use std::path::PathBuf;

use thiserror::Error;

use crate::band_graph::GraphError;
use crate::tensor::TensorError;

pub use bsa::{bsa_attention, bsa_block_forward, BsaBlock, BsaVars};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use model::{
    count_parameters, Classifier, ClassifierVars, ConvLayer, ConvVars, EcdbsModel, Forward,
    FrozenGraph, ModelConfig, ModelVars, Parameterized, Taps,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("patch size {0} unsupported: two valid 3x3 reductions need an odd size >= 5")]
    PatchTooSmall(usize),
    #[error("patch has {got} values, expected {expected}")]
    PatchShape { expected: usize, got: usize },
    #[error("model has no learned band weights yet")]
    NoSelection,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint lacks parameter `{0}`")]
    MissingBlob(String),
    #[error("parameter `{name}` has {got} values, expected {expected}")]
    BlobSize {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

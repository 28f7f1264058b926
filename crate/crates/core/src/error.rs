//! Crate-wide error type.

use thiserror::Error;

use crate::band_graph::GraphError;
use crate::hsi_io::HsiError;
use crate::network::NetworkError;
use crate::tensor::TensorError;
use crate::train_eval::TrainError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] HsiError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

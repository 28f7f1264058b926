//! Errors surfaced by the command line and their exit codes.

use ecdbs::band_graph::GraphError;
use ecdbs::hsi_io::HsiError;
use ecdbs::network::NetworkError;
use ecdbs::tensor::TensorError;
use ecdbs::train_eval::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration values or missing required settings.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or mutually inconsistent inputs.
    #[error("{0}")]
    Data(String),
    /// Divergence or a numerical routine that failed to converge.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<HsiError> for CliError {
    fn from(e: HsiError) -> Self {
        match e {
            HsiError::InvalidSplit(_) | HsiError::InvalidPatchSize { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::InvalidNeighbors { .. } | GraphError::InvalidClusterCount { .. } => {
                CliError::Usage(e.to_string())
            }
            GraphError::NoConvergence(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::InvalidConfig(_) | NetworkError::PatchTooSmall(_) => {
                CliError::Usage(e.to_string())
            }
            NetworkError::Graph(g) => g.into(),
            NetworkError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::NoInformativeBands => {
                CliError::Usage(e.to_string())
            }
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Network(n) => n.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::Data(d) => d.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

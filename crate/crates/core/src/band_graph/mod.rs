//! Band similarity graph and spectral band clustering.
//!
//! Everything here runs once per dataset, before training, on the
//! difference image. The results (normalised adjacency and the cluster
//! assignment) are frozen into the model.

mod cluster;
mod eigen;
mod kmeans;
mod matrix;
mod similarity;

use thiserror::Error;

pub use cluster::{assignment_matrix, spectral_cluster, AssignmentMatrix};
pub use eigen::{symmetric_eigen, SymmetricEigen, MAX_SWEEPS};
pub use kmeans::{kmeans, KMeansResult};
pub use matrix::SquareMatrix;
pub use similarity::{band_distances, build_similarity, normalize_adjacency, SimilarityMatrix};

/// Neighbour count used by the similarity graph unless configured.
pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("neighbour count k={k} invalid for {bands} bands (need 1 <= k < bands)")]
    InvalidNeighbors { k: usize, bands: usize },
    #[error("cluster count {clusters} invalid for {bands} bands (need 2 <= b < B)")]
    InvalidClusterCount { clusters: usize, bands: usize },
    #[error("Jacobi eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("band {band} has cluster label {label} outside [0, {clusters})")]
    LabelOutOfRange {
        band: usize,
        label: usize,
        clusters: usize,
    },
    #[error("cluster {0} has no bands")]
    EmptyCluster(usize),
    #[error("matrix is not square or has the wrong size: {0}")]
    BadMatrix(String),
}

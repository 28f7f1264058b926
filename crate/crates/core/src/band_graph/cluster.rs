use super::{kmeans, symmetric_eigen, GraphError, SimilarityMatrix, SquareMatrix};
use crate::rng::{stream, Stream};

/// Binary `b×B` cluster membership: `C_ij = 1` iff band `j` is in cluster `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl AssignmentMatrix {
    pub fn clusters(&self) -> usize {
        self.members.len()
    }

    pub fn bands(&self) -> usize {
        self.labels.len()
    }

    /// Cluster of every band.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Bands of cluster `i`, ascending.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    pub fn get(&self, cluster: usize, band: usize) -> bool {
        self.labels[band] == cluster
    }

    /// Row-major `b×B` 0/1 matrix.
    pub fn to_dense(&self) -> Vec<f32> {
        let (b, n) = (self.clusters(), self.bands());
        (0..b * n)
            .map(|k| {
                if self.labels[k % n] == k / n {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Inverse of [`AssignmentMatrix::to_dense`].
    pub fn from_dense(clusters: usize, bands: usize, dense: &[f32]) -> Result<Self, GraphError> {
        if dense.len() != clusters * bands {
            return Err(GraphError::BadMatrix(format!(
                "{} values for a {clusters}x{bands} assignment",
                dense.len()
            )));
        }
        let mut labels = Vec::with_capacity(bands);
        for j in 0..bands {
            let ones: Vec<usize> = (0..clusters)
                .filter(|&i| dense[i * bands + j] == 1.0)
                .collect();
            let zeros = (0..clusters)
                .filter(|&i| dense[i * bands + j] == 0.0)
                .count();
            if ones.len() != 1 || zeros != clusters - 1 {
                return Err(GraphError::BadMatrix(format!(
                    "band {j} is not in exactly one cluster"
                )));
            }
            labels.push(ones[0]);
        }
        assignment_matrix(&labels, clusters)
    }
}

pub fn assignment_matrix(
    labels: &[usize],
    clusters: usize,
) -> Result<AssignmentMatrix, GraphError> {
    let mut members = vec![Vec::new(); clusters];
    for (band, &label) in labels.iter().enumerate() {
        if label >= clusters {
            return Err(GraphError::LabelOutOfRange {
                band,
                label,
                clusters,
            });
        }
        members[label].push(band);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(GraphError::EmptyCluster(empty));
    }
    Ok(AssignmentMatrix {
        labels: labels.to_vec(),
        members,
    })
}

/// Renumbers cluster ids in order of first appearance along the band axis.
fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Spectral clustering of the bands into `clusters` groups.
///
/// Symmetrises `A`, takes the eigenvectors of the `b` smallest eigenvalues
/// of `I − D^{-1/2} S D^{-1/2}`, normalises the embedding rows and runs
/// seeded k-means on them. Cluster ids are numbered by their lowest band.
pub fn spectral_cluster(
    a: &SimilarityMatrix,
    clusters: usize,
    seed: u64,
) -> Result<AssignmentMatrix, GraphError> {
    let n = a.bands();
    if clusters < 2 || clusters >= n {
        return Err(GraphError::InvalidClusterCount { clusters, bands: n });
    }
    let m = &a.matrix;
    let s = SquareMatrix::from_fn(n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = s.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let laplacian = SquareMatrix::from_fn(n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - s.get(i, j) * inv_sqrt[i] * inv_sqrt[j]
    });
    let eig = symmetric_eigen(&laplacian)?;
    let embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..clusters).map(|c| eig.vectors.get(i, c)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|x| x / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let mut rng = stream(seed, Stream::Cluster);
    let result = kmeans(&embedding, clusters, &mut rng);
    assignment_matrix(&canonicalize(&result.labels), clusters)
}

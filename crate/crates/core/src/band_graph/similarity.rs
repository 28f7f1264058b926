use std::thread;

use super::{GraphError, SquareMatrix};
use crate::hsi_io::HsiCube;

/// k-nearest-neighbour band similarity `A`.
///
/// Row `i` is non-zero only on the `k` nearest bands of band `i`, sums to
/// one over them, and the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub matrix: SquareMatrix,
    pub k: usize,
}

impl SimilarityMatrix {
    pub fn bands(&self) -> usize {
        self.matrix.n()
    }
}

/// Pairwise Euclidean distances between flattened bands.
pub fn band_distances(cube: &HsiCube) -> SquareMatrix {
    let b = cube.bands();
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(b);
    let rows: Vec<usize> = (0..b).collect();
    let chunk = b.div_ceil(workers);
    let mut upper = vec![0.0f64; b * b];
    thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|rs| {
                s.spawn(move || {
                    rs.iter()
                        .map(|&i| {
                            let bi = cube.band(i);
                            let dists: Vec<f64> = (i + 1..b)
                                .map(|j| {
                                    bi.iter()
                                        .zip(cube.band(j))
                                        .map(|(&x, &y)| {
                                            let d = x as f64 - y as f64;
                                            d * d
                                        })
                                        .sum::<f64>()
                                        .sqrt()
                                })
                                .collect();
                            (i, dists)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, dists) in h.join().expect("distance worker panicked") {
                for (off, d) in dists.into_iter().enumerate() {
                    upper[i * b + i + 1 + off] = d;
                }
            }
        }
    });
    let mut m = SquareMatrix::from_vec(b, upper).expect("b*b values");
    for i in 0..b {
        for j in 0..i {
            let d = m.get(j, i);
            m.set(i, j, d);
        }
    }
    m
}

/// Builds `A` from the band-to-band Euclidean distances.
///
/// With `e_{i,m}` the `m`-th smallest distance from band `i` to the other
/// bands, `A_ij = (e_{i,k+1} − e_ij) / Σ_{m≤k} (e_{i,k+1} − e_{i,m})` on the
/// `k` nearest neighbours. Ties go to the lower band index. When the
/// denominator vanishes (all of the first `k+1` distances tie) or there is no
/// `(k+1)`-th band, the row falls back to `1/k` on the neighbour set.
pub fn build_similarity(cube: &HsiCube, k: usize) -> Result<SimilarityMatrix, GraphError> {
    similarity_from_distances(&band_distances(cube), k)
}

pub(crate) fn similarity_from_distances(
    dist: &SquareMatrix,
    k: usize,
) -> Result<SimilarityMatrix, GraphError> {
    let b = dist.n();
    if k == 0 || k >= b {
        return Err(GraphError::InvalidNeighbors { k, bands: b });
    }
    let mut a = SquareMatrix::zeros(b);
    for i in 0..b {
        let mut others: Vec<(f64, usize)> = (0..b)
            .filter(|&j| j != i)
            .map(|j| (dist.get(i, j), j))
            .collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let neighbors = &others[..k];
        let cutoff = others.get(k).map(|o| o.0);
        let denom = cutoff.map_or(0.0, |c| neighbors.iter().map(|&(e, _)| c - e).sum::<f64>());
        match cutoff {
            Some(c) if denom > 0.0 && denom.is_finite() => {
                for &(e, j) in neighbors {
                    a.set(i, j, (c - e) / denom);
                }
            }
            _ => {
                let u = 1.0 / k as f64;
                for &(_, j) in neighbors {
                    a.set(i, j, u);
                }
            }
        }
    }
    Ok(SimilarityMatrix { matrix: a, k })
}

/// `Â = D^{-1/2} (A + Aᵀ + I) D^{-1/2}`, `D` the row sums of `A + Aᵀ + I`.
pub fn normalize_adjacency(a: &SimilarityMatrix) -> SquareMatrix {
    let n = a.bands();
    let m = &a.matrix;
    let s = SquareMatrix::from_fn(n, |i, j| {
        m.get(i, j) + m.get(j, i) + if i == j { 1.0 } else { 0.0 }
    });
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / s.row(i).iter().sum::<f64>().sqrt())
        .collect();
    SquareMatrix::from_fn(n, |i, j| s.get(i, j) * inv_sqrt[i] * inv_sqrt[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_cube(seed: u64, b: usize, h: usize, w: usize) -> HsiCube {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * h * w)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        HsiCube::new(b, h, w, data).unwrap()
    }

    fn check_invariants(s: &SimilarityMatrix) {
        let n = s.bands();
        for i in 0..n {
            let row = s.matrix.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(row[i], 0.0);
            assert!(row.iter().filter(|&&v| v > 0.0).count() <= s.k);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn rows_are_stochastic_over_neighbour_support(seed in any::<u64>(), b in 3usize..20, k in 1usize..6) {
            prop_assume!(k < b);
            let s = build_similarity(&random_cube(seed, b, 4, 5), k).unwrap();
            check_invariants(&s);
        }
    }

    #[test]
    fn three_band_hand_enumeration() {
        // d(1,2)=1, d(1,3)=2, d(2,3)=2 in one-based band numbering
        let d =
            SquareMatrix::from_vec(3, vec![0.0, 1.0, 2.0, 1.0, 0.0, 2.0, 2.0, 2.0, 0.0]).unwrap();
        let s = similarity_from_distances(&d, 1).unwrap();
        assert_eq!(s.matrix.get(0, 1), 1.0);
        assert_eq!(s.matrix.get(0, 2), 0.0);
        // band 3 sees a tie between bands 1 and 2 at distance 2: denominator 0,
        // falls back to the lower index
        assert_eq!(s.matrix.get(2, 0), 1.0);
        check_invariants(&s);
    }

    #[test]
    fn duplicated_bands_are_mutual_neighbours() {
        let mut cube = random_cube(4, 6, 4, 4).data().to_vec();
        let plane = 16;
        let copy: Vec<f32> = cube[plane..2 * plane].to_vec();
        cube[4 * plane..5 * plane].copy_from_slice(&copy);
        let cube = HsiCube::new(6, 4, 4, cube).unwrap();
        let s = build_similarity(&cube, 2).unwrap();
        assert!(s.matrix.get(1, 4) > 0.0);
        assert!(s.matrix.get(4, 1) > 0.0);
        check_invariants(&s);
    }

    #[test]
    fn all_identical_bands_take_uniform_fallback() {
        let cube = HsiCube::new(5, 2, 2, vec![1.0; 20]).unwrap();
        let s = build_similarity(&cube, 3).unwrap();
        check_invariants(&s);
        assert_eq!(
            s.matrix.row(0),
            &[0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]
        );
    }

    #[test]
    fn k_bounds() {
        let cube = random_cube(0, 4, 2, 2);
        assert!(build_similarity(&cube, 0).is_err());
        assert!(build_similarity(&cube, 4).is_err());
        // k = B − 1 has no (k+1)-th distance and uses the uniform row
        let s = build_similarity(&cube, 3).unwrap();
        check_invariants(&s);
    }

    #[test]
    fn two_band_normalized_adjacency() {
        let a = SimilarityMatrix {
            matrix: SquareMatrix::from_vec(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            k: 1,
        };
        // A + Aᵀ + I = [[1,2],[2,1]], degrees 3
        let n = normalize_adjacency(&a);
        let expected = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (x, y) in n.data().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(n.mul_vec(&[1.0, 1.0]).iter().all(|&v| v <= 1.0 + 1e-15));
    }

    /// Largest |eigenvalue| by power iteration on Â² (handles ± pairs).
    fn spectral_radius(m: &SquareMatrix) -> f64 {
        let m2 = m.matmul(m);
        let mut v = vec![1.0; m.n()];
        v[0] = 2.0;
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w = m2.mul_vec(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        lambda.sqrt()
    }

    #[test]
    fn normalized_adjacency_is_symmetric_contraction() {
        for seed in 0..5 {
            let s = build_similarity(&random_cube(seed, 12, 5, 5), 5).unwrap();
            let n = normalize_adjacency(&s);
            assert!(n.max_asymmetry() < 1e-12);
            assert!(n
                .data()
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= 0.0 && (k % 13 != 0 || v > 0.0)));
            let rho = spectral_radius(&n);
            assert!(rho <= 1.0 + 1e-6, "spectral radius {rho}");
        }
    }
}

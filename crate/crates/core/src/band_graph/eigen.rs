use super::{GraphError, SquareMatrix};

pub const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `M = Q Λ Qᵀ` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: SquareMatrix,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.values.len();
        let q = &self.vectors;
        SquareMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| q.get(i, k) * self.values[k] * q.get(j, k))
                .sum()
        })
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix.
pub fn symmetric_eigen(m: &SquareMatrix) -> Result<SymmetricEigen, GraphError> {
    let n = m.n();
    let mut a = m.clone();
    let mut v = SquareMatrix::identity(n);
    let scale = m
        .data()
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let off = |a: &SquareMatrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a.get(i, j) * a.get(i, j);
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    loop {
        if off(&a) <= 1e-14 * scale {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(GraphError::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = SquareMatrix::from_fn(n, |r, c| v.get(r, order[c]));
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

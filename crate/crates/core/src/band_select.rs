//! Differentiable band selection.
//!
//! Per patch `X` (`B×m`, `m = s²`):
//!
//! 1. diffusion `X̄ = Â·X·W` mixes every band with its graph neighbours and
//!    learns a spatial mix `W` (`m×m`);
//! 2. the similarity vector `s_i = Σ_j ‖X̄_i − X̄_j‖` is normalised and fed
//!    through a two-layer squeeze MLP ending in a sigmoid, giving band
//!    weights `w ∈ (0,1)^B`;
//! 3. the weights, averaged over the mini-batch, go through a softmax at
//!    temperature `τ` restricted to each cluster's bands, giving the `b×B`
//!    selection matrix `E`;
//! 4. `χ = E·X` is the reduced `b×s×s` patch.
//!
//! At inference [`harden`] replaces `E` by its per-row argmax so selection is
//! an exact band gather.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::band_graph::AssignmentMatrix;
use crate::real::Real;
use crate::tensor::{Function, Tape, Tensor, TensorError, Var};

/// Distance used by the similarity vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    L1,
    #[default]
    L2,
}

/// Learnable spatial mix `W` of the diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionLayer<T> {
    pub weight: Tensor<T>,
}

impl<T: Real> DiffusionLayer<T> {
    /// Identity plus `N(0, 0.01²)` noise.
    pub fn init<R: Rng>(positions: usize, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let weight = Tensor::from_fn(&[positions, positions], |k| {
            let id = if k / positions == k % positions {
                1.0
            } else {
                0.0
            };
            T::of(id + noise.sample(rng))
        });
        Self { weight }
    }

    pub fn identity(positions: usize) -> Self {
        Self {
            weight: Tensor::from_fn(&[positions, positions], |k| {
                if k / positions == k % positions {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        }
    }
}

/// Normalisation affine and squeeze MLP producing band weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingHead<T> {
    /// `hidden×B`
    pub w0: Tensor<T>,
    pub b0: Tensor<T>,
    /// `B×hidden`
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn hidden_width(bands: usize) -> usize {
    (bands / 4).max(4)
}

pub(crate) fn kaiming<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

/// Multiplier on the fan-in init of the weighting head's output layer.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;

fn scaled<T: Real>(mut t: Tensor<T>, c: f64) -> Tensor<T> {
    t.data_mut().iter_mut().for_each(|v| *v *= T::of(c));
    t
}

impl<T: Real> WeightingHead<T> {
    pub fn init<R: Rng>(bands: usize, rng: &mut R) -> Self {
        let h = hidden_width(bands);
        Self {
            w0: kaiming(&[h, bands], bands, rng),
            b0: Tensor::zeros(&[h]),
            // scaled down so every band starts near w = 0.5: the initial
            // selection carries almost no preference but gradients still flow
            w1: scaled(kaiming(&[bands, h], h, rng), OUTPUT_INIT_SCALE),
            b1: Tensor::zeros(&[bands]),
            gamma: Tensor::scalar(T::one()),
            beta: Tensor::scalar(T::zero()),
        }
    }

    pub fn bands(&self) -> usize {
        self.w0.shape()[1]
    }
}

/// Tape handles for a [`WeightingHead`].
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w0: Var,
    pub b0: Var,
    pub w1: Var,
    pub b1: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Real> WeightingHead<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> HeadVars {
        HeadVars {
            w0: tape.param(self.w0.clone()),
            b0: tape.param(self.b0.clone()),
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            gamma: tape.param(self.gamma.clone()),
            beta: tape.param(self.beta.clone()),
        }
    }
}

/// Geometric annealing from `initial` to `final_tau` over `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_tau: f64,
    pub total_epochs: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            final_tau: 0.01,
            total_epochs: 400,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.final_tau > 0.0 && self.initial >= self.final_tau) {
            return Err(TensorError::InvalidParameter(format!(
                "temperature schedule needs initial >= final > 0, got {} -> {}",
                self.initial, self.final_tau
            )));
        }
        Ok(())
    }
}

/// `τ₀ · (τ_end/τ₀)^(epoch/E_total)`, clamped to the schedule's range.
pub fn temperature_at(epoch: usize, sched: &TemperatureSchedule) -> f64 {
    if sched.total_epochs == 0 {
        return sched.final_tau;
    }
    let frac = (epoch as f64 / sched.total_epochs as f64).min(1.0);
    sched.initial * (sched.final_tau / sched.initial).powf(frac)
}

/// `X̄ = Â·X·W` with `Â` a constant.
pub fn diffuse<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    a_hat: Var,
    w: Var,
) -> Result<Var, TensorError> {
    let ax = tape.matmul(a_hat, x)?;
    tape.matmul(ax, w)
}

struct PairwiseDistanceSum {
    metric: SimilarityMetric,
}

fn pair_dist<T: Real>(a: &[T], b: &[T], metric: SimilarityMetric) -> T {
    match metric {
        SimilarityMetric::L2 => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt(),
        SimilarityMetric::L1 => a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum(),
    }
}

impl<T: Real> Function<T> for PairwiseDistanceSum {
    fn name(&self) -> &'static str {
        "similarity_vector"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let (b, m) = (x.shape()[0], x.shape()[1]);
        let d = x.data();
        let mut dx = vec![T::zero(); d.len()];
        for i in 0..b {
            for j in i + 1..b {
                let (ri, rj) = (&d[i * m..(i + 1) * m], &d[j * m..(j + 1) * m]);
                let coeff = grad[i] + grad[j];
                match self.metric {
                    SimilarityMetric::L2 => {
                        let dist = pair_dist(ri, rj, SimilarityMetric::L2);
                        if dist == T::zero() {
                            continue;
                        }
                        let c = coeff / dist;
                        for k in 0..m {
                            let u = (ri[k] - rj[k]) * c;
                            dx[i * m + k] += u;
                            dx[j * m + k] -= u;
                        }
                    }
                    SimilarityMetric::L1 => {
                        for k in 0..m {
                            let diff = ri[k] - rj[k];
                            let sign = if diff > T::zero() {
                                T::one()
                            } else if diff < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            };
                            dx[i * m + k] += coeff * sign;
                            dx[j * m + k] -= coeff * sign;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

/// `s_i = Σ_j dist(X̄_i, X̄_j)` over the rows of a `B×m` matrix.
pub fn similarity_vector<T: Real>(
    tape: &mut Tape<T>,
    xbar: Var,
    metric: SimilarityMetric,
) -> Result<Var, TensorError> {
    let x = tape.value(xbar);
    let shape = x.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(TensorError::InvalidParameter(format!(
            "similarity vector needs a B×m matrix with B >= 2, got {shape:?}"
        )));
    }
    let (b, m) = (shape[0], shape[1]);
    let d = x.data();
    let mut s = vec![T::zero(); b];
    for i in 0..b {
        for j in i + 1..b {
            let dist = pair_dist(&d[i * m..(i + 1) * m], &d[j * m..(j + 1) * m], metric);
            s[i] += dist;
            s[j] += dist;
        }
    }
    let out = Tensor::new(&[b], s)?;
    Ok(tape.custom(&[xbar], out, Box::new(PairwiseDistanceSum { metric })))
}

fn linear<T: Real>(tape: &mut Tape<T>, w: Var, b: Var, x: Var) -> Result<Var, TensorError> {
    let n = tape.value(x).numel();
    let col = tape.reshape(x, &[n, 1])?;
    let y = tape.matmul(w, col)?;
    let out = tape.shape(w)[0];
    let y = tape.reshape(y, &[out])?;
    tape.add(y, b)
}

/// `w = sigmoid(W₁·relu(W₀·ŝ + b₀) + b₁)` with `ŝ` the affine-normalised `s`.
pub fn band_weights<T: Real>(
    tape: &mut Tape<T>,
    s: Var,
    head: &HeadVars,
    eps: T,
) -> Result<Var, TensorError> {
    let s_hat = tape.normalize_affine(s, head.gamma, head.beta, eps)?;
    let h = linear(tape, head.w0, head.b0, s_hat)?;
    let h = tape.relu(h);
    let z = linear(tape, head.w1, head.b1, h)?;
    Ok(tape.sigmoid(z))
}

/// Sequential mean of equally shaped vectors (deterministic fold order).
pub fn mean_of<T: Real>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var, TensorError> {
    let (&first, rest) = parts
        .split_first()
        .ok_or_else(|| TensorError::InvalidParameter("mean of an empty batch".into()))?;
    let mut acc = first;
    for &p in rest {
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, T::one() / T::of(parts.len() as f64)))
}

struct ClusterSoftmax {
    members: Vec<Vec<usize>>,
    tau: f64,
}

impl<T: Real> Function<T> for ClusterSoftmax {
    fn name(&self) -> &'static str {
        "intra_cluster_softmax"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let bands = inputs[0].numel();
        let e = output.data();
        let tau = T::of(self.tau);
        let mut dw = vec![T::zero(); bands];
        for (i, row) in self.members.iter().enumerate() {
            let off = i * bands;
            let dot: T = row.iter().map(|&j| e[off + j] * grad[off + j]).sum();
            for &j in row {
                dw[j] += e[off + j] * (grad[off + j] - dot) / tau;
            }
        }
        vec![Some(dw)]
    }
}

/// `b×B` selection matrix: softmax of `w/τ` over each cluster's bands, zero
/// elsewhere.
pub fn intra_cluster_softmax<T: Real>(
    tape: &mut Tape<T>,
    w: Var,
    clusters: &AssignmentMatrix,
    tau: f64,
) -> Result<Var, TensorError> {
    if !(tau > 0.0) {
        return Err(TensorError::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let bands = clusters.bands();
    if tape.shape(w) != [bands] {
        return Err(TensorError::ShapeMismatch {
            op: "intra_cluster_softmax",
            left: tape.shape(w).to_vec(),
            right: vec![bands],
        });
    }
    let members: Vec<Vec<usize>> = (0..clusters.clusters())
        .map(|i| clusters.members(i).to_vec())
        .collect();
    let wv = tape.value(w).data();
    let e = cluster_softmax_raw(wv, &members, T::of(tau));
    let out = Tensor::new(&[members.len(), bands], e)?;
    Ok(tape.custom(&[w], out, Box::new(ClusterSoftmax { members, tau })))
}

fn cluster_softmax_raw<T: Real>(w: &[T], members: &[Vec<usize>], tau: T) -> Vec<T> {
    let bands = w.len();
    let mut e = vec![T::zero(); members.len() * bands];
    for (i, row) in members.iter().enumerate() {
        let max = row.iter().map(|&j| w[j]).fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&j| ((w[j] - max) / tau).exp()).collect();
        let z: T = exps.iter().copied().sum();
        for (&j, ex) in row.iter().zip(exps) {
            e[i * bands + j] = ex / z;
        }
    }
    e
}

/// `χ = E·X` along the band axis; `X` is `B×s×s`, the result `b×s×s`.
pub fn apply_selection<T: Real>(tape: &mut Tape<T>, e: Var, x: Var) -> Result<Var, TensorError> {
    let xs = tape.shape(x).to_vec();
    let es = tape.shape(e).to_vec();
    if xs.len() != 3 || es.len() != 2 || es[1] != xs[0] {
        return Err(TensorError::ShapeMismatch {
            op: "apply_selection",
            left: es,
            right: xs,
        });
    }
    let flat = tape.reshape(x, &[xs[0], xs[1] * xs[2]])?;
    let chi = tape.matmul(e, flat)?;
    tape.reshape(chi, &[es[0], xs[1], xs[2]])
}

/// Value snapshot of a selection matrix together with its cluster support.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    /// Row-major `b×B`.
    pub values: Vec<f64>,
    pub bands: usize,
    pub support: Vec<Vec<usize>>,
    pub tau: f64,
}

impl SelectionMatrix {
    /// Evaluates `E` for fixed weights without a tape.
    pub fn from_weights(w: &[f64], clusters: &AssignmentMatrix, tau: f64) -> Self {
        let support: Vec<Vec<usize>> = (0..clusters.clusters())
            .map(|i| clusters.members(i).to_vec())
            .collect();
        Self {
            values: cluster_softmax_raw(w, &support, tau),
            bands: w.len(),
            support,
            tau,
        }
    }

    pub fn clusters(&self) -> usize {
        self.support.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.bands..(i + 1) * self.bands]
    }

    pub fn row_max(&self, i: usize) -> f64 {
        self.support[i]
            .iter()
            .map(|&j| self.row(i)[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-row argmax (lowest band index on ties) turned into one-hot rows.
/// Returns the hardened matrix and the picked band of every cluster.
pub fn harden(e: &SelectionMatrix) -> (SelectionMatrix, Vec<usize>) {
    let mut picks = Vec::with_capacity(e.clusters());
    let mut values = vec![0.0; e.values.len()];
    for (i, row) in e.support.iter().enumerate() {
        let vals = e.row(i);
        let mut best = row[0];
        for &j in &row[1..] {
            if vals[j] > vals[best] {
                best = j;
            }
        }
        values[i * e.bands + best] = 1.0;
        picks.push(best);
    }
    (
        SelectionMatrix {
            values,
            bands: e.bands,
            support: e.support.clone(),
            tau: e.tau,
        },
        picks,
    )
}

/// Band picked in every cluster by the weights alone (τ-invariant).
pub fn selected_bands(w: &[f64], clusters: &AssignmentMatrix) -> Vec<usize> {
    harden(&SelectionMatrix::from_weights(w, clusters, 1.0)).1
}

//! Class-weighted cross entropy and the selection entropy regulariser.

use serde::{Deserialize, Serialize};

use crate::band_select::SelectionMatrix;
use crate::real::Real;
use crate::tensor::{Function, Tape, Tensor, TensorError, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the entropy term.
    pub alpha: f64,
    /// Weight of the changed class.
    pub omega_c: f64,
    /// Weight of the unchanged class.
    pub omega_u: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            omega_c: 5.0,
            omega_u: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.alpha >= 0.0 && self.omega_c > 0.0 && self.omega_u > 0.0) {
            return Err(TensorError::InvalidParameter(format!(
                "loss needs alpha >= 0 and positive class weights, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-sample loss for the changed-class probability `p` and label `y`.
pub fn weighted_bce(p: f64, y: u8, cfg: &LossConfig) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -cfg.omega_c * p.ln()
    } else {
        -cfg.omega_u * (1.0 - p).ln()
    }
}

struct WeightedBce {
    labels: Vec<u8>,
    cfg: LossConfig,
}

impl<T: Real> Function<T> for WeightedBce {
    fn name(&self) -> &'static str {
        "weighted_bce"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let n = self.labels.len() as f64;
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.labels)
            .map(|(&p, &y)| {
                let p = p.to_f64_lossy();
                // zero slope where the clamp is active
                if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                    return T::zero();
                }
                let g = if y == 1 {
                    -self.cfg.omega_c / p
                } else {
                    self.cfg.omega_u / (1.0 - p)
                };
                grad[0] * T::of(g / n)
            })
            .collect();
        vec![Some(d)]
    }
}

/// Batch-mean weighted cross entropy of changed-class probabilities `p`
/// (shape `[n]`) against `labels`.
pub fn weighted_bce_mean<T: Real>(
    tape: &mut Tape<T>,
    p: Var,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<Var, TensorError> {
    if tape.shape(p) != [labels.len()] || labels.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_bce",
            left: tape.shape(p).to_vec(),
            right: vec![labels.len()],
        });
    }
    let total: f64 = tape
        .value(p)
        .data()
        .iter()
        .zip(labels)
        .map(|(&v, &y)| weighted_bce(v.to_f64_lossy(), y, cfg))
        .sum();
    let out = Tensor::scalar(T::of(total / labels.len() as f64));
    Ok(tape.custom(
        &[p],
        out,
        Box::new(WeightedBce {
            labels: labels.to_vec(),
            cfg: *cfg,
        }),
    ))
}

/// `−(1/b) Σ E log E` with `0·log 0 = 0`.
pub fn selection_entropy(e: &SelectionMatrix) -> f64 {
    let h: f64 = e
        .values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum();
    -h / e.clusters() as f64
}

struct Entropy {
    rows: usize,
}

impl<T: Real> Function<T> for Entropy {
    fn name(&self) -> &'static str {
        "selection_entropy"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let scale = grad[0] / T::of(self.rows as f64);
        let d = inputs[0]
            .data()
            .iter()
            .map(|&v| {
                if v > T::zero() {
                    -scale * (v.ln() + T::one())
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(d)]
    }
}

/// Entropy of a `b×B` selection matrix on the tape.
pub fn selection_entropy_var<T: Real>(tape: &mut Tape<T>, e: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(e).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::InvalidParameter(format!(
            "selection entropy needs a b×B matrix, got {shape:?}"
        )));
    }
    let h: T = tape
        .value(e)
        .data()
        .iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| v * v.ln())
        .sum();
    let out = Tensor::scalar(-h / T::of(shape[0] as f64));
    Ok(tape.custom(&[e], out, Box::new(Entropy { rows: shape[0] })))
}

/// `L_C + α·L_E`.
pub fn total_loss(l_c: f64, l_e: f64, alpha: f64) -> f64 {
    l_c + alpha * l_e
}

pub fn total_loss_var<T: Real>(
    tape: &mut Tape<T>,
    l_c: Var,
    l_e: Var,
    alpha: f64,
) -> Result<Var, TensorError> {
    let reg = tape.scale(l_e, T::of(alpha));
    tape.add(l_c, reg)
}

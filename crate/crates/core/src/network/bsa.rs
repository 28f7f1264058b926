//! Band-specific spatial attention and the residual block built on it.

use rand::Rng;

use crate::band_select::kaiming;
use crate::real::Real;
use crate::tensor::{
    normalize_backward, normalize_forward, Function, Padding, Tape, Tensor, TensorError, Var,
};

/// Per-group intermediates of the attention forward pass.
struct GroupState<T> {
    g: Vec<T>,
    normalized: Vec<T>,
    c: Vec<T>,
    denom: T,
    sigma: T,
    s: Vec<T>,
}

fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

/// `x` is `C×m` (channel-major) with `C = groups·e`; returns the output and
/// the per-group state.
fn attention_forward<T: Real>(
    x: &[T],
    groups: usize,
    e: usize,
    m: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<GroupState<T>>) {
    let mut out = vec![T::zero(); x.len()];
    let inv_m = T::one() / T::of(m as f64);
    let states = (0..groups)
        .map(|i| {
            let base = i * e * m;
            let ch = |k: usize| &x[base + k * m..base + (k + 1) * m];
            let g: Vec<T> = (0..e)
                .map(|k| ch(k).iter().copied().sum::<T>() * inv_m)
                .collect();
            let c: Vec<T> = (0..m)
                .map(|j| (0..e).map(|k| g[k] * ch(k)[j]).sum())
                .collect();
            let (normalized, denom, sigma) = normalize_forward(&c, eps);
            let s: Vec<T> = normalized
                .iter()
                .map(|&n| sigmoid(gamma[i] * n + beta[i]))
                .collect();
            for k in 0..e {
                for j in 0..m {
                    out[base + k * m + j] = ch(k)[j] * s[j];
                }
            }
            GroupState {
                g,
                normalized,
                c,
                denom,
                sigma,
                s,
            }
        })
        .collect();
    (out, states)
}

struct BsaAttention {
    groups: usize,
    eps: f64,
}

impl<T: Real> Function<T> for BsaAttention {
    fn name(&self) -> &'static str {
        "bsa_attention"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (x, gamma, beta) = (inputs[0], inputs[1].data(), inputs[2].data());
        let shape = x.shape();
        let m = shape[1] * shape[2];
        let e = shape[0] / self.groups;
        let xd = x.data();
        let (_, states) = attention_forward(xd, self.groups, e, m, gamma, beta, T::of(self.eps));
        let inv_m = T::one() / T::of(m as f64);
        let mut dx = vec![T::zero(); xd.len()];
        let mut dgamma = vec![T::zero(); self.groups];
        let mut dbeta = vec![T::zero(); self.groups];
        for (i, st) in states.iter().enumerate() {
            let base = i * e * m;
            let idx = |k: usize, j: usize| base + k * m + j;
            let da: Vec<T> = (0..m)
                .map(|j| {
                    let ds: T = (0..e).map(|k| grad[idx(k, j)] * xd[idx(k, j)]).sum();
                    ds * st.s[j] * (T::one() - st.s[j])
                })
                .collect();
            dgamma[i] = da.iter().zip(&st.normalized).map(|(&d, &n)| d * n).sum();
            dbeta[i] = da.iter().copied().sum();
            let dn: Vec<T> = da.iter().map(|&d| d * gamma[i]).collect();
            let dc = normalize_backward(&st.c, &st.normalized, st.denom, st.sigma, &dn);
            // c_j = g·x_j,  g = mean_j x_j
            let dg: Vec<T> = (0..e)
                .map(|k| (0..m).map(|j| dc[j] * xd[idx(k, j)]).sum())
                .collect();
            for k in 0..e {
                for j in 0..m {
                    dx[idx(k, j)] = grad[idx(k, j)] * st.s[j] + dc[j] * st.g[k] + dg[k] * inv_m;
                }
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

/// Attention over a `C×H×W` map split into `groups` bands of `C/groups`
/// channels. Within each group the global vector `g` is the spatial mean,
/// the coefficient at position `j` is `g·x_j`, normalised over positions
/// with the group's `(γ, β)`, and `x_j` is scaled by its sigmoid.
pub fn bsa_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    eps: f64,
) -> Result<Var, TensorError> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || groups == 0 || !shape[0].is_multiple_of(groups) {
        return Err(TensorError::InvalidParameter(format!(
            "bsa_attention: feature map {shape:?} does not split into {groups} groups"
        )));
    }
    for v in [gamma, beta] {
        if tape.shape(v) != [groups] {
            return Err(TensorError::ShapeMismatch {
                op: "bsa_attention",
                left: tape.shape(v).to_vec(),
                right: vec![groups],
            });
        }
    }
    let m = shape[1] * shape[2];
    let (out, _) = attention_forward(
        tape.value(x).data(),
        groups,
        shape[0] / groups,
        m,
        tape.value(gamma).data(),
        tape.value(beta).data(),
        T::of(eps),
    );
    let out = Tensor::new(&shape, out)?;
    Ok(tape.custom(
        &[x, gamma, beta],
        out,
        Box::new(BsaAttention { groups, eps }),
    ))
}

/// Grouped 3×3 same-padding conv, ReLU, attention, residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct BsaBlock<T> {
    /// `C×e×3×3`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BsaVars {
    pub kernel: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Real> BsaBlock<T> {
    pub fn init<R: Rng>(groups: usize, expansion: usize, rng: &mut R) -> Self {
        let c = groups * expansion;
        Self {
            kernel: kaiming(&[c, expansion, 3, 3], expansion * 9, rng),
            bias: Tensor::zeros(&[c]),
            gamma: Tensor::filled(&[groups], T::one()),
            beta: Tensor::zeros(&[groups]),
            groups,
        }
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BsaVars {
        BsaVars {
            kernel: tape.param(self.kernel.clone()),
            bias: tape.param(self.bias.clone()),
            gamma: tape.param(self.gamma.clone()),
            beta: tape.param(self.beta.clone()),
        }
    }
}

/// `x + attn(relu(grouped_conv(x)))`.
pub fn bsa_block_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    block: &BsaVars,
    groups: usize,
    eps: f64,
) -> Result<Var, TensorError> {
    let y = tape.conv2d(x, block.kernel, Some(block.bias), groups, Padding::Same)?;
    let y = tape.relu(y);
    let y = bsa_attention(tape, y, block.gamma, block.beta, groups, eps)?;
    tape.add(x, y)
}

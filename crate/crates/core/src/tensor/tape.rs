use super::conv::{self, ConvGeometry, Padding};
use super::{numel, Tensor, TensorError};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fused operation whose forward value is computed by the caller.
///
/// `backward` receives the upstream gradient of the output and returns one
/// gradient per input; entries whose `needs` flag is false may be `None`.
pub trait Function<T: Real> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Real> {
    Leaf,
    MatMul,
    Conv2d {
        geo: ConvGeometry,
        has_bias: bool,
    },
    GlobalAvgPool,
    Relu,
    Sigmoid,
    Add,
    Sub,
    Mul,
    Scale(T),
    Concat {
        axis: usize,
    },
    Softmax {
        tau: T,
    },
    NormalizeAffine {
        normalized: Vec<T>,
        denom: T,
        sigma: T,
    },
    Sum,
    Mean,
    Reshape,
    Index(usize),
    Custom(Box<dyn Function<T>>),
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::NormalizeAffine { .. } => "normalize_affine",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Reshape => "reshape",
            Op::Index(_) => "index",
            Op::Custom(f) => f.name(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of every operation of one forward pass.
///
/// Entries are appended in execution order, so each entry's inputs always
/// precede it. A tape belongs to one thread; use one tape per shard when
/// evaluating in parallel.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-major `m×k · k×n`.
pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · g` for `a: m×k`, `g: m×n`.
fn matmul_at_b<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// `g · bᵀ` for `g: m×n`, `b: k×n`.
fn matmul_a_bt<T: Real>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// Backward of `n = (x − μ)/(σ + ε)` given `dn`, population σ.
pub(crate) fn normalize_backward<T: Real>(
    x: &[T],
    normalized: &[T],
    denom: T,
    sigma: T,
    dn: &[T],
) -> Vec<T> {
    let m = T::of(x.len() as f64);
    let mean_dn = dn.iter().copied().sum::<T>() / m;
    // Σ dn_k u_k with u_k = n_k · denom
    let dn_u: T = dn
        .iter()
        .zip(normalized)
        .map(|(&d, &n)| d * n * denom)
        .sum();
    let coupling = if sigma > T::zero() {
        dn_u / (denom * denom * m * sigma)
    } else {
        T::zero()
    };
    dn.iter()
        .zip(normalized)
        .map(|(&d, &n)| (d - mean_dn) / denom - coupling * n * denom)
        .collect()
}

/// Forward of `(x − μ)/(σ + ε)`; returns `(normalized, σ + ε, σ)`.
pub(crate) fn normalize_forward<T: Real>(x: &[T], eps: T) -> (Vec<T>, T, T) {
    let m = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / m;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
    let sigma = var.sqrt();
    let denom = sigma + eps;
    (
        x.iter().map(|&v| (v - mean) / denom).collect(),
        denom,
        sigma,
    )
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; trainable iff the tensor was marked `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            inputs: Vec::new(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.requires_grad())
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Names of the recorded ops, in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(out, vec![a, b], Op::MatMul))
    }

    /// Grouped convolution of a `C_in×H×W` map with a
    /// `C_out×(C_in/groups)×kh×kw` kernel and optional `C_out` bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        groups: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let geo = ConvGeometry::new(self.shape(x), self.shape(kernel), groups, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geo.c_out] {
                return Err(mismatch("conv2d bias", self.shape(b), &[geo.c_out]));
            }
        }
        let data = conv::forward(
            &geo,
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&geo.out_shape(), data)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            inputs,
            Op::Conv2d {
                geo,
                has_bias: bias.is_some(),
            },
        ))
    }

    /// `C×H×W → C`, mean over each spatial plane.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(mismatch("global_avg_pool", s, &[0, 0, 0]));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let inv = T::one() / T::of(plane as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[c], data)?;
        Ok(self.push(out, vec![x], Op::GlobalAvgPool))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| f(a)).collect())
            .expect("unary ops preserve shape");
        self.push(out, vec![x], op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu, |a| if a > T::zero() { a } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(c), |a| a * c)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op.name(), va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, vec![a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidParameter("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidParameter(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, parts.to_vec(), Op::Concat { axis }))
    }

    /// `exp(x_i/τ) / Σ_k exp(x_k/τ)` over a vector, max-subtracted.
    pub fn softmax(&mut self, x: Var, tau: T) -> Result<Var, TensorError> {
        if !(tau > T::zero()) {
            return Err(TensorError::InvalidParameter(format!(
                "softmax temperature must be positive, got {tau}"
            )));
        }
        let v = self.value(x);
        if v.shape().len() != 1 {
            return Err(mismatch("softmax", v.shape(), &[v.numel()]));
        }
        let data = softmax_raw(v.data(), tau);
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.push(out, vec![x], Op::Softmax { tau }))
    }

    /// `((x − mean)/(std + ε))·γ + β` with scalar `γ`, `β` and population std.
    pub fn normalize_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<Var, TensorError> {
        for p in [gamma, beta] {
            if self.shape(p) != [1] {
                return Err(mismatch("normalize_affine", self.shape(p), &[1]));
            }
        }
        let (g, b) = (self.value(gamma).data()[0], self.value(beta).data()[0]);
        let v = self.value(x);
        let (normalized, denom, sigma) = normalize_forward(v.data(), eps);
        let data = normalized.iter().map(|&n| n * g + b).collect();
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.push(
            out,
            vec![x, gamma, beta],
            Op::NormalizeAffine {
                normalized,
                denom,
                sigma,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), vec![x], Op::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push(Tensor::scalar(s), vec![x], Op::Mean)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone_value().reshape(shape)?;
        Ok(self.push(out, vec![x], Op::Reshape))
    }

    /// Picks one element of a tensor (flat index) as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let v = self.value(x);
        if i >= v.numel() {
            return Err(TensorError::InvalidParameter(format!(
                "index {i} out of range for {} elements",
                v.numel()
            )));
        }
        let out = Tensor::scalar(v.data()[i]);
        Ok(self.push(out, vec![x], Op::Index(i)))
    }

    /// Records a fused op whose value the caller already computed.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        function: Box<dyn Function<T>>,
    ) -> Var {
        self.push(output, inputs.to_vec(), Op::Custom(function))
    }

    /// Reverse sweep from a scalar root. Gradients add into the leaves'
    /// `grad` slots, so calling twice accumulates.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let rs = self.value(root).shape().to_vec();
        if !self.value(root).is_scalar() {
            return Err(TensorError::NonScalarRoot(rs));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = self.op_backward(i, &g, &needs);
            for ((inp, ig), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(ig), true) = (ig, *need) else {
                    continue;
                };
                match &mut grads[inp.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn op_backward(&self, i: usize, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let node = &self.nodes[i];
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                vec![
                    needs[0].then(|| matmul_a_bt(g, b.data(), m, k, n)),
                    needs[1].then(|| matmul_at_b(a.data(), g, m, k, n)),
                ]
            }
            Op::Conv2d { geo, has_bias } => {
                let need_bias = *has_bias && needs[2];
                let (dx, dk, db) = conv::backward(
                    geo,
                    input(0).data(),
                    input(1).data(),
                    g,
                    (needs[0], needs[1], need_bias),
                );
                let mut v = vec![dx, dk];
                if *has_bias {
                    v.push(db);
                }
                v
            }
            Op::GlobalAvgPool => {
                let s = input(0).shape();
                let plane = s[1] * s[2];
                let inv = T::one() / T::of(plane as f64);
                let mut dx = Vec::with_capacity(s[0] * plane);
                for &gc in g {
                    dx.extend(std::iter::repeat_n(gc * inv, plane));
                }
                vec![Some(dx)]
            }
            Op::Relu => {
                let dx = input(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![Some(dx)]
            }
            Op::Sigmoid => {
                let dx = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                vec![Some(dx)]
            }
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            Op::Mul => {
                let (a, b) = (input(0).data(), input(1).data());
                vec![
                    needs[0].then(|| g.iter().zip(b).map(|(&gv, &y)| gv * y).collect()),
                    needs[1].then(|| g.iter().zip(a).map(|(&gv, &x)| gv * x).collect()),
                ]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::Concat { axis } => {
                let shape = out.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[*axis + 1..]);
                let lens: Vec<usize> = (0..node.inputs.len())
                    .map(|k| input(k).shape()[*axis] * inner)
                    .collect();
                let mut parts: Vec<Vec<T>> = lens
                    .iter()
                    .map(|&l| Vec::with_capacity(l * outer))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, &l) in parts.iter_mut().zip(&lens) {
                        p.extend_from_slice(&g[off..off + l]);
                        off += l;
                    }
                }
                parts.into_iter().map(Some).collect()
            }
            Op::Softmax { tau } => {
                let y = out.data();
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                let dx = y
                    .iter()
                    .zip(g)
                    .map(|(&yi, &gi)| yi * (gi - dot) / *tau)
                    .collect();
                vec![Some(dx)]
            }
            Op::NormalizeAffine {
                normalized,
                denom,
                sigma,
            } => {
                let gamma = input(1).data()[0];
                let dgamma: T = g.iter().zip(normalized).map(|(&a, &n)| a * n).sum();
                let dbeta: T = g.iter().copied().sum();
                let dx = needs[0].then(|| {
                    let dn: Vec<T> = g.iter().map(|&v| v * gamma).collect();
                    normalize_backward(input(0).data(), normalized, *denom, *sigma, &dn)
                });
                vec![dx, Some(vec![dgamma]), Some(vec![dbeta])]
            }
            Op::Sum => vec![Some(vec![g[0]; input(0).numel()])],
            Op::Mean => {
                let n = input(0).numel();
                vec![Some(vec![g[0] / T::of(n as f64); n])]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Index(k) => {
                let mut dx = vec![T::zero(); input(0).numel()];
                dx[*k] = g[0];
                vec![Some(dx)]
            }
            Op::Custom(f) => {
                let inputs: Vec<&Tensor<T>> = (0..node.inputs.len()).map(input).collect();
                f.backward(&inputs, out, g, needs)
            }
        }
    }
}

pub(crate) fn softmax_raw<T: Real>(x: &[T], tau: T) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl<T: Real> Tensor<T> {
    fn clone_value(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }
}

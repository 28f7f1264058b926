//! Central finite-difference gradient checking in double precision.
//!
//! The numeric side only ever calls the forward closure, so it stays
//! independent of every backward rule it checks.

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Largest discrepancy found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / (|analytic| + 1e-8)`.
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let v = tape.value(root);
    if !v.is_scalar() {
        return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Analytic gradients of the scalar `f` w.r.t. every `requires_grad` input.
pub fn analytic_gradients<F>(
    inputs: &[Tensor<f64>],
    f: &F,
) -> Result<Vec<Option<Vec<f64>>>, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            t.get_requires_grad().then(|| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
        })
        .collect())
}

/// Compares analytic and central-difference gradients on every element of
/// every input marked `requires_grad`.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.get_requires_grad())
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_coords(inputs, step, &coords, f)
}

/// Like [`check`] but restricted to the given `(input, element)` pairs.
pub fn check_coords<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    coords: &[(usize, usize)],
    f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &(i, j) in coords {
        let Some(grad) = &analytic[i] else { continue };
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = evaluate(&work, &f)?;
        work[i].data_mut()[j] = orig - step;
        let minus = evaluate(&work, &f)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(grad[j], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((i, j, grad[j], numeric));
        }
    }
    Ok(report)
}

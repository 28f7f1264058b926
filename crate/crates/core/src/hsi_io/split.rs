use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{HsiError, PatchSet};
use crate::rng::{stream, Stream};

/// Stratified random train / validation / test split.
///
/// The validation set is carved out of the training sample, so
/// `train + val ≈ train_fraction · N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Fraction of the training sample moved to validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.0336,
            val_fraction: 0.01,
            seed: 0,
        }
    }
}

/// Indices into the [`PatchSet`] entries, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `total` items into per-class quotas by largest remainder so the
/// sum equals `round(total_items · fraction)`.
fn allocate(counts: [usize; 2], fraction: f64) -> [usize; 2] {
    let n: usize = counts.iter().sum();
    let target = (n as f64 * fraction).round() as usize;
    let exact = counts.map(|c| c as f64 * fraction);
    let mut alloc = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

pub fn split(patches: &PatchSet<'_>, spec: &SplitSpec) -> Result<Split, HsiError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(HsiError::InvalidSplit(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(HsiError::InvalidSplit(format!(
            "validation fraction {} outside [0, 1)",
            spec.val_fraction
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, e) in patches.entries().iter().enumerate() {
        by_class[e.label as usize].push(i);
    }
    let counts = [by_class[0].len(), by_class[1].len()];
    let n_train = allocate(counts, spec.train_fraction);
    for c in 0..2 {
        if counts[c] > 0 && n_train[c] == 0 {
            return Err(HsiError::Stratification(c as u8));
        }
    }
    let mut n_val = allocate(n_train, spec.val_fraction);
    for c in 0..2 {
        // keep at least one training sample per present class
        n_val[c] = n_val[c].min(n_train[c].saturating_sub(1));
    }

    let mut rng = stream(spec.seed, Stream::Split);
    let mut out = Split::default();
    for c in 0..2 {
        let mut idx = by_class[c].clone();
        idx.shuffle(&mut rng);
        out.val.extend_from_slice(&idx[..n_val[c]]);
        out.train.extend_from_slice(&idx[n_val[c]..n_train[c]]);
        out.test.extend_from_slice(&idx[n_train[c]..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

//! Hard-selection inference, sharded over worker threads.

use std::num::NonZeroUsize;
use std::thread;

use super::metrics::{metrics, ConfusionMatrix, MetricsReport};
use super::TrainError;
use crate::hsi_io::{extract_patch, HsiCube, PatchSet};
use crate::network::EcdbsModel;

/// Environment variable capping the number of evaluation threads.
pub const THREADS_ENV: &str = "ECDBS_THREADS";

/// Worker count for `jobs` items: available cores, capped by
/// `ECDBS_THREADS` and by the job count.
pub fn worker_count(jobs: usize) -> usize {
    let cores = thread::available_parallelism().map_or(1, NonZeroUsize::get);
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(cores);
    cap.min(cores).min(jobs).max(1)
}

/// Maps `f` over `0..n` in contiguous shards; output order is input order.
pub(crate) fn par_map<U, F>(n: usize, f: F) -> Result<Vec<U>, TrainError>
where
    U: Send,
    F: Fn(usize) -> Result<U, TrainError> + Sync,
{
    let workers = worker_count(n);
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = w * chunk..((w + 1) * chunk).min(n);
                scope.spawn(move || range.map(f).collect::<Result<Vec<U>, TrainError>>())
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().map_err(|_| TrainError::WorkerPanic)??);
        }
        Ok(out)
    })
}

fn class_of(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

/// Predicted class of the given patch-set entries.
pub fn predict_indices(
    model: &EcdbsModel<f32>,
    patches: &PatchSet<'_>,
    indices: &[usize],
) -> Result<Vec<u8>, TrainError> {
    let bands = model.selected_bands()?;
    par_map(indices.len(), |k| {
        Ok(class_of(
            model.predict_with(&bands, &patches.patch(indices[k]))?,
        ))
    })
}

/// Predicted class of every pixel of `diff`, row-major.
pub fn predict_map(model: &EcdbsModel<f32>, diff: &HsiCube) -> Result<Vec<u8>, TrainError> {
    let bands = model.selected_bands()?;
    let (h, w) = (diff.height(), diff.width());
    let s = model.config.patch_size;
    if diff.bands() != model.config.bands {
        return Err(TrainError::ShapeMismatch(format!(
            "cube has {} bands, model expects {}",
            diff.bands(),
            model.config.bands
        )));
    }
    par_map(h * w, |k| {
        let patch = extract_patch(diff, k / w, k % w, s);
        Ok(class_of(model.predict_with(&bands, &patch)?))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    /// Aligned with the evaluated indices.
    pub predictions: Vec<u8>,
}

/// Metrics of the hardened model over the labelled `indices`.
pub fn evaluate(
    model: &EcdbsModel<f32>,
    patches: &PatchSet<'_>,
    indices: &[usize],
) -> Result<Evaluation, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let predictions = predict_indices(model, patches, indices)?;
    let labels: Vec<u8> = indices
        .iter()
        .map(|&i| patches.entries()[i].label)
        .collect();
    let confusion = ConfusionMatrix::from_predictions(&predictions, &labels);
    Ok(Evaluation {
        report: metrics(&confusion)?,
        confusion,
        predictions,
    })
}

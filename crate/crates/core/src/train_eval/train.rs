//! Mini-batch training with temperature annealing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, par_map};
use super::loss::{selection_entropy_var, total_loss_var, weighted_bce_mean, LossConfig};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::TrainError;
use crate::band_select::{harden, temperature_at, SelectionMatrix, TemperatureSchedule};
use crate::hsi_io::{HsiCube, PatchSet, Split};
use crate::network::{EcdbsModel, FrozenGraph, ModelConfig, Parameterized};
use crate::rng::{stream, Stream};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Set from the run-level seed, never read from a config document.
    #[serde(skip)]
    pub seed: u64,
    pub tau_initial: f64,
    pub tau_final: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            tau_initial: 1.0,
            tau_final: 0.01,
        }
    }
}

impl TrainConfig {
    /// Reaches `tau_final` on the last epoch.
    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule {
            initial: self.tau_initial,
            final_tau: self.tau_final,
            total_epochs: self.epochs.saturating_sub(1),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.adam.lr > 0.0
            && (0.0..1.0).contains(&self.adam.beta1)
            && (0.0..1.0).contains(&self.adam.beta2)
            && self.adam.eps > 0.0)
        {
            return Err(TrainError::InvalidConfig(format!(
                "invalid optimiser settings {:?}",
                self.adam
            )));
        }
        self.schedule().validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tau: f64,
    pub train_loss: f64,
    /// NaN when there is no validation split.
    pub val_oa: f64,
    pub val_kappa: f64,
    /// Mean band weights over the training patches after the epoch.
    pub weights: Vec<f64>,
    /// Hardened pick per cluster.
    pub selected: Vec<usize>,
    /// Position of each row maximum of the soft `E` at `tau`.
    pub soft_argmax: Vec<usize>,
    /// Smallest row maximum of the soft `E` at `tau`.
    pub min_row_max: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model of the best validation-Kappa epoch (ties go to the later one).
    pub best: EcdbsModel<f32>,
    pub best_epoch: usize,
    pub last: EcdbsModel<f32>,
    pub log: Vec<EpochLog>,
}

/// Clusters the difference image and initialises a model from the
/// configuration's seed.
pub fn build_model(config: ModelConfig, diff: &HsiCube) -> Result<EcdbsModel<f32>, TrainError> {
    let graph = FrozenGraph::build(diff, config.neighbors, config.clusters, config.seed)?;
    let mut rng = stream(config.seed, Stream::Init);
    Ok(EcdbsModel::init(config, graph, &mut rng)?)
}

fn patch_tensor(patches: &PatchSet<'_>, i: usize) -> Result<Tensor<f32>, TrainError> {
    let s = patches.size();
    let b = patches.cube().bands();
    Ok(Tensor::new(&[b, s, s], patches.patch(i))?)
}

/// Mean of the per-patch band weights over `indices`, accumulated in index
/// order so the result does not depend on the thread count.
pub fn epoch_band_weights(
    model: &EcdbsModel<f32>,
    patches: &PatchSet<'_>,
    indices: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let per_patch = par_map(indices.len(), |k| {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.constant(patch_tensor(patches, indices[k])?);
        let w = model.patch_weights(&mut tape, &vars, x)?;
        Ok(tape.value(w).data().to_vec())
    })?;
    let mut mean = vec![0.0; model.config.bands];
    for w in &per_patch {
        for (m, &v) in mean.iter_mut().zip(w) {
            *m += f64::from(v);
        }
    }
    let n = per_patch.len().max(1) as f64;
    Ok(mean.into_iter().map(|v| v / n).collect())
}

fn soft_argmax(e: &SelectionMatrix) -> Vec<usize> {
    (0..e.clusters())
        .map(|i| {
            let row = e.row(i);
            (0..e.bands).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// One optimiser step on a mini-batch; returns the batch loss.
fn train_step(
    model: &mut EcdbsModel<f32>,
    patches: &PatchSet<'_>,
    batch: &[usize],
    tau: f64,
    loss_cfg: &LossConfig,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let inputs = batch
        .iter()
        .map(|&i| Ok(tape.constant(patch_tensor(patches, i)?)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (probs, _, e) = model.forward_batch(&mut tape, &vars, &inputs, tau)?;
    let changed = probs
        .iter()
        .map(|&p| tape.index(p, 1))
        .collect::<Result<Vec<_>, _>>()?;
    let p = tape.concat(&changed, 0)?;
    let labels: Vec<u8> = batch.iter().map(|&i| patches.entries()[i].label).collect();
    let l_c = weighted_bce_mean(&mut tape, p, &labels, loss_cfg)?;
    let l_e = selection_entropy_var(&mut tape, e)?;
    let loss = total_loss_var(&mut tape, l_c, l_e, loss_cfg.alpha)?;
    let value = f64::from(tape.value(loss).data()[0]);
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let handles = vars.params();
    let mut params = model.parameters_mut();
    let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    let grads: Vec<&[f32]> = handles
        .iter()
        .zip(&zeros)
        .map(|(&v, z)| tape.grad(v).unwrap_or(z))
        .collect();
    adam_step(&mut params, &grads, adam, adam_cfg)?;
    Ok(value)
}

pub fn train(
    mut model: EcdbsModel<f32>,
    patches: &PatchSet<'_>,
    split: &Split,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let changed = split
        .train
        .iter()
        .filter(|&&i| patches.entries()[i].label == 1)
        .count();
    let unchanged = split.train.len() - changed;
    if changed == 0 || unchanged == 0 {
        return Err(TrainError::UnusableTrainSplit { unchanged, changed });
    }
    if patches.size() != model.config.patch_size || patches.cube().bands() != model.config.bands {
        return Err(TrainError::ShapeMismatch(format!(
            "patches are {}x{}x{}, model expects {}x{}x{}",
            patches.cube().bands(),
            patches.size(),
            patches.size(),
            model.config.bands,
            model.config.patch_size,
            model.config.patch_size
        )));
    }

    let schedule = cfg.schedule();
    let mut rng = stream(cfg.seed, Stream::Shuffle);
    let mut adam = AdamState::default();
    let mut order = split.train.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EcdbsModel<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let tau = temperature_at(epoch, &schedule);
        let last_good = model.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let l = train_step(
                &mut model, patches, batch, tau, loss_cfg, &mut adam, &cfg.adam,
            )?;
            if !l.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            loss_sum += l * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;

        // held at training precision so a checkpoint reload picks the same bands
        let weights: Vec<f64> = epoch_band_weights(&model, patches, &split.train)?
            .into_iter()
            .map(|w| f64::from(w as f32))
            .collect();
        let soft = SelectionMatrix::from_weights(&weights, &model.graph.clusters, tau);
        let (_, selected) = harden(&soft);
        let min_row_max = (0..soft.clusters())
            .map(|i| soft.row_max(i))
            .fold(f64::INFINITY, f64::min);
        model.band_weights = Some(weights.clone());

        let (val_oa, val_kappa) = if split.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let ev = evaluate(&model, patches, &split.val)?;
            (ev.report.oa, ev.report.kappa)
        };
        log::info!(
            "epoch {epoch:>4}  tau {tau:.4}  loss {train_loss:.5}  val OA {val_oa:.4}  val kappa {val_kappa:.4}  bands {selected:?}"
        );
        let score = if val_kappa.is_nan() {
            f64::NEG_INFINITY
        } else {
            val_kappa
        };
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, epoch, model.clone()));
        }
        log.push(EpochLog {
            epoch,
            tau,
            train_loss,
            val_oa,
            val_kappa,
            soft_argmax: soft_argmax(&soft),
            weights,
            selected,
            min_row_max,
        });
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log,
    })
}

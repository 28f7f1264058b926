//! Synthetic bitemporal scenes with planted changes and known informative bands.
//!
//! Bands come in contiguous groups. `t1` is a smooth field per group, scaled
//! and shifted per band. `t2` adds to `t1`:
//!
//! - a spatially white perturbation shared by all bands of a group, so the
//!   difference image keeps the group structure the clustering should find;
//! - inside planted rectangles, a positive offset on the informative bands only;
//! - i.i.d. Gaussian noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::hsi_io::{HsiCube, Label, LabelMask};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Set from the run-level seed, never read from a config document.
    #[serde(skip)]
    pub seed: u64,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Number of contiguous correlated band groups.
    pub groups: usize,
    /// Informative bands; empty means the second band of every group with
    /// at least two bands.
    pub informative: Vec<usize>,
    /// Target fraction of changed pixels, in `[0, 0.5)`.
    pub change_fraction: f64,
    /// Standard deviation of the per-band i.i.d. noise.
    pub noise_sigma: f64,
    /// Standard deviation of the group-shared perturbation.
    pub group_sigma: f64,
    /// Range of the change offset on informative bands.
    pub offset_min: f64,
    pub offset_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            bands: 32,
            height: 64,
            width: 64,
            groups: 8,
            informative: Vec::new(),
            change_fraction: 0.2,
            noise_sigma: 0.05,
            group_sigma: 0.3,
            offset_min: 0.6,
            offset_max: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn informative_bands(&self) -> Vec<usize> {
        if !self.informative.is_empty() {
            let mut v = self.informative.clone();
            v.sort_unstable();
            v.dedup();
            return v;
        }
        (0..self.groups)
            .map(|g| self.group_range(g))
            .filter(|r| r.len() >= 2)
            .map(|r| r.start + 1)
            .collect()
    }

    fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        g * self.bands / self.groups..(g + 1) * self.bands / self.groups
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.bands < 2 || self.height == 0 || self.width == 0 {
            return bad(format!(
                "scene {}x{}x{} too small",
                self.bands, self.height, self.width
            ));
        }
        if self.groups == 0 || self.groups > self.bands {
            return bad(format!("{} groups for {} bands", self.groups, self.bands));
        }
        if !(0.0..0.5).contains(&self.change_fraction) {
            return bad(format!(
                "change fraction {} outside [0, 0.5)",
                self.change_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.group_sigma >= 0.0)
            || !(0.0 <= self.offset_min && self.offset_min <= self.offset_max)
        {
            return bad("noise levels and offsets must be nonnegative".into());
        }
        let informative = self.informative_bands();
        if informative.is_empty() {
            return Err(TrainError::NoInformativeBands);
        }
        if let Some(&b) = informative.iter().find(|&&b| b >= self.bands) {
            return bad(format!("informative band {b} outside [0, {})", self.bands));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub t1: HsiCube,
    pub t2: HsiCube,
    pub labels: LabelMask,
    pub informative: Vec<usize>,
    /// Group id of every band.
    pub band_groups: Vec<usize>,
}

/// Sum of four random low-frequency plane waves.
fn smooth_field<R: Rng>(h: usize, w: usize, rng: &mut R) -> Vec<f64> {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.3..1.0),
                rng.random_range(0.5..3.0) / h as f64,
                rng.random_range(0.5..3.0) / w as f64,
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    (0..h * w)
        .map(|k| {
            let (r, c) = ((k / w) as f64, (k % w) as f64);
            waves
                .iter()
                .map(|[a, fr, fc, ph]| a * (2.0 * PI * (fr * r + fc * c) + ph).sin())
                .sum()
        })
        .collect()
}

/// Random rectangles until at least `fraction` of the pixels are covered.
fn plant_changes<R: Rng>(h: usize, w: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    let target = (fraction * (h * w) as f64).ceil() as usize;
    let mut covered = 0;
    let max_side = (h.min(w) / 4).max(2);
    while covered < target {
        let rh = rng.random_range(2..=max_side).min(h);
        let rw = rng.random_range(2..=max_side).min(w);
        let r0 = rng.random_range(0..=h - rh);
        let c0 = rng.random_range(0..=w - rw);
        for r in r0..r0 + rh {
            for c in c0..c0 + rw {
                if !mask[r * w + c] {
                    mask[r * w + c] = true;
                    covered += 1;
                }
            }
        }
    }
    mask
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthScene, TrainError> {
    cfg.validate()?;
    let (b, h, w) = (cfg.bands, cfg.height, cfg.width);
    let n = h * w;
    let mut rng = stream(cfg.seed, Stream::Synth);
    let informative = cfg.informative_bands();
    let band_groups: Vec<usize> = (0..cfg.groups)
        .flat_map(|g| cfg.group_range(g).map(move |_| g))
        .collect();
    debug_assert_eq!(band_groups.len(), b);

    let fields: Vec<Vec<f64>> = (0..cfg.groups)
        .map(|_| smooth_field(h, w, &mut rng))
        .collect();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let shared: Vec<Vec<f64>> = (0..cfg.groups)
        .map(|_| {
            (0..n)
                .map(|_| cfg.group_sigma * unit.sample(&mut rng))
                .collect()
        })
        .collect();
    let changed = plant_changes(h, w, cfg.change_fraction, &mut rng);

    let mut t1 = Vec::with_capacity(b * n);
    let mut t2 = Vec::with_capacity(b * n);
    for (j, &g) in band_groups.iter().enumerate() {
        let gain = rng.random_range(0.8..1.2);
        let bias = rng.random_range(-0.2..0.2);
        let offset = if informative.binary_search(&j).is_ok() {
            rng.random_range(cfg.offset_min..=cfg.offset_max)
        } else {
            0.0
        };
        for k in 0..n {
            let base = gain * fields[g][k] + bias;
            let noise = cfg.noise_sigma * unit.sample(&mut rng);
            let delta = shared[g][k] + if changed[k] { offset } else { 0.0 } + noise;
            t1.push(base as f32);
            t2.push((base + delta) as f32);
        }
    }
    let labels = changed
        .iter()
        .map(|&c| if c { Label::Changed } else { Label::Unchanged } as u8)
        .collect();
    Ok(SynthScene {
        t1: HsiCube::new(b, h, w, t1)?,
        t2: HsiCube::new(b, h, w, t2)?,
        labels: LabelMask::new(h, w, labels)?,
        informative,
        band_groups,
    })
}

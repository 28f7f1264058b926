use rand::Rng;

use super::bsa::{bsa_block_forward, BsaBlock, BsaVars};
use super::NetworkError;
use crate::band_graph::{
    build_similarity, normalize_adjacency, spectral_cluster, AssignmentMatrix,
};
use crate::band_select::{
    apply_selection, band_weights, diffuse, intra_cluster_softmax, kaiming, mean_of,
    selected_bands, similarity_vector, DiffusionLayer, HeadVars, SimilarityMetric, WeightingHead,
};
use crate::hsi_io::HsiCube;
use crate::real::{Real, DEFAULT_EPS};
use crate::tensor::{Padding, Tape, Tensor, TensorError, Var};

/// Architecture hyperparameters frozen into a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub clusters: usize,
    pub expansion: usize,
    pub patch_size: usize,
    pub hidden: usize,
    pub neighbors: usize,
    pub seed: u64,
    pub similarity_metric: SimilarityMetric,
}

impl ModelConfig {
    pub fn new(bands: usize, clusters: usize) -> Self {
        Self {
            bands,
            clusters,
            expansion: 3,
            patch_size: 5,
            hidden: 64,
            neighbors: crate::band_graph::DEFAULT_NEIGHBORS,
            seed: 0,
            similarity_metric: SimilarityMetric::L2,
        }
    }

    pub fn channels(&self) -> usize {
        self.clusters * self.expansion
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.patch_size < 5 || self.patch_size.is_multiple_of(2) {
            return Err(NetworkError::PatchTooSmall(self.patch_size));
        }
        if self.clusters < 2 || self.clusters >= self.bands {
            return Err(NetworkError::InvalidConfig(format!(
                "{} clusters for {} bands (need 2 <= b < B)",
                self.clusters, self.bands
            )));
        }
        if self.expansion == 0 || self.hidden == 0 {
            return Err(NetworkError::InvalidConfig(
                "expansion rate and hidden width must be positive".into(),
            ));
        }
        if self.neighbors == 0 || self.neighbors >= self.bands {
            return Err(NetworkError::InvalidConfig(format!(
                "neighbour count {} for {} bands",
                self.neighbors, self.bands
            )));
        }
        Ok(())
    }
}

/// Normalised band adjacency `Â` and cluster assignment `C`, computed once
/// from the difference image and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenGraph {
    /// Row-major `B×B`, stored at training precision.
    pub a_hat: Vec<f32>,
    pub clusters: AssignmentMatrix,
}

impl FrozenGraph {
    pub fn build(
        diff: &HsiCube,
        neighbors: usize,
        clusters: usize,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let a = build_similarity(diff, neighbors)?;
        let a_hat = normalize_adjacency(&a);
        let clusters = spectral_cluster(&a, clusters, seed)?;
        Ok(Self {
            a_hat: a_hat.data().iter().map(|&v| v as f32).collect(),
            clusters,
        })
    }

    pub fn bands(&self) -> usize {
        self.clusters.bands()
    }
}

/// Anything holding learnable tensors in a fixed order.
pub trait Parameterized<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

pub fn count_parameters<T: Real, M: Parameterized<T>>(model: &M) -> usize {
    model.parameters().iter().map(|(_, t)| t.numel()).sum()
}

fn register<T: Real>(tape: &mut Tape<T>, t: &Tensor<T>, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Convolution kernel with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
}

impl<T: Real> ConvLayer<T> {
    fn init<R: Rng>(c_out: usize, c_in_per_group: usize, k: usize, rng: &mut R) -> Self {
        Self {
            kernel: kaiming(&[c_out, c_in_per_group, k, k], c_in_per_group * k * k, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ConvVars {
        ConvVars {
            kernel: register(tape, &self.kernel, trainable),
            bias: register(tape, &self.bias, trainable),
        }
    }
}

/// Two fully connected layers and a softmax over {unchanged, changed}.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    /// `H×F`
    pub theta1: Tensor<T>,
    pub bias1: Tensor<T>,
    /// `2×H`
    pub theta2: Tensor<T>,
    pub bias2: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierVars {
    pub theta1: Var,
    pub bias1: Var,
    pub theta2: Var,
    pub bias2: Var,
}

impl<T: Real> Classifier<T> {
    pub fn init<R: Rng>(features: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            theta1: kaiming(&[hidden, features], features, rng),
            bias1: Tensor::zeros(&[hidden]),
            theta2: kaiming(&[2, hidden], hidden, rng),
            bias2: Tensor::zeros(&[2]),
        }
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ClassifierVars {
        ClassifierVars {
            theta1: register(tape, &self.theta1, trainable),
            bias1: register(tape, &self.bias1, trainable),
            theta2: register(tape, &self.theta2, trainable),
            bias2: register(tape, &self.bias2, trainable),
        }
    }

    /// Class probabilities for a fused feature vector.
    pub fn forward(tape: &mut Tape<T>, vars: &ClassifierVars, x: Var) -> Result<Var, TensorError> {
        let h = dense(tape, vars.theta1, vars.bias1, x)?;
        let z = dense(tape, vars.theta2, vars.bias2, h)?;
        tape.softmax(z, T::one())
    }
}

fn dense<T: Real>(tape: &mut Tape<T>, w: Var, b: Var, x: Var) -> Result<Var, TensorError> {
    let n = tape.value(x).numel();
    let col = tape.reshape(x, &[n, 1])?;
    let y = tape.matmul(w, col)?;
    let out = tape.shape(w)[0];
    let y = tape.reshape(y, &[out])?;
    tape.add(y, b)
}

impl<T> Parameterized<T> for Classifier<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("theta1".into(), &self.theta1),
            ("bias1".into(), &self.bias1),
            ("theta2".into(), &self.theta2),
            ("bias2".into(), &self.bias2),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.theta1,
            &mut self.bias1,
            &mut self.theta2,
            &mut self.bias2,
        ]
    }
}

/// The full change detector.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdbsModel<T> {
    pub config: ModelConfig,
    pub graph: FrozenGraph,
    pub diffusion: DiffusionLayer<T>,
    pub head: WeightingHead<T>,
    pub expand: ConvLayer<T>,
    pub bsa1: BsaBlock<T>,
    pub reduce1: ConvLayer<T>,
    pub bsa2: BsaBlock<T>,
    pub reduce2: ConvLayer<T>,
    pub classifier: Classifier<T>,
    /// Training-set mean band weights of the last epoch; drives the hard
    /// band pick at inference.
    pub band_weights: Option<Vec<f64>>,
}

/// Tape handles of every model parameter plus the constant `Â`.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub a_hat: Var,
    pub diffusion: Var,
    pub head: HeadVars,
    pub expand: ConvVars,
    pub bsa1: BsaVars,
    pub reduce1: ConvVars,
    pub bsa2: BsaVars,
    pub reduce2: ConvVars,
    pub classifier: ClassifierVars,
}

impl ModelVars {
    /// Parameter handles in [`Parameterized::parameters`] order.
    pub fn params(&self) -> Vec<Var> {
        let h = &self.head;
        let c = &self.classifier;
        vec![
            self.diffusion,
            h.w0,
            h.b0,
            h.w1,
            h.b1,
            h.gamma,
            h.beta,
            self.expand.kernel,
            self.expand.bias,
            self.bsa1.kernel,
            self.bsa1.bias,
            self.bsa1.gamma,
            self.bsa1.beta,
            self.reduce1.kernel,
            self.reduce1.bias,
            self.bsa2.kernel,
            self.bsa2.bias,
            self.bsa2.gamma,
            self.bsa2.beta,
            self.reduce2.kernel,
            self.reduce2.bias,
            c.theta1,
            c.bias1,
            c.theta2,
            c.bias2,
        ]
    }
}

/// Intermediate feature maps of one classification pass.
#[derive(Debug, Clone, Copy)]
pub struct Taps {
    pub x_b1: Var,
    pub x_b2: Var,
    pub x_b3: Var,
    pub x_a: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub probs: Var,
    pub weights: Var,
    pub selection: Var,
    pub taps: Taps,
}

impl<T: Real> EcdbsModel<T> {
    pub fn init<R: Rng>(
        config: ModelConfig,
        graph: FrozenGraph,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        if graph.bands() != config.bands || graph.clusters.clusters() != config.clusters {
            return Err(NetworkError::InvalidConfig(format!(
                "graph has {} bands in {} clusters, config expects {} in {}",
                graph.bands(),
                graph.clusters.clusters(),
                config.bands,
                config.clusters
            )));
        }
        let (b, e) = (config.clusters, config.expansion);
        let c = config.channels();
        let m = config.patch_size * config.patch_size;
        Ok(Self {
            diffusion: DiffusionLayer::init(m, rng),
            head: WeightingHead::init(config.bands, rng),
            expand: ConvLayer::init(c, 1, 1, rng),
            bsa1: BsaBlock::init(b, e, rng),
            reduce1: ConvLayer::init(c, c, 3, rng),
            bsa2: BsaBlock::init(b, e, rng),
            reduce2: ConvLayer::init(c, c, 3, rng),
            classifier: Classifier::init(3 * c, config.hidden, rng),
            band_weights: None,
            graph,
            config,
        })
    }

    /// Registers every parameter on `tape`; `trainable = false` records them
    /// as constants for inference.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        let bands = self.config.bands;
        let a_hat = tape.constant(Tensor::from_fn(&[bands, bands], |i| {
            T::of(f64::from(self.graph.a_hat[i]))
        }));
        let diffusion = register(tape, &self.diffusion.weight, trainable);
        let h = &self.head;
        let head = HeadVars {
            w0: register(tape, &h.w0, trainable),
            b0: register(tape, &h.b0, trainable),
            w1: register(tape, &h.w1, trainable),
            b1: register(tape, &h.b1, trainable),
            gamma: register(tape, &h.gamma, trainable),
            beta: register(tape, &h.beta, trainable),
        };
        let bsa = |tape: &mut Tape<T>, blk: &BsaBlock<T>| BsaVars {
            kernel: register(tape, &blk.kernel, trainable),
            bias: register(tape, &blk.bias, trainable),
            gamma: register(tape, &blk.gamma, trainable),
            beta: register(tape, &blk.beta, trainable),
        };
        let expand = self.expand.bind(tape, trainable);
        let bsa1 = bsa(tape, &self.bsa1);
        let reduce1 = self.reduce1.bind(tape, trainable);
        let bsa2 = bsa(tape, &self.bsa2);
        let reduce2 = self.reduce2.bind(tape, trainable);
        let classifier = self.classifier.bind(tape, trainable);
        ModelVars {
            a_hat,
            diffusion,
            head,
            expand,
            bsa1,
            reduce1,
            bsa2,
            reduce2,
            classifier,
        }
    }

    fn check_patch(&self, tape: &Tape<T>, patch: Var, bands: usize) -> Result<(), NetworkError> {
        let s = self.config.patch_size;
        let shape = tape.shape(patch);
        if shape != [bands, s, s] {
            return Err(NetworkError::PatchShape {
                expected: bands * s * s,
                got: tape.value(patch).numel(),
            });
        }
        Ok(())
    }

    /// Band weights `w` of one `B×s×s` patch.
    pub fn patch_weights(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        patch: Var,
    ) -> Result<Var, NetworkError> {
        self.check_patch(tape, patch, self.config.bands)?;
        let m = self.config.patch_size * self.config.patch_size;
        let x = tape.reshape(patch, &[self.config.bands, m])?;
        let xbar = diffuse(tape, x, vars.a_hat, vars.diffusion)?;
        let s = similarity_vector(tape, xbar, self.config.similarity_metric)?;
        Ok(band_weights(tape, s, &vars.head, T::of(DEFAULT_EPS))?)
    }

    /// Selection matrix `E` from (batch-mean) weights.
    pub fn selection(&self, tape: &mut Tape<T>, w: Var, tau: f64) -> Result<Var, NetworkError> {
        Ok(intra_cluster_softmax(tape, w, &self.graph.clusters, tau)?)
    }

    /// Probabilities and taps for a reduced `b×s×s` patch.
    pub fn classify(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        chi: Var,
    ) -> Result<(Var, Taps), NetworkError> {
        self.check_patch(tape, chi, self.config.clusters)?;
        let b = self.config.clusters;
        let eps = DEFAULT_EPS;
        let x = tape.conv2d(
            chi,
            vars.expand.kernel,
            Some(vars.expand.bias),
            b,
            Padding::Same,
        )?;
        let x_b1 = bsa_block_forward(tape, x, &vars.bsa1, b, eps)?;
        let x = tape.conv2d(
            x_b1,
            vars.reduce1.kernel,
            Some(vars.reduce1.bias),
            1,
            Padding::None,
        )?;
        let x = tape.relu(x);
        let x_b2 = bsa_block_forward(tape, x, &vars.bsa2, b, eps)?;
        let x = tape.conv2d(
            x_b2,
            vars.reduce2.kernel,
            Some(vars.reduce2.bias),
            1,
            Padding::None,
        )?;
        let x_b3 = tape.relu(x);
        let pooled = [
            tape.global_avg_pool(x_b1)?,
            tape.global_avg_pool(x_b2)?,
            tape.global_avg_pool(x_b3)?,
        ];
        let x_a = tape.concat(&pooled, 0)?;
        let probs = Classifier::forward(tape, &vars.classifier, x_a)?;
        Ok((
            probs,
            Taps {
                x_b1,
                x_b2,
                x_b3,
                x_a,
            },
        ))
    }

    /// End-to-end soft pass for a single `B×s×s` patch at temperature `tau`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        patch: Var,
        tau: f64,
    ) -> Result<Forward, NetworkError> {
        let weights = self.patch_weights(tape, vars, patch)?;
        let selection = self.selection(tape, weights, tau)?;
        let chi = apply_selection(tape, selection, patch)?;
        let (probs, taps) = self.classify(tape, vars, chi)?;
        Ok(Forward {
            probs,
            weights,
            selection,
            taps,
        })
    }

    /// Soft pass for a mini-batch sharing one selection matrix built from the
    /// mean band weights. Returns per-patch probabilities, the mean weights
    /// and `E`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        patches: &[Var],
        tau: f64,
    ) -> Result<(Vec<Var>, Var, Var), NetworkError> {
        let per_patch = patches
            .iter()
            .map(|&p| self.patch_weights(tape, vars, p))
            .collect::<Result<Vec<_>, _>>()?;
        let w = mean_of(tape, &per_patch)?;
        let e = self.selection(tape, w, tau)?;
        let probs = patches
            .iter()
            .map(|&p| {
                let chi = apply_selection(tape, e, p)?;
                Ok(self.classify(tape, vars, chi)?.0)
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Ok((probs, w, e))
    }

    /// Hard band pick per cluster from the stored weights.
    pub fn selected_bands(&self) -> Result<Vec<usize>, NetworkError> {
        let w = self
            .band_weights
            .as_ref()
            .ok_or(NetworkError::NoSelection)?;
        Ok(selected_bands(w, &self.graph.clusters))
    }

    /// Inference on a `B×s×s` patch with exact band gathering.
    pub fn predict_with(&self, bands: &[usize], patch: &[f32]) -> Result<[f64; 2], NetworkError> {
        let s2 = self.config.patch_size * self.config.patch_size;
        let expected = self.config.bands * s2;
        if patch.len() != expected {
            return Err(NetworkError::PatchShape {
                expected,
                got: patch.len(),
            });
        }
        let s = self.config.patch_size;
        let chi = Tensor::from_fn(&[bands.len(), s, s], |i| {
            T::of(f64::from(patch[bands[i / s2] * s2 + i % s2]))
        });
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let chi = tape.constant(chi);
        let (probs, _) = self.classify(&mut tape, &vars, chi)?;
        let p = tape.value(probs).data();
        Ok([p[0].to_f64_lossy(), p[1].to_f64_lossy()])
    }
}

impl<T> Parameterized<T> for EcdbsModel<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("diffusion.weight".to_string(), &self.diffusion.weight)];
        let h = &self.head;
        for (n, t) in [
            ("w0", &h.w0),
            ("b0", &h.b0),
            ("w1", &h.w1),
            ("b1", &h.b1),
            ("gamma", &h.gamma),
            ("beta", &h.beta),
        ] {
            out.push((format!("head.{n}"), t));
        }
        out.push(("expand.kernel".into(), &self.expand.kernel));
        out.push(("expand.bias".into(), &self.expand.bias));
        for (name, blk, red) in [
            ("1", &self.bsa1, &self.reduce1),
            ("2", &self.bsa2, &self.reduce2),
        ] {
            out.push((format!("bsa{name}.kernel"), &blk.kernel));
            out.push((format!("bsa{name}.bias"), &blk.bias));
            out.push((format!("bsa{name}.gamma"), &blk.gamma));
            out.push((format!("bsa{name}.beta"), &blk.beta));
            out.push((format!("reduce{name}.kernel"), &red.kernel));
            out.push((format!("reduce{name}.bias"), &red.bias));
        }
        for (n, t) in self.classifier.parameters() {
            out.push((format!("classifier.{n}"), t));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let h = &mut self.head;
        let mut out = vec![
            &mut self.diffusion.weight,
            &mut h.w0,
            &mut h.b0,
            &mut h.w1,
            &mut h.b1,
            &mut h.gamma,
            &mut h.beta,
            &mut self.expand.kernel,
            &mut self.expand.bias,
        ];
        for (blk, red) in [
            (&mut self.bsa1, &mut self.reduce1),
            (&mut self.bsa2, &mut self.reduce2),
        ] {
            out.extend([
                &mut blk.kernel,
                &mut blk.bias,
                &mut blk.gamma,
                &mut blk.beta,
                &mut red.kernel,
                &mut red.bias,
            ]);
        }
        out.extend(self.classifier.parameters_mut());
        out
    }
}

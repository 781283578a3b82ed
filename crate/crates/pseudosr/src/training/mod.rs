//! Alternating optimization: discriminators on detached fakes, then both
//! translation generators through the weighted objective, then the SR net
//! on pseudo-pairs. One iteration = the three sub-steps in that order.
//!
//! Update isolation is structural: each sub-step builds its own graph and
//! inserts only the networks it owns with gradient tracking; everything
//! else is frozen. Batch-norm buffers are written only by the generator
//! sub-step, which owns the degradation net.

mod checkpoint;
mod run;
mod step;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use run::{run_training, RunArtifacts};
pub use step::{next_batch, substep_discriminators, substep_generators, substep_sr, train_step,
    BatchTensors, DiscriminatorLosses};

use crate::losses::{GanForm, LossError, LossWeights, ReconstructionKind};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("non-finite {term} loss at iteration {iter}")]
    NonFinite { iter: u64, term: &'static str, snapshot: Option<PathBuf> },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] autograd::container::ContainerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Adaptive-moment optimizer settings for one parameter family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl OptimSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config(format!(
                "betas must lie in [0, 1): ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0 && self.lr > 0.0) {
            return Err(TrainError::Config(format!(
                "epsilon and lr must be positive: ({}, {})",
                self.epsilon, self.lr
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> autograd::Adam {
        autograd::Adam::new(self.beta1, self.beta2, self.epsilon)
    }
}

/// Which row of the ablation table this run reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Everything on.
    Full,
    /// No HR discriminator: γ forced to 0, its parameters never move.
    NoDHr,
    /// SR net fed clean down-scales instead of pseudo-clean rasters.
    TrainOnClean,
    /// SR net fed raw synthetic degradations; inference then runs SR alone.
    TrainOnDegraded,
}

/// Linear warm-up of the ensemble-term weight: 0 at iteration 0, the
/// configured λ exactly at `end_iter`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoRamp {
    pub end_iter: u64,
}

impl GeoRamp {
    pub fn factor(&self, iter: u64) -> f64 {
        if self.end_iter == 0 || iter >= self.end_iter {
            1.0
        } else {
            iter as f64 / self.end_iter as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub gan_form: GanForm,
    pub reconstruction: ReconstructionKind,
    pub optim_gan: OptimSpec,
    pub optim_sr: OptimSpec,
    pub total_iters: u64,
    pub lr_milestones: Vec<u64>,
    pub batch: usize,
    pub lr_patch: usize,
    pub scale: usize,
    pub seed: u64,
    pub variant: Variant,
    pub geo_ramp: Option<GeoRamp>,
    /// Intermediate checkpoint cadence in iterations; 0 = final only.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper(2)
    }
}

impl TrainConfig {
    /// Full-scale settings: 300k iterations, batch 16 of 32px LR patches,
    /// halvings at 100k/180k/240k/280k, ensemble weight ramped over the
    /// first tenth of the run.
    pub fn paper(scale: usize) -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            gan_form: GanForm::Nonsaturating,
            reconstruction: ReconstructionKind::L1,
            optim_gan: OptimSpec { beta1: 0.5, beta2: 0.999, epsilon: 1e-8, lr: 1e-4 },
            optim_sr: OptimSpec { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, lr: 1e-4 },
            total_iters: 300_000,
            lr_milestones: vec![100_000, 180_000, 240_000, 280_000],
            batch: 16,
            lr_patch: 32,
            scale,
            seed: 0,
            variant: Variant::Full,
            geo_ramp: Some(GeoRamp { end_iter: 30_000 }),
            checkpoint_every: 10_000,
        }
    }

    /// CPU-scale settings for tests and smoke runs; pairs with the desk
    /// network preset.
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 2_000,
            lr_milestones: vec![1_000, 1_600],
            batch: 4,
            lr_patch: 8,
            scale: 2,
            geo_ramp: Some(GeoRamp { end_iter: 200 }),
            checkpoint_every: 1_000,
            ..TrainConfig::paper(2)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        self.optim_gan.validate()?;
        self.optim_sr.validate()?;
        if self.total_iters == 0 || self.batch == 0 || self.lr_patch == 0 {
            return Err(TrainError::Config(
                "total_iters, batch and lr_patch must be positive".into(),
            ));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(TrainError::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::Config(format!(
                "lr milestones must be strictly increasing: {:?}",
                self.lr_milestones
            )));
        }
        Ok(())
    }

    /// The ensemble-term weight in effect at `iter`.
    pub fn lambda_geo_at(&self, iter: u64) -> f64 {
        let f = self.geo_ramp.map_or(1.0, |r| r.factor(iter));
        self.weights.lambda_geo * f
    }

    /// The HR adversarial weight in effect (zero under the no-HR variant).
    pub fn gamma_eff(&self) -> f64 {
        match self.variant {
            Variant::NoDHr => 0.0,
            _ => self.weights.gamma,
        }
    }
}

/// Stepped halving for every network except the SR net (whose rate stays
/// constant): base · 0.5^(number of milestones ≤ iter).
pub fn lr_schedule(base_lr: f64, iter: u64, milestones: &[u64]) -> f64 {
    assert!(base_lr > 0.0, "lr_schedule needs a positive base rate");
    let halvings = milestones.iter().filter(|&&m| m <= iter).count();
    base_lr * 0.5f64.powi(halvings as i32)
}

/// Mutable loop state: completed-iteration count and the two RNG lanes
/// (patch sampling and degradation noise), each restored exactly by a
/// checkpoint. `best_snapshot` is session-local plumbing for evaluation
/// during training and is not part of the checkpoint contract.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub iter: u64,
    pub data_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub best_snapshot: Option<PathBuf>,
}

pub(crate) const DATA_STREAM: u64 = 10;
pub(crate) const NOISE_STREAM: u64 = 11;

impl TrainState {
    /// Fresh state at iteration 0. RNG lanes use dedicated streams so they
    /// are independent of the network-init draws made from the same seed.
    pub fn new(seed: u64) -> Self {
        let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
        data_rng.set_stream(DATA_STREAM);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(NOISE_STREAM);
        TrainState { iter: 0, data_rng, noise_rng, best_snapshot: None }
    }
}

/// One JSON line of the run log: iteration index, the learning rates in
/// effect, discriminator losses, and every objective component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub lr_gan: f64,
    pub lr_sr: f64,
    pub d_x: f64,
    pub d_yd: f64,
    pub d_hr: f64,
    pub adv_x: f64,
    pub adv_yd: f64,
    pub adv_hr: f64,
    pub cyc: f64,
    pub idt: f64,
    pub geo: f64,
    pub rec: f64,
    pub total_trans: f64,
}

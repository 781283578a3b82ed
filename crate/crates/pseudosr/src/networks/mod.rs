//! Network builders and forward contracts: the two LR-domain generators,
//! the SR network, and the three patch discriminators.
//!
//! Every network owns a `ParamStore` created from an explicit seed, so
//! construction is deterministic and the six parameter sets are disjoint by
//! construction. Forward passes go through a caller-supplied `Graph`, which
//! lets one training sub-step freeze any subset of networks by inserting
//! their parameters without gradient tracking.

mod degrade_net;
mod discriminator;
mod layers;
mod rcan;

pub use degrade_net::DegradationNet;
pub use discriminator::Discriminator;
pub use layers::BnMode;
pub use rcan::RcanNet;

use autograd::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Negative slope shared by every LeakyReLU in the model family.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Architecture hyperparameters. `scale` is read by the SR network and the
/// HR discriminator; the size-preserving nets ignore it. The `disc_*` fields
/// are read only by discriminator builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub n_residual_groups: usize,
    pub rcabs_per_group: usize,
    pub base_channels: usize,
    pub scale: usize,
    /// Channel-attention bottleneck ratio (channels / reduction ≥ 1).
    pub reduction: usize,
    /// Widths of the first four discriminator layers (the fifth emits 1).
    pub disc_widths: [usize; 4],
    pub disc_kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_residual_groups: 5,
            rcabs_per_group: 10,
            base_channels: 64,
            scale: 2,
            reduction: 16,
            disc_widths: [64, 128, 256, 512],
            disc_kernel: 5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.n_residual_groups == 0 || self.rcabs_per_group == 0 || self.base_channels == 0 {
            return Err(NetworkError::Config(format!(
                "groups/rcabs/channels must be positive, got {}/{}/{}",
                self.n_residual_groups, self.rcabs_per_group, self.base_channels
            )));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(NetworkError::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.reduction == 0 || self.base_channels % self.reduction != 0 {
            return Err(NetworkError::Config(format!(
                "reduction {} must be positive and divide base_channels {}",
                self.reduction, self.base_channels
            )));
        }
        if self.disc_widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::Config("discriminator widths must be positive".into()));
        }
        if self.disc_kernel < 3 || self.disc_kernel % 2 == 0 {
            return Err(NetworkError::Config(format!(
                "discriminator kernel must be odd and >= 3, got {}",
                self.disc_kernel
            )));
        }
        Ok(())
    }
}

/// Size-preserving correction generator: RCAN body without an upscaler.
pub fn build_correction_generator<S: Scalar>(
    cfg: &NetworkConfig,
    seed: u64,
) -> Result<RcanNet<S>, NetworkError> {
    RcanNet::build("g_correct", cfg, 1, &mut net_rng(seed, 1))
}

/// Upscaling SR network: RCAN body plus sub-pixel tail for cfg.scale.
pub fn build_sr_network<S: Scalar>(
    cfg: &NetworkConfig,
    seed: u64,
) -> Result<RcanNet<S>, NetworkError> {
    RcanNet::build("sr", cfg, cfg.scale, &mut net_rng(seed, 2))
}

pub fn build_degradation_generator<S: Scalar>(
    cfg: &NetworkConfig,
    seed: u64,
) -> Result<DegradationNet<S>, NetworkError> {
    DegradationNet::build("g_degrade", cfg, &mut net_rng(seed, 3))
}

pub fn build_lr_discriminator<S: Scalar>(
    cfg: &NetworkConfig,
    name: &str,
    seed: u64,
    stream: u64,
) -> Result<Discriminator<S>, NetworkError> {
    Discriminator::build(name, cfg, [1; 5], &mut net_rng(seed, stream))
}

pub fn build_hr_discriminator<S: Scalar>(
    cfg: &NetworkConfig,
    scale: usize,
    seed: u64,
) -> Result<Discriminator<S>, NetworkError> {
    let strides = match scale {
        2 => [2, 1, 1, 1, 1],
        4 => [2, 2, 1, 1, 1],
        other => return Err(NetworkError::Config(format!("unsupported scale {other}"))),
    };
    Discriminator::build("d_hr", cfg, strides, &mut net_rng(seed, 6))
}

fn net_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-network architecture settings for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleConfig {
    pub scale: usize,
    pub correction: NetworkConfig,
    pub sr: NetworkConfig,
    pub degradation: NetworkConfig,
    pub discriminator: NetworkConfig,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig::paper(2)
    }
}

impl BundleConfig {
    /// Full-size configuration: 5 RGs × 10 RCABs for the correction net,
    /// 5 × 20 for the SR net, 64 channels, doubling discriminator widths.
    pub fn paper(scale: usize) -> Self {
        let base = NetworkConfig { scale, ..NetworkConfig::default() };
        BundleConfig {
            scale,
            correction: base,
            sr: NetworkConfig { rcabs_per_group: 20, ..base },
            degradation: base,
            discriminator: base,
        }
    }

    /// CPU-scale configuration for tests and smoke runs.
    pub fn desk(scale: usize) -> Self {
        let base = NetworkConfig {
            n_residual_groups: 1,
            rcabs_per_group: 2,
            base_channels: 16,
            scale,
            reduction: 4,
            disc_widths: [16, 16, 16, 16],
            disc_kernel: 3,
        };
        BundleConfig {
            scale,
            correction: base,
            sr: base,
            degradation: base,
            discriminator: base,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if !matches!(self.scale, 2 | 4) {
            return Err(NetworkError::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.sr.scale != self.scale {
            return Err(NetworkError::Config(format!(
                "sr scale {} disagrees with bundle scale {}",
                self.sr.scale, self.scale
            )));
        }
        self.correction.validate()?;
        self.sr.validate()?;
        self.degradation.validate()?;
        self.discriminator.validate()
    }
}

/// The six networks of one experiment. Parameter stores are disjoint and
/// deterministically initialized from (seed, per-net stream).
pub struct NetworkBundle<S: Scalar> {
    pub g_correct: RcanNet<S>,
    pub g_degrade: DegradationNet<S>,
    pub sr: RcanNet<S>,
    pub d_lr_x: Discriminator<S>,
    pub d_lr_yd: Discriminator<S>,
    pub d_hr: Discriminator<S>,
    pub scale: usize,
}

impl<S: Scalar> NetworkBundle<S> {
    pub fn build(cfg: &BundleConfig, seed: u64) -> Result<Self, NetworkError> {
        cfg.validate()?;
        Ok(NetworkBundle {
            g_correct: build_correction_generator(&cfg.correction, seed)?,
            sr: build_sr_network(&cfg.sr, seed)?,
            g_degrade: build_degradation_generator(&cfg.degradation, seed)?,
            d_lr_x: build_lr_discriminator(&cfg.discriminator, "d_lr_x", seed, 4)?,
            d_lr_yd: build_lr_discriminator(&cfg.discriminator, "d_lr_yd", seed, 5)?,
            d_hr: build_hr_discriminator(&cfg.discriminator, cfg.scale, seed)?,
            scale: cfg.scale,
        })
    }

    pub fn stores(&self) -> [&autograd::ParamStore<S>; 6] {
        [
            &self.g_correct.store,
            &self.g_degrade.store,
            &self.sr.store,
            &self.d_lr_x.store,
            &self.d_lr_yd.store,
            &self.d_hr.store,
        ]
    }

    pub fn stores_mut(&mut self) -> [&mut autograd::ParamStore<S>; 6] {
        [
            &mut self.g_correct.store,
            &mut self.g_degrade.store,
            &mut self.sr.store,
            &mut self.d_lr_x.store,
            &mut self.d_lr_yd.store,
            &mut self.d_hr.store,
        ]
    }

    pub fn reset_forward_counts(&self) {
        self.g_correct.reset_forward_count();
        self.g_degrade.reset_forward_count();
        self.sr.reset_forward_count();
        self.d_lr_x.reset_forward_count();
        self.d_lr_yd.reset_forward_count();
        self.d_hr.reset_forward_count();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig { scale: 3, ..NetworkConfig::default() }.validate().is_err());
        assert!(NetworkConfig { reduction: 7, ..NetworkConfig::default() }.validate().is_err());
        assert!(NetworkConfig { disc_kernel: 4, ..NetworkConfig::default() }.validate().is_err());
        assert!(NetworkConfig { rcabs_per_group: 0, ..NetworkConfig::default() }.validate().is_err());
        assert!(build_hr_discriminator::<f32>(&NetworkConfig::default(), 3, 0).is_err());
    }

    #[test]
    fn bundle_param_names_are_disjoint() {
        let bundle: NetworkBundle<f32> = NetworkBundle::build(&BundleConfig::desk(2), 7).unwrap();
        let mut seen = std::collections::HashSet::new();
        for store in bundle.stores() {
            for p in store.params() {
                assert!(
                    seen.insert(format!("{}/{}", store.name, p.name)),
                    "duplicate parameter {}/{}",
                    store.name,
                    p.name
                );
            }
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a: NetworkBundle<f32> = NetworkBundle::build(&BundleConfig::desk(2), 11).unwrap();
        let b: NetworkBundle<f32> = NetworkBundle::build(&BundleConfig::desk(2), 11).unwrap();
        let c: NetworkBundle<f32> = NetworkBundle::build(&BundleConfig::desk(2), 12).unwrap();
        for (sa, sb) in a.stores().iter().zip(b.stores().iter()) {
            assert_eq!(sa.content_hash(), sb.content_hash());
        }
        assert_ne!(a.g_correct.store.content_hash(), c.g_correct.store.content_hash());
    }
}

//! Five-layer patch discriminators. All layers are same-padding convs;
//! every layer but the last is followed by LeakyReLU (no normalization).
//! The output is a raw 1-channel score map — losses apply their own
//! squashing. LR discriminators use stride 1 throughout; the HR variant
//! strides its first one (scale 2) or two (scale 4) layers so its score map
//! matches the LR discriminators' spatial size.

use super::layers::{Conv2d, NetBuilder};
use super::{NetworkConfig, NetworkError, LEAKY_SLOPE};
use autograd::{Graph, ParamStore, Scalar, TensorId};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

pub struct Discriminator<S: Scalar> {
    pub store: ParamStore<S>,
    convs: Vec<Conv2d>,
    strides: [usize; 5],
    kernel: usize,
    forwards: AtomicU64,
}

impl<S: Scalar> Discriminator<S> {
    pub(super) fn build(
        name: &str,
        cfg: &NetworkConfig,
        strides: [usize; 5],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let k = cfg.disc_kernel;
        let w = cfg.disc_widths;
        let channels = [3, w[0], w[1], w[2], w[3], 1];
        let mut b = NetBuilder::new(name, rng);
        let convs = (0..5)
            .map(|i| b.conv(&format!("conv{i}"), channels[i], channels[i + 1], k, strides[i]))
            .collect();
        Ok(Discriminator { store: b.finish(), convs, strides, kernel: k, forwards: AtomicU64::new(0) })
    }

    pub fn insert(&self, g: &mut Graph<S>, with_grads: bool) -> Vec<TensorId> {
        self.store.insert(g, with_grads)
    }

    /// Raw patch-score logits, shape (n, 1, h/Πstrides, w/Πstrides).
    pub fn forward(&self, g: &mut Graph<S>, ids: &[TensorId], x: TensorId) -> TensorId {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let mut t = x;
        for (i, conv) in self.convs.iter().enumerate() {
            t = conv.forward(g, ids, t);
            if i + 1 < self.convs.len() {
                t = g.leaky_relu(t, S::from_f64(LEAKY_SLOPE));
            }
        }
        t
    }

    /// Receptive field of one score-map element: rf = 1 + Σᵢ (k-1)·Πⱼ<ᵢ sⱼ.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for s in self.strides {
            rf += (self.kernel - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Product of strides: the factor between input and score-map size.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }
}

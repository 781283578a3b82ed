//! Residual channel-attention networks: the size-preserving correction
//! generator and the upscaling SR network share this skeleton — a shallow
//! conv head, residual groups of channel-attention blocks, a long skip over
//! the body, and (for the SR net only) a sub-pixel upscaling tail.

use super::layers::{Conv2d, NetBuilder};
use super::{NetworkConfig, NetworkError};
use autograd::{Graph, ParamStore, Scalar, TensorId};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

struct Rcab {
    conv1: Conv2d,
    conv2: Conv2d,
    att_down: Conv2d,
    att_up: Conv2d,
}

impl Rcab {
    fn build<S: Scalar>(b: &mut NetBuilder<S>, name: &str, c: usize, r: usize) -> Self {
        Rcab {
            conv1: b.conv(&format!("{name}.conv1"), c, c, 3, 1),
            conv2: b.conv_gain(&format!("{name}.conv2"), c, c, 3, 1, 0.1),
            att_down: b.conv(&format!("{name}.att_down"), c, c / r, 1, 1),
            att_up: b.conv(&format!("{name}.att_up"), c / r, c, 1, 1),
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, ids: &[TensorId], x: TensorId) -> TensorId {
        let t = self.conv1.forward(g, ids, x);
        let t = g.relu(t);
        let t = self.conv2.forward(g, ids, t);
        let a = g.global_avg_pool(t);
        let a = self.att_down.forward(g, ids, a);
        let a = g.relu(a);
        let a = self.att_up.forward(g, ids, a);
        let a = g.sigmoid(a);
        let t = g.mul_channel(t, a);
        g.add(x, t)
    }
}

struct ResidualGroup {
    rcabs: Vec<Rcab>,
    conv: Conv2d,
}

impl ResidualGroup {
    fn forward<S: Scalar>(&self, g: &mut Graph<S>, ids: &[TensorId], x: TensorId) -> TensorId {
        let mut t = x;
        for rcab in &self.rcabs {
            t = rcab.forward(g, ids, t);
        }
        let t = self.conv.forward(g, ids, t);
        g.add(x, t)
    }
}

/// `scale == 1` is the correction generator (no upscaling tail); `scale` of
/// 2 or 4 appends one or two conv + pixel-shuffle ×2 stages before the tail.
pub struct RcanNet<S: Scalar> {
    pub store: ParamStore<S>,
    head: Conv2d,
    groups: Vec<ResidualGroup>,
    body_end: Conv2d,
    upscale: Vec<Conv2d>,
    tail: Conv2d,
    pub scale: usize,
    forwards: AtomicU64,
}

impl<S: Scalar> RcanNet<S> {
    pub(super) fn build(
        name: &str,
        cfg: &NetworkConfig,
        scale: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        cfg.validate()?;
        if !matches!(scale, 1 | 2 | 4) {
            return Err(NetworkError::Config(format!("unsupported scale {scale}")));
        }
        let c = cfg.base_channels;
        let mut b = NetBuilder::new(name, rng);
        let head = b.conv("head", 3, c, 3, 1);
        let groups = (0..cfg.n_residual_groups)
            .map(|gi| ResidualGroup {
                rcabs: (0..cfg.rcabs_per_group)
                    .map(|ri| Rcab::build(&mut b, &format!("rg{gi}.rcab{ri}"), c, cfg.reduction))
                    .collect(),
                conv: b.conv_gain(&format!("rg{gi}.conv"), c, c, 3, 1, 0.1),
            })
            .collect();
        let body_end = b.conv_gain("body_end", c, c, 3, 1, 0.1);
        let stages = match scale {
            1 => 0,
            2 => 1,
            _ => 2,
        };
        let upscale =
            (0..stages).map(|si| b.conv(&format!("up{si}"), c, 4 * c, 3, 1)).collect();
        let tail = b.conv("tail", c, 3, 3, 1);
        Ok(RcanNet { store: b.finish(), head, groups, body_end, upscale, tail, scale, forwards: AtomicU64::new(0) })
    }

    pub fn insert(&self, g: &mut Graph<S>, with_grads: bool) -> Vec<TensorId> {
        self.store.insert(g, with_grads)
    }

    pub fn forward(&self, g: &mut Graph<S>, ids: &[TensorId], x: TensorId) -> TensorId {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let f0 = self.head.forward(g, ids, x);
        let mut t = f0;
        for group in &self.groups {
            t = group.forward(g, ids, t);
        }
        let t = self.body_end.forward(g, ids, t);
        let mut f = g.add(f0, t);
        for up in &self.upscale {
            let u = up.forward(g, ids, f);
            f = g.pixel_shuffle(u, 2);
        }
        self.tail.forward(g, ids, f)
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            n_residual_groups: 1,
            rcabs_per_group: 1,
            base_channels: 4,
            scale: 2,
            reduction: 2,
            disc_widths: [4, 4, 4, 4],
            disc_kernel: 3,
        }
    }

    #[test]
    fn size_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net: RcanNet<f32> = RcanNet::build("t", &tiny_cfg(), 1, &mut rng).unwrap();
        let mut g = Graph::new();
        let ids = net.insert(&mut g, false);
        let x = g.leaf(ArrayD::zeros(IxDyn(&[2, 3, 9, 7])), false);
        let y = net.forward(&mut g, &ids, x);
        assert_eq!(g.shape(y), &[2, 3, 9, 7]);
        assert_eq!(net.forward_count(), 1);

        let up: RcanNet<f32> = RcanNet::build("u", &tiny_cfg(), 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let ids = up.insert(&mut g, false);
        let x = g.leaf(ArrayD::zeros(IxDyn(&[1, 3, 8, 10])), false);
        let y = up.forward(&mut g, &ids, x);
        assert_eq!(g.shape(y), &[1, 3, 32, 40]);
    }

    #[test]
    fn zeroed_body_reduces_to_head_plus_tail() {
        // Zeroing the conv that closes the body makes the long skip an
        // identity, so the full net must equal a head→tail-only computation
        // with the same weights, bit for bit.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net: RcanNet<f32> = RcanNet::build("t", &tiny_cfg(), 1, &mut rng).unwrap();
        for p in net.store.params_mut() {
            if p.name.starts_with("body_end") {
                p.value.fill(0.0);
            }
        }
        let mut x = ArrayD::zeros(IxDyn(&[1, 3, 6, 6]));
        for (i, v) in x.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin() * 0.5 + 0.5;
        }
        let mut g = Graph::new();
        let ids = net.insert(&mut g, false);
        let xt = g.leaf(x.clone(), false);
        let full = net.forward(&mut g, &ids, xt);

        let f0 = net.head.forward(&mut g, &ids, xt);
        let direct = net.tail.forward(&mut g, &ids, f0);
        assert_eq!(g.value(full), g.value(direct));
    }
}

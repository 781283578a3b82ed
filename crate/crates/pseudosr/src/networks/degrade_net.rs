//! Stochastic degradation generator: two head modules (RGB image, 1-channel
//! noise raster) of an entry conv plus one residual block each, features
//! concatenated into a main module of six residual blocks and three 1×1
//! fusion layers. All convs are 5×5 (fusions 1×1) and every conv is followed
//! by batch norm and LeakyReLU.

use super::layers::{BatchNorm, BnMode, Conv2d, NetBuilder};
use super::{NetworkConfig, NetworkError, LEAKY_SLOPE};
use autograd::{Graph, ParamStore, Scalar, TensorId};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Clone, Copy)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn build<S: Scalar>(
        b: &mut NetBuilder<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        ConvBn {
            conv: b.conv(&format!("{name}.conv"), c_in, c_out, k, 1),
            bn: b.batch_norm(&format!("{name}.bn"), c_out),
        }
    }

    fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        store: &mut ParamStore<S>,
        x: TensorId,
        mode: BnMode,
    ) -> TensorId {
        let t = self.conv.forward(g, ids, x);
        let t = self.bn.forward(g, ids, store, t, mode);
        g.leaky_relu(t, S::from_f64(LEAKY_SLOPE))
    }
}

#[derive(Clone, Copy)]
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
}

impl ResBlock {
    fn build<S: Scalar>(b: &mut NetBuilder<S>, name: &str, c: usize) -> Self {
        ResBlock {
            a: ConvBn::build(b, &format!("{name}.a"), c, c, 5),
            b: ConvBn::build(b, &format!("{name}.b"), c, c, 5),
        }
    }

    fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        store: &mut ParamStore<S>,
        x: TensorId,
        mode: BnMode,
    ) -> TensorId {
        let t = self.a.forward(g, ids, store, x, mode);
        let t = self.b.forward(g, ids, store, t, mode);
        g.add(x, t)
    }
}

pub struct DegradationNet<S: Scalar> {
    pub store: ParamStore<S>,
    img_entry: ConvBn,
    img_block: ResBlock,
    noise_entry: ConvBn,
    noise_block: ResBlock,
    fusion1: ConvBn,
    main_a: [ResBlock; 3],
    fusion2: ConvBn,
    main_b: [ResBlock; 3],
    fusion3: ConvBn,
    forwards: AtomicU64,
}

impl<S: Scalar> DegradationNet<S> {
    pub(super) fn build(
        name: &str,
        cfg: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let mut b = NetBuilder::new(name, rng);
        let img_entry = ConvBn::build(&mut b, "img_entry", 3, c, 5);
        let img_block = ResBlock::build(&mut b, "img_block", c);
        let noise_entry = ConvBn::build(&mut b, "noise_entry", 1, c, 5);
        let noise_block = ResBlock::build(&mut b, "noise_block", c);
        let fusion1 = ConvBn::build(&mut b, "fusion1", 2 * c, c, 1);
        let main_a = [
            ResBlock::build(&mut b, "main0", c),
            ResBlock::build(&mut b, "main1", c),
            ResBlock::build(&mut b, "main2", c),
        ];
        let fusion2 = ConvBn::build(&mut b, "fusion2", c, c, 1);
        let main_b = [
            ResBlock::build(&mut b, "main3", c),
            ResBlock::build(&mut b, "main4", c),
            ResBlock::build(&mut b, "main5", c),
        ];
        let fusion3 = ConvBn::build(&mut b, "fusion3", c, 3, 1);
        Ok(DegradationNet {
            store: b.finish(),
            img_entry,
            img_block,
            noise_entry,
            noise_block,
            fusion1,
            main_a,
            fusion2,
            main_b,
            fusion3,
            forwards: AtomicU64::new(0),
        })
    }

    pub fn insert(&self, g: &mut Graph<S>, with_grads: bool) -> Vec<TensorId> {
        self.store.insert(g, with_grads)
    }

    /// Forward over an RGB raster and a same-size single-channel noise
    /// raster. All stochasticity lives in `noise`; the net itself is a pure
    /// function (modulo running-stat updates under `TrainUpdating`).
    pub fn forward(
        &mut self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        img: TensorId,
        noise: TensorId,
        mode: BnMode,
    ) -> Result<TensorId, NetworkError> {
        let is = g.shape(img).to_vec();
        let ns = g.shape(noise).to_vec();
        if is.len() != 4 || is[1] != 3 {
            return Err(NetworkError::Shape(format!("image must be (n,3,h,w), got {is:?}")));
        }
        if ns != [is[0], 1, is[2], is[3]] {
            return Err(NetworkError::Shape(format!(
                "noise shape {ns:?} does not match image {is:?} (want ({},1,{},{}))",
                is[0], is[2], is[3]
            )));
        }
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let store = &mut self.store;
        let fi = self.img_entry.forward(g, ids, store, img, mode);
        let fi = self.img_block.forward(g, ids, store, fi, mode);
        let fn_ = self.noise_entry.forward(g, ids, store, noise, mode);
        let fn_ = self.noise_block.forward(g, ids, store, fn_, mode);
        let mut t = g.concat_channels(fi, fn_);
        t = self.fusion1.forward(g, ids, store, t, mode);
        for blk in &self.main_a {
            t = blk.forward(g, ids, store, t, mode);
        }
        t = self.fusion2.forward(g, ids, store, t, mode);
        for blk in &self.main_b {
            t = blk.forward(g, ids, store, t, mode);
        }
        Ok(self.fusion3.forward(g, ids, store, t, mode))
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }
}

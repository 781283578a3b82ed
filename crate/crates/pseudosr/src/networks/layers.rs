//! Parameter-owning layer primitives. A layer struct holds indices into its
//! network's `ParamStore`; forward passes take the tensor ids produced by
//! `ParamStore::insert` for the current graph, so the same layer works for
//! trainable, frozen, and 64-bit checking contexts.

use autograd::{Graph, ParamStore, Scalar, TensorId};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Assembles a network's parameter store with deterministic initialization:
/// conv weights are fan-in-scaled normals (std = sqrt(1 / (c_in * k * k))),
/// biases zero, batch-norm gamma 1 / beta 0, running stats (0, 1). The unit
/// gain matters: the generators stack residual accumulations three nets deep
/// with no normalization between them, and a hotter init compounds into
/// far-out-of-range outputs that short training runs never recover from.
pub(crate) struct NetBuilder<'r, S: Scalar> {
    store: ParamStore<S>,
    rng: &'r mut ChaCha8Rng,
}

impl<'r, S: Scalar> NetBuilder<'r, S> {
    pub fn new(net_name: &str, rng: &'r mut ChaCha8Rng) -> Self {
        NetBuilder { store: ParamStore::new(net_name), rng }
    }

    pub fn finish(self) -> ParamStore<S> {
        self.store
    }

    /// Same-padding convolution (`pad = k / 2`); odd kernels only, so
    /// stride 1 preserves spatial size and stride 2 exactly halves even
    /// inputs.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv2d {
        self.conv_gain(name, c_in, c_out, k, stride, 1.0)
    }

    /// `gain` rescales the init std. Residual-branch closing convs use 0.1
    /// so deep residual stacks start close to their skip path — the usual
    /// residual-scaling stabilizer, applied to the init instead of the
    /// forward pass.
    pub fn conv_gain(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Conv2d {
        assert!(k % 2 == 1, "same-padding requires an odd kernel, got {k}");
        let std = gain * (1.0 / (c_in * k * k) as f64).sqrt();
        let mut w = ArrayD::<S>::zeros(IxDyn(&[c_out, c_in, k, k]));
        for v in w.iter_mut() {
            let n: f64 = StandardNormal.sample(self.rng);
            *v = S::from_f64(n * std);
        }
        let wi = self.store.add(format!("{name}.w"), w, true);
        let bi = self.store.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[c_out])), true);
        Conv2d { w: wi, b: bi, stride, pad: k / 2 }
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> BatchNorm {
        let ones = ArrayD::from_elem(IxDyn(&[c]), S::one());
        let zeros = ArrayD::<S>::zeros(IxDyn(&[c]));
        BatchNorm {
            gamma: self.store.add(format!("{name}.gamma"), ones.clone(), true),
            beta: self.store.add(format!("{name}.beta"), zeros.clone(), true),
            running_mean: self.store.add(format!("{name}.running_mean"), zeros, false),
            running_var: self.store.add(format!("{name}.running_var"), ones, false),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ids: &[TensorId], x: TensorId) -> TensorId {
        g.conv2d(x, ids[self.w], Some(ids[self.b]), self.stride, self.pad)
    }
}

/// How batch-norm layers behave in a forward pass.
///
/// `TrainFrozen` exists for sub-steps that run a network they do not own:
/// normalization still uses batch statistics (so every sub-step of one
/// iteration sees the same mapping), but running buffers are not written —
/// a network's state is only ever mutated by the sub-step training it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running buffers updated.
    TrainUpdating,
    /// Batch statistics; running buffers untouched.
    TrainFrozen,
    /// Running statistics baked in as a per-channel affine map.
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

impl BatchNorm {
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        store: &mut ParamStore<S>,
        x: TensorId,
        mode: BnMode,
    ) -> TensorId {
        match mode {
            BnMode::TrainUpdating | BnMode::TrainFrozen => {
                let sh = g.shape(x).to_vec();
                let nhw = sh[0] * sh[2] * sh[3];
                let (y, mean, var) =
                    g.batch_norm_train(x, ids[self.gamma], ids[self.beta], BN_EPS);
                if mode == BnMode::TrainUpdating {
                    self.update_running(store, &mean, &var, nhw);
                }
                y
            }
            BnMode::Eval => {
                let rm = store.param(self.running_mean).value.as_slice().unwrap().to_vec();
                let rv = store.param(self.running_var).value.as_slice().unwrap().to_vec();
                let ga = store.param(self.gamma).value.as_slice().unwrap().to_vec();
                let be = store.param(self.beta).value.as_slice().unwrap().to_vec();
                let eps = S::from_f64(BN_EPS);
                let scale: Vec<S> =
                    ga.iter().zip(&rv).map(|(g, v)| *g / (*v + eps).sqrt()).collect();
                let shift: Vec<S> =
                    be.iter().zip(rm.iter().zip(&scale)).map(|(b, (m, s))| *b - *m * *s).collect();
                g.channel_affine(x, scale, shift)
            }
        }
    }

    /// Exponential moving average with the unbiased variance estimate.
    fn update_running<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        mean: &[S],
        biased_var: &[S],
        nhw: usize,
    ) {
        let m = S::from_f64(BN_MOMENTUM);
        let keep = S::one() - m;
        let bessel = S::from_f64(nhw as f64 / (nhw as f64 - 1.0));
        {
            let rm = &mut store.param_mut(self.running_mean).value;
            for (r, b) in rm.iter_mut().zip(mean) {
                *r = keep * *r + m * *b;
            }
        }
        let rv = &mut store.param_mut(self.running_var).value;
        for (r, b) in rv.iter_mut().zip(biased_var) {
            *r = keep * *r + m * *b * bessel;
        }
    }
}

//! Named parameter storage and the Adam optimizer.
//!
//! Each network owns one [`ParamStore`]; layers hold indices into it. A
//! store inserts its parameters into a graph either gradient-enabled or
//! frozen, which is how per-sub-step update isolation is enforced.

use crate::graph::{Graph, TensorId};
use crate::scalar::Scalar;
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub value: ArrayD<S>,
    /// Non-trainable params (batch-norm running buffers) ride along for
    /// checkpointing but never receive gradients or Adam updates.
    pub trainable: bool,
    pub m: ArrayD<S>,
    pub v: ArrayD<S>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    pub name: String,
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(name: impl Into<String>) -> Self {
        ParamStore { name: name.into(), params: Vec::new() }
    }

    /// Register a parameter; returns its index. Names must be unique within
    /// the store (they key checkpoint entries).
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<S>, trainable: bool) -> usize {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name:?} in store {:?}",
            self.name
        );
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        self.params.push(Param { name, value, trainable, m, v, step: 0 });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Insert every parameter as a leaf. With `with_grads = false` the whole
    /// network is frozen: values participate in the forward pass but no
    /// gradient is ever produced for them.
    pub fn insert(&self, g: &mut Graph<S>, with_grads: bool) -> Vec<TensorId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), with_grads && p.trainable))
            .collect()
    }

    /// FNV-1a hash over names, flags, values and optimizer state. Two stores
    /// hash equal iff nothing about their parameters differs (up to hash
    /// collisions); used to assert update isolation between sub-steps.
    pub fn content_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            eat(&[p.trainable as u8]);
            eat(&p.step.to_le_bytes());
            for arr in [&p.value, &p.m, &p.v] {
                for v in arr.iter() {
                    eat(&v.as_f64().to_bits().to_le_bytes());
                }
            }
        }
        h
    }
}

/// Pull gradients for a previously inserted store back out of a graph, in
/// parameter order. Frozen or unreached parameters yield `None`.
pub fn collect_grads<'g, S: Scalar>(
    g: &'g Graph<S>,
    ids: &[TensorId],
) -> Vec<Option<&'g ArrayD<S>>> {
    ids.iter().map(|id| g.grad(*id)).collect()
}

/// Adam with decoupled per-parameter step counts (a parameter that sits out
/// an iteration keeps its bias correction aligned with its own history).
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps }
    }

    /// One update over a store. `grads[i]` pairs with parameter `i`;
    /// `None` (or a non-trainable parameter) is skipped entirely.
    pub fn step<S: Scalar>(
        &self,
        lr: f64,
        store: &mut ParamStore<S>,
        grads: &[Option<&ArrayD<S>>],
    ) {
        assert_eq!(grads.len(), store.len(), "gradient list does not match store");
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let epss = S::from_f64(self.eps);
        let lrs = S::from_f64(lr);
        for (p, g) in store.params_mut().iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            assert_eq!(g.shape(), p.value.shape(), "gradient shape for {:?}", p.name);
            p.step += 1;
            let bc1 = S::from_f64(1.0 - self.beta1.powi(p.step as i32));
            let bc2 = S::from_f64(1.0 - self.beta2.powi(p.step as i32));
            p.m.zip_mut_with(g, |m, gi| *m = b1 * *m + (one - b1) * *gi);
            p.v.zip_mut_with(g, |v, gi| *v = b2 * *v + (one - b2) * *gi * *gi);
            let (m, v, val) = (&p.m, &p.v, &mut p.value);
            ndarray::Zip::from(val).and(m).and(v).for_each(|val, m, v| {
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *val = *val - lrs * mhat / (vhat.sqrt() + epss);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn scalar_param(v: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(&[1]), v)
    }

    /// First two Adam steps on f(x) = x have a closed form: with all-ones
    /// gradients, mhat = vhat = 1 every step, so x decreases by exactly
    /// lr / (1 + eps) per step.
    #[test]
    fn adam_matches_closed_form_on_constant_gradient() {
        let mut store = ParamStore::<f64>::new("t");
        store.add("x", scalar_param(1.0), true);
        let adam = Adam::new(0.9, 0.999, 1e-8);
        let g = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let expected_step = 1e-1 / (1.0 + 1e-8);
        adam.step(1e-1, &mut store, &[Some(&g)]);
        let x1 = store.param(0).value[[0]];
        assert!((x1 - (1.0 - expected_step)).abs() < 1e-12);
        adam.step(1e-1, &mut store, &[Some(&g)]);
        let x2 = store.param(0).value[[0]];
        assert!((x2 - (1.0 - 2.0 * expected_step)).abs() < 1e-12);
        assert_eq!(store.param(0).step, 2);
    }

    #[test]
    fn skipped_and_frozen_params_are_untouched() {
        let mut store = ParamStore::<f64>::new("t");
        store.add("a", scalar_param(1.0), true);
        store.add("buf", scalar_param(5.0), false);
        let h0 = store.content_hash();
        let adam = Adam::new(0.9, 0.999, 1e-8);
        let g = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        // "a" gets no gradient, "buf" is frozen: nothing may change.
        adam.step(1e-1, &mut store, &[None, Some(&g)]);
        assert_eq!(store.content_hash(), h0);
        adam.step(1e-1, &mut store, &[Some(&g), None]);
        assert_ne!(store.content_hash(), h0);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f64>::new("t");
        store.add("w", scalar_param(0.0), true);
        store.add("w", scalar_param(0.0), true);
    }
}

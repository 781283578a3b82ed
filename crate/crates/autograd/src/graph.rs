//! Arena-based reverse-mode autodiff.
//!
//! A [`Graph`] is a flat tape of nodes; builder methods append a node, run
//! the forward kernel eagerly, and record what backward needs. Nodes only
//! reference earlier nodes, so one reverse sweep in insertion order is a
//! valid topological traversal.
//!
//! Gradient flow is controlled entirely by `requires_grad` on leaves:
//! inserting a parameter as a non-grad leaf freezes it (its gradient is
//! identically zero by construction), and [`Graph::detach`] cuts a value out
//! of the tape. Gradients are retained on leaves only, where they accumulate
//! across `backward` calls; [`Graph::zero_grads`] resets them.

use crate::kernels::{
    self, col2im, dihedral_nchw, im2col, nchw_to_rows, pixel_shuffle, pixel_unshuffle,
    rows_to_nchw, ConvGeom,
};
use crate::scalar::Scalar;
use ndarray::{arr0, Array1, Array2, ArrayD, Axis, IxDyn, Slice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, S),
    AddScalar(TensorId),
    Abs(TensorId),
    Relu(TensorId),
    LeakyRelu(TensorId, S),
    Sigmoid(TensorId),
    Softplus(TensorId),
    MeanAll(TensorId),
    Conv2d {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        geom: ConvGeom,
    },
    /// Training-mode batch norm; saves the batch statistics for backward.
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    /// `y[n,c,..] = x[n,c,..] * scale[c] + shift[c]` with constant
    /// coefficients (inference-mode batch norm).
    ChannelAffine { x: TensorId, scale: Vec<S> },
    GlobalAvgPool(TensorId),
    /// `feat (N,C,H,W) * att (N,C,1,1)`, broadcast over the plane.
    MulChannel { feat: TensorId, att: TensorId },
    PixelShuffle { x: TensorId, r: usize },
    ConcatChannels(TensorId, TensorId),
    Dihedral { x: TensorId, op: u8 },
}

struct Node<S: Scalar> {
    value: ArrayD<S>,
    grad: Option<ArrayD<S>>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<S>, requires_grad: bool, op: Op<S>) -> TensorId {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&ArrayD<S>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> S {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.len(), 1, "scalar() on tensor of {} elements", v.len());
        *v.iter().next().unwrap()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.rg(id)
    }

    pub fn leaf(&mut self, value: ArrayD<S>, requires_grad: bool) -> TensorId {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: ArrayD<S>) -> TensorId {
        self.leaf(value, false)
    }

    /// Re-enter a value as a fresh constant leaf, cutting it out of the tape.
    pub fn detach(&mut self, id: TensorId) -> TensorId {
        let v = self.nodes[id.0].value.clone();
        self.leaf(v, false)
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: TensorId, b: TensorId, op: fn(TensorId, TensorId) -> Op<S>, f: fn(S, S) -> S) -> TensorId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "elementwise op on mismatched shapes"
        );
        let mut out = self.nodes[a.0].value.clone();
        out.zip_mut_with(&self.nodes[b.0].value, |x, y| *x = f(*x, *y));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, rg, op(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    fn unary(&mut self, a: TensorId, op: Op<S>, f: impl Fn(S) -> S) -> TensorId {
        let out = self.nodes[a.0].value.mapv(f);
        let rg = self.rg(a);
        self.push(out, rg, op)
    }

    pub fn scale(&mut self, a: TensorId, c: S) -> TensorId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.scale(a, S::zero() - S::one())
    }

    pub fn add_scalar(&mut self, a: TensorId, c: S) -> TensorId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Relu(a), |x| x.max(S::zero()))
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: S) -> TensorId {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > S::zero() { x } else { x * slope })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Sigmoid(a), |x| x.sigmoid())
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Softplus(a), |x| Scalar::softplus(x))
    }

    // ---- reductions ------------------------------------------------------

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let v = &self.nodes[a.0].value;
        assert!(!v.is_empty(), "mean of empty tensor");
        let mut acc = S::zero();
        for x in v.iter() {
            acc = acc + *x;
        }
        let m = acc / S::from_f64(v.len() as f64);
        let rg = self.rg(a);
        self.push(arr0(m).into_dyn(), rg, Op::MeanAll(a))
    }

    // ---- structured ops --------------------------------------------------

    /// 2-D convolution over NCHW input with OIHW weights and optional bias.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> TensorId {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let ws = self.nodes[w.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be OIHW");
        assert_eq!(ws[2], ws[3], "conv2d kernel must be square");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {} vs weight {}", xs[1], ws[1]);
        assert!(stride >= 1);
        let geom = ConvGeom {
            n: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        assert!(
            geom.h + 2 * pad >= geom.k && geom.w + 2 * pad >= geom.k,
            "conv2d kernel {} larger than padded input {}x{}",
            geom.k,
            geom.h + 2 * pad,
            geom.w + 2 * pad
        );
        if let Some(b) = bias {
            assert_eq!(self.nodes[b.0].value.shape(), &[geom.c_out], "conv2d bias shape");
        }
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = im2col(self.nodes[x.0].value.as_slice().unwrap(), &geom);
        let wmat = self.nodes[w.0]
            .value
            .to_shape((geom.c_out, geom.c_in * geom.k * geom.k))
            .unwrap();
        let rows = cols.dot(&wmat.t());
        let mut out = rows_to_nchw(&rows, geom.n, geom.c_out, oh, ow);
        if let Some(b) = bias {
            let bv = self.nodes[b.0].value.as_slice().unwrap().to_vec();
            let o = out.as_slice_mut().unwrap();
            let plane = oh * ow;
            for i in 0..geom.n {
                for (c, bc) in bv.iter().enumerate() {
                    let base = (i * geom.c_out + c) * plane;
                    for v in &mut o[base..base + plane] {
                        *v = *v + *bc;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || bias.map_or(false, |b| self.rg(b));
        self.push(out, rg, Op::Conv2d { x, w, bias, geom })
    }

    /// Training-mode batch norm over channels of an NCHW tensor. Returns the
    /// output plus the batch statistics so the caller can maintain running
    /// buffers (`var` is the biased estimate; sample count is `n*h*w`).
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> (TensorId, Vec<S>, Vec<S>) {
        let xs = self.nodes[x.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4, "batch norm input must be NCHW");
        let c = xs[1];
        assert_eq!(self.nodes[gamma.0].value.shape(), &[c], "gamma shape");
        assert_eq!(self.nodes[beta.0].value.shape(), &[c], "beta shape");
        assert!(xs[0] * xs[2] * xs[3] > 1, "batch norm needs more than one sample per channel");
        let (mean, var) = kernels::channel_moments(&self.nodes[x.0].value, c);
        let epss = S::from_f64(eps);
        let inv_std: Vec<S> = var.iter().map(|v| S::one() / (*v + epss).sqrt()).collect();
        let g = self.nodes[gamma.0].value.as_slice().unwrap().to_vec();
        let b = self.nodes[beta.0].value.as_slice().unwrap().to_vec();
        let mut out = self.nodes[x.0].value.clone();
        {
            let o = out.as_slice_mut().unwrap();
            let plane = xs[2] * xs[3];
            for i in 0..xs[0] {
                for ch in 0..c {
                    let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                    let base = (i * c + ch) * plane;
                    for v in &mut o[base..base + plane] {
                        *v = (*v - mu) * is * ga + be;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let id = self.push(
            out,
            rg,
            Op::BatchNorm { x, gamma, beta, mean: mean.clone(), inv_std },
        );
        (id, mean, var)
    }

    /// Per-channel affine with constant coefficients; used for
    /// inference-mode batch norm (`scale = gamma/sqrt(var+eps)`,
    /// `shift = beta - mean*scale`).
    pub fn channel_affine(&mut self, x: TensorId, scale: Vec<S>, shift: Vec<S>) -> TensorId {
        let xs = self.nodes[x.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4);
        assert_eq!(scale.len(), xs[1]);
        assert_eq!(shift.len(), xs[1]);
        let mut out = self.nodes[x.0].value.clone();
        {
            let o = out.as_slice_mut().unwrap();
            let plane = xs[2] * xs[3];
            for i in 0..xs[0] {
                for ch in 0..xs[1] {
                    let base = (i * xs[1] + ch) * plane;
                    for v in &mut o[base..base + plane] {
                        *v = *v * scale[ch] + shift[ch];
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, rg, Op::ChannelAffine { x, scale })
    }

    /// Global average pool: `(N,C,H,W) -> (N,C,1,1)`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> TensorId {
        let xs = self.nodes[x.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4);
        let plane = xs[2] * xs[3];
        let m = S::from_f64(plane as f64);
        let src = self.nodes[x.0].value.as_slice().unwrap();
        let mut out = ArrayD::<S>::zeros(IxDyn(&[xs[0], xs[1], 1, 1]));
        {
            let o = out.as_slice_mut().unwrap();
            for nc in 0..xs[0] * xs[1] {
                let mut acc = S::zero();
                for v in &src[nc * plane..(nc + 1) * plane] {
                    acc = acc + *v;
                }
                o[nc] = acc / m;
            }
        }
        let rg = self.rg(x);
        self.push(out, rg, Op::GlobalAvgPool(x))
    }

    /// Broadcast-multiply a feature map by per-channel attention weights.
    pub fn mul_channel(&mut self, feat: TensorId, att: TensorId) -> TensorId {
        let fs = self.nodes[feat.0].value.shape().to_vec();
        let as_ = self.nodes[att.0].value.shape().to_vec();
        assert_eq!(fs.len(), 4);
        assert_eq!(as_, vec![fs[0], fs[1], 1, 1], "attention must be (N,C,1,1)");
        let att_v = self.nodes[att.0].value.as_slice().unwrap().to_vec();
        let mut out = self.nodes[feat.0].value.clone();
        {
            let o = out.as_slice_mut().unwrap();
            let plane = fs[2] * fs[3];
            for (nc, a) in att_v.iter().enumerate() {
                for v in &mut o[nc * plane..(nc + 1) * plane] {
                    *v = *v * *a;
                }
            }
        }
        let rg = self.rg(feat) || self.rg(att);
        self.push(out, rg, Op::MulChannel { feat, att })
    }

    /// Sub-pixel upsample: `(N, C*r^2, H, W) -> (N, C, H*r, W*r)`.
    pub fn pixel_shuffle(&mut self, x: TensorId, r: usize) -> TensorId {
        let xs = self.nodes[x.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4);
        assert!(r >= 1);
        assert_eq!(xs[1] % (r * r), 0, "channels {} not divisible by r^2 = {}", xs[1], r * r);
        let out = pixel_shuffle(&self.nodes[x.0].value, r);
        let rg = self.rg(x);
        self.push(out, rg, Op::PixelShuffle { x, r })
    }

    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        assert_eq!(sa.len(), 4);
        assert_eq!(sb.len(), 4);
        assert_eq!((sa[0], sa[2], sa[3]), (sb[0], sb[2], sb[3]), "concat spatial/batch mismatch");
        let out = ndarray::concatenate(
            Axis(1),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .unwrap()
        .as_standard_layout()
        .to_owned();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, rg, Op::ConcatChannels(a, b))
    }

    /// Apply a dihedral symmetry (1..=8, see [`kernels::DIHEDRAL_INVERSE`])
    /// to the spatial plane of an NCHW tensor.
    pub fn dihedral(&mut self, x: TensorId, op: u8) -> TensorId {
        assert!((1..=8).contains(&op), "dihedral op must be 1..=8, got {op}");
        assert_eq!(self.nodes[x.0].value.ndim(), 4);
        let out = dihedral_nchw(&self.nodes[x.0].value, op);
        let rg = self.rg(x);
        self.push(out, rg, Op::Dihedral { x, op })
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients are retained on leaves
    /// only and accumulate there across sweeps; intermediate nodes drop
    /// their gradient once consumed, so several losses may share parts of
    /// one tape without double-counting.
    pub fn backward(&mut self, root: TensorId) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        assert!(
            self.nodes[root.0].requires_grad,
            "backward root does not depend on any gradient-enabled leaf"
        );
        let shape = self.nodes[root.0].value.raw_dim();
        match &mut self.nodes[root.0].grad {
            Some(g) => g.iter_mut().for_each(|v| *v = *v + S::one()),
            slot @ None => *slot = Some(ArrayD::ones(shape)),
        }
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else { continue };
            let contribs = self.node_backward(i, &gout);
            for (pid, c) in contribs {
                debug_assert_eq!(c.shape(), self.nodes[pid.0].value.shape());
                match &mut self.nodes[pid.0].grad {
                    Some(g) => g.zip_mut_with(&c, |x, y| *x = *x + *y),
                    slot @ None => *slot = Some(c),
                }
            }
        }
    }

    /// Contributions of node `i` to its parents' gradients. Parents that do
    /// not require grad are skipped (this is what makes frozen parameters
    /// free: their GEMMs are never run).
    fn node_backward(&self, i: usize, gout: &ArrayD<S>) -> Vec<(TensorId, ArrayD<S>)> {
        let mut out: Vec<(TensorId, ArrayD<S>)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    out.push((*a, gout.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, gout.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    out.push((*a, gout.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, gout.mapv(|v| S::zero() - v)));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[b.0].value, |x, y| *x = *x * *y);
                    out.push((*a, g));
                }
                if self.rg(*b) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[a.0].value, |x, y| *x = *x * *y);
                    out.push((*b, g));
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    out.push((*a, gout.mapv(|v| v * *c)));
                }
            }
            Op::AddScalar(a) => {
                if self.rg(*a) {
                    out.push((*a, gout.clone()));
                }
            }
            Op::Abs(a) => {
                if self.rg(*a) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[a.0].value, |x, y| {
                        *x = if *y > S::zero() {
                            *x
                        } else if *y < S::zero() {
                            S::zero() - *x
                        } else {
                            S::zero()
                        }
                    });
                    out.push((*a, g));
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[a.0].value, |x, y| {
                        if *y <= S::zero() {
                            *x = S::zero()
                        }
                    });
                    out.push((*a, g));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.rg(*a) {
                    let s = *slope;
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[a.0].value, |x, y| {
                        if *y <= S::zero() {
                            *x = *x * s
                        }
                    });
                    out.push((*a, g));
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[i].value, |x, y| *x = *x * *y * (S::one() - *y));
                    out.push((*a, g));
                }
            }
            Op::Softplus(a) => {
                if self.rg(*a) {
                    let mut g = gout.clone();
                    g.zip_mut_with(&self.nodes[a.0].value, |x, y| *x = *x * y.sigmoid());
                    out.push((*a, g));
                }
            }
            Op::MeanAll(a) => {
                if self.rg(*a) {
                    let v = &self.nodes[a.0].value;
                    let g = *gout.iter().next().unwrap() / S::from_f64(v.len() as f64);
                    out.push((*a, ArrayD::from_elem(v.raw_dim(), g)));
                }
            }
            Op::Conv2d { x, w, bias, geom } => {
                let (oh, ow) = (geom.out_h(), geom.out_w());
                let gr = nchw_to_rows(gout, geom.n, geom.c_out, oh, ow);
                let kk = geom.c_in * geom.k * geom.k;
                if self.rg(*w) {
                    let cols = im2col(self.nodes[x.0].value.as_slice().unwrap(), geom);
                    let dw = gr.t().dot(&cols);
                    out.push((
                        *w,
                        dw.into_shape_with_order((geom.c_out, geom.c_in, geom.k, geom.k))
                            .unwrap()
                            .into_dyn(),
                    ));
                }
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let db: Array1<S> = gr.sum_axis(Axis(0));
                        out.push((*b, db.into_dyn()));
                    }
                }
                if self.rg(*x) {
                    let wmat = self.nodes[w.0].value.to_shape((geom.c_out, kk)).unwrap();
                    let dcols: Array2<S> = gr.dot(&wmat);
                    out.push((*x, col2im(&dcols, geom)));
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let m = S::from_f64((n * plane) as f64);
                let xv = self.nodes[x.0].value.as_slice().unwrap();
                let gv = gout.as_slice().unwrap();
                let ga = self.nodes[gamma.0].value.as_slice().unwrap();
                // Per-channel sums of g and g*xhat.
                let mut s1 = vec![S::zero(); c];
                let mut s2 = vec![S::zero(); c];
                for i_ in 0..n {
                    for ch in 0..c {
                        let base = (i_ * c + ch) * plane;
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let mut a1 = S::zero();
                        let mut a2 = S::zero();
                        for p in 0..plane {
                            let g = gv[base + p];
                            a1 = a1 + g;
                            a2 = a2 + g * (xv[base + p] - mu) * is;
                        }
                        s1[ch] = s1[ch] + a1;
                        s2[ch] = s2[ch] + a2;
                    }
                }
                if self.rg(*beta) {
                    out.push((*beta, Array1::from(s1.clone()).into_dyn()));
                }
                if self.rg(*gamma) {
                    out.push((*gamma, Array1::from(s2.clone()).into_dyn()));
                }
                if self.rg(*x) {
                    let mut dx = ArrayD::<S>::zeros(self.nodes[x.0].value.raw_dim());
                    {
                        let d = dx.as_slice_mut().unwrap();
                        for i_ in 0..n {
                            for ch in 0..c {
                                let base = (i_ * c + ch) * plane;
                                let (mu, is) = (mean[ch], inv_std[ch]);
                                let k1 = s1[ch] / m;
                                let k2 = s2[ch] / m;
                                let gis = ga[ch] * is;
                                for p in 0..plane {
                                    let xhat = (xv[base + p] - mu) * is;
                                    d[base + p] = gis * (gv[base + p] - k1 - xhat * k2);
                                }
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::ChannelAffine { x, scale } => {
                if self.rg(*x) {
                    let xs = self.nodes[x.0].value.shape();
                    let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut g = gout.clone();
                    {
                        let gm = g.as_slice_mut().unwrap();
                        for i_ in 0..n {
                            for ch in 0..c {
                                let base = (i_ * c + ch) * plane;
                                for v in &mut gm[base..base + plane] {
                                    *v = *v * scale[ch];
                                }
                            }
                        }
                    }
                    out.push((*x, g));
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.rg(*x) {
                    let xs = self.nodes[x.0].value.shape();
                    let plane = xs[2] * xs[3];
                    let m = S::from_f64(plane as f64);
                    let gv = gout.as_slice().unwrap();
                    let mut dx = ArrayD::<S>::zeros(self.nodes[x.0].value.raw_dim());
                    {
                        let d = dx.as_slice_mut().unwrap();
                        for (nc, g) in gv.iter().enumerate() {
                            let gd = *g / m;
                            for v in &mut d[nc * plane..(nc + 1) * plane] {
                                *v = gd;
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::MulChannel { feat, att } => {
                let fs = self.nodes[feat.0].value.shape();
                let plane = fs[2] * fs[3];
                if self.rg(*feat) {
                    let av = self.nodes[att.0].value.as_slice().unwrap();
                    let mut g = gout.clone();
                    {
                        let gm = g.as_slice_mut().unwrap();
                        for (nc, a) in av.iter().enumerate() {
                            for v in &mut gm[nc * plane..(nc + 1) * plane] {
                                *v = *v * *a;
                            }
                        }
                    }
                    out.push((*feat, g));
                }
                if self.rg(*att) {
                    let fv = self.nodes[feat.0].value.as_slice().unwrap();
                    let gv = gout.as_slice().unwrap();
                    let mut da = ArrayD::<S>::zeros(self.nodes[att.0].value.raw_dim());
                    {
                        let d = da.as_slice_mut().unwrap();
                        for nc in 0..fs[0] * fs[1] {
                            let mut acc = S::zero();
                            for p in 0..plane {
                                acc = acc + gv[nc * plane + p] * fv[nc * plane + p];
                            }
                            d[nc] = acc;
                        }
                    }
                    out.push((*att, da));
                }
            }
            Op::PixelShuffle { x, r } => {
                if self.rg(*x) {
                    out.push((*x, pixel_unshuffle(gout, *r)));
                }
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.nodes[a.0].value.shape()[1];
                let cb = self.nodes[b.0].value.shape()[1];
                if self.rg(*a) {
                    let g = gout
                        .slice_axis(Axis(1), Slice::from(0..ca))
                        .as_standard_layout()
                        .to_owned();
                    out.push((*a, g));
                }
                if self.rg(*b) {
                    let g = gout
                        .slice_axis(Axis(1), Slice::from(ca..ca + cb))
                        .as_standard_layout()
                        .to_owned();
                    out.push((*b, g));
                }
            }
            Op::Dihedral { x, op } => {
                if self.rg(*x) {
                    let inv = kernels::DIHEDRAL_INVERSE[*op as usize];
                    out.push((*x, dihedral_nchw(gout, inv)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn t(shape: &[usize], data: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    #[test]
    fn mean_of_l1_backward() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]), true);
        let b = g.constant(t(&[2, 2], vec![0.0, 0.0, 0.0, 0.0]));
        let d = g.sub(a, b);
        let ad = g.abs(d);
        let loss = g.mean_all(ad);
        assert!((g.scalar(loss) - 1.625).abs() < 1e-12);
        g.backward(loss);
        let ga = g.grad(a).unwrap();
        assert_eq!(ga.as_slice().unwrap(), &[0.25, -0.25, 0.25, 0.25]);
        assert!(g.grad(b).is_none(), "constant leaf must not receive grad");
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2], vec![1.0, 2.0]), true);
        let d = g.detach(a);
        let s = g.mul(d, d);
        let loss = g.mean_all(s);
        assert!(!g.requires_grad(loss));
    }

    #[test]
    fn frozen_leaf_gets_no_grad_but_passes_flow() {
        // y = (w_frozen * x), d y / d x must still flow.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], vec![3.0, -1.0]), true);
        let w = g.leaf(t(&[2], vec![2.0, 5.0]), false);
        let y = g.mul(w, x);
        let loss = g.mean_all(y);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().as_slice().unwrap(), &[1.0, 2.5]);
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn backward_accumulates_across_roots() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[1], vec![2.0]), true);
        let l1 = g.mean_all(a);
        let sq = g.mul(a, a);
        let l2 = g.mean_all(sq);
        g.backward(l1);
        g.backward(l2);
        // d(l1)/da = 1, d(l2)/da = 2a = 4.
        assert_eq!(g.grad(a).unwrap().as_slice().unwrap(), &[5.0]);
        // Intermediates do not retain gradients.
        assert!(g.grad(l1).is_none());
        assert!(g.grad(sq).is_none());
        g.zero_grads();
        assert!(g.grad(a).is_none());
    }
}

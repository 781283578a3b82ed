//! Objective terms for the translation nets, the SR reconstruction loss,
//! and the weighted total.
//!
//! Discriminators emit raw logits; every adversarial form squashes inside
//! the loss. With σ the logistic sigmoid, `softplus(-s) = -log σ(s)` and
//! `softplus(s) = -log(1-σ(s))`, so the log-likelihood GAN objectives are
//! built from stable softplus means:
//!
//! - discriminator: `mean softplus(-s_real) + mean softplus(s_fake)`
//!   (the negation of the paper objective the discriminator maximizes);
//! - generator, non-saturating default: `mean softplus(-s_fake)`;
//! - generator, saturating minimax: `-mean softplus(s_fake)` (the literal
//!   inner term the generator minimizes, may be negative);
//! - least-squares: labels 1/0 on logits directly.
//!
//! The HR adversarial term spans two generator-dependent branches — the
//! discriminator is trained to call `U(G_correct(x))` real and `U(pseudo)`
//! fake, and the generators minimize both expectation terms — so its
//! generator form has a real-branch component too.
//!
//! Training-time freeze/detach routing is decided by graph construction in
//! the caller (parameters inserted without gradient tracking are frozen);
//! the functions here are pure graph builders.

use crate::networks::{DegradationNet, NetworkBundle, RcanNet};
use autograd::kernels::DIHEDRAL_INVERSE;
use autograd::{Graph, Scalar, TensorId};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanForm {
    Nonsaturating,
    Minimax,
    Lsgan,
}

/// Which raster the correction generator must map to itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityMode {
    /// ‖G(y↓) − y↓‖₁ — guards color composition on the clean domain.
    CleanLr,
    /// ‖G(x) − x‖₁ — the source-domain variant used when the source and
    /// clean domains have different color statistics.
    SourceLr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionKind {
    L1,
}

impl FromStr for ReconstructionKind {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, LossError> {
        match s {
            "l1" => Ok(ReconstructionKind::L1),
            other => Err(LossError::Config(format!(
                "unknown reconstruction kind {other:?} (implemented: \"l1\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    pub lambda_geo: f64,
    pub gamma: f64,
    pub idt_mode: IdentityMode,
}

impl Default for LossWeights {
    /// The DIV2K-wild setting: λcyc = λidt = λgeo = 1, γ = 0.1.
    fn default() -> Self {
        LossWeights {
            lambda_cyc: 1.0,
            lambda_idt: 1.0,
            lambda_geo: 1.0,
            gamma: 0.1,
            idt_mode: IdentityMode::CleanLr,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_idt", self.lambda_idt),
            ("lambda_geo", self.lambda_geo),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-iteration scalar record; serialized as one JSON line in the run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_x: f64,
    pub adv_yd: f64,
    pub adv_hr: f64,
    pub cyc: f64,
    pub idt: f64,
    pub geo: f64,
    pub rec: f64,
    pub total_trans: f64,
}

fn non_empty<S: Scalar>(g: &Graph<S>, id: TensorId) -> Result<(), LossError> {
    if g.shape(id).iter().product::<usize>() == 0 {
        return Err(LossError::EmptyBatch);
    }
    Ok(())
}

fn same_shape<S: Scalar>(g: &Graph<S>, a: TensorId, b: TensorId) -> Result<(), LossError> {
    if g.shape(a) != g.shape(b) {
        return Err(LossError::Shape(format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Mean absolute difference over every element.
pub fn l1_mean<S: Scalar>(
    g: &mut Graph<S>,
    a: TensorId,
    b: TensorId,
) -> Result<TensorId, LossError> {
    non_empty(g, a)?;
    same_shape(g, a, b)?;
    let d = g.sub(a, b);
    let d = g.abs(d);
    Ok(g.mean_all(d))
}

/// Discriminator objective on raw logits. Identical for the log-likelihood
/// forms; least-squares uses labels 1 (real) and 0 (fake).
pub fn gan_d_loss<S: Scalar>(
    g: &mut Graph<S>,
    form: GanForm,
    s_real: TensorId,
    s_fake: TensorId,
) -> TensorId {
    match form {
        GanForm::Nonsaturating | GanForm::Minimax => {
            let nr = g.neg(s_real);
            let a = g.softplus(nr);
            let a = g.mean_all(a);
            let b = g.softplus(s_fake);
            let b = g.mean_all(b);
            g.add(a, b)
        }
        GanForm::Lsgan => {
            let r1 = g.add_scalar(s_real, S::from_f64(-1.0));
            let r2 = g.mul(r1, r1);
            let a = g.mean_all(r2);
            let f2 = g.mul(s_fake, s_fake);
            let b = g.mean_all(f2);
            g.add(a, b)
        }
    }
}

/// Generator objective when the generator appears only in the fake branch.
pub fn gan_g_loss<S: Scalar>(g: &mut Graph<S>, form: GanForm, s_fake: TensorId) -> TensorId {
    match form {
        GanForm::Nonsaturating => {
            let nf = g.neg(s_fake);
            let sp = g.softplus(nf);
            g.mean_all(sp)
        }
        GanForm::Minimax => {
            let sp = g.softplus(s_fake);
            let m = g.mean_all(sp);
            g.neg(m)
        }
        GanForm::Lsgan => {
            let f1 = g.add_scalar(s_fake, S::from_f64(-1.0));
            let f2 = g.mul(f1, f1);
            g.mean_all(f2)
        }
    }
}

/// Generator objective when both discriminator branches depend on the
/// generators (the HR term): the real-labeled branch is pushed toward the
/// fake label and vice versa, shrinking the train–test gap from both sides.
pub fn gan_g_loss_both<S: Scalar>(
    g: &mut Graph<S>,
    form: GanForm,
    s_real_branch: TensorId,
    s_fake_branch: TensorId,
) -> TensorId {
    match form {
        GanForm::Nonsaturating => {
            let a = g.softplus(s_real_branch);
            let a = g.mean_all(a);
            let nf = g.neg(s_fake_branch);
            let b = g.softplus(nf);
            let b = g.mean_all(b);
            g.add(a, b)
        }
        GanForm::Minimax => {
            // The literal inner objective the generators minimize:
            // E[log σ(real)] + E[log(1-σ(fake))].
            let nr = g.neg(s_real_branch);
            let a = g.softplus(nr);
            let a = g.mean_all(a);
            let b = g.softplus(s_fake_branch);
            let b = g.mean_all(b);
            let s = g.add(a, b);
            g.neg(s)
        }
        GanForm::Lsgan => {
            let r2 = g.mul(s_real_branch, s_real_branch);
            let a = g.mean_all(r2);
            let f1 = g.add_scalar(s_fake_branch, S::from_f64(-1.0));
            let f2 = g.mul(f1, f1);
            let b = g.mean_all(f2);
            g.add(a, b)
        }
    }
}

/// The LR adversarial pair on pre-computed score maps: (d_loss, g_loss).
/// Freeze/detach semantics are the caller's graph-construction concern.
pub fn adversarial_loss<S: Scalar>(
    g: &mut Graph<S>,
    form: GanForm,
    scores_real: TensorId,
    scores_fake: TensorId,
) -> Result<(TensorId, TensorId), LossError> {
    non_empty(g, scores_real)?;
    non_empty(g, scores_fake)?;
    let d = gan_d_loss(g, form, scores_real, scores_fake);
    let gl = gan_g_loss(g, form, scores_fake);
    Ok((d, gl))
}

/// One-sided cycle consistency: ‖reconstructed − original‖₁.
pub fn cycle_loss<S: Scalar>(
    g: &mut Graph<S>,
    y_down: TensorId,
    y_down_reconstructed: TensorId,
) -> Result<TensorId, LossError> {
    l1_mean(g, y_down_reconstructed, y_down)
}

/// Identity mapping loss for the correction generator; `mode` selects which
/// batch the generator must leave unchanged.
pub fn identity_loss<S: Scalar>(
    g: &mut Graph<S>,
    net: &RcanNet<S>,
    ids: &[TensorId],
    x_batch: TensorId,
    y_down_batch: TensorId,
    mode: IdentityMode,
) -> Result<TensorId, LossError> {
    let r = match mode {
        IdentityMode::CleanLr => y_down_batch,
        IdentityMode::SourceLr => x_batch,
    };
    let out = net.forward(g, ids, r);
    l1_mean(g, out, r)
}

/// Reconstruction loss for the SR net on pseudo-pairs.
pub fn reconstruction_loss<S: Scalar>(
    g: &mut Graph<S>,
    sr_out: TensorId,
    y_batch: TensorId,
    kind: ReconstructionKind,
) -> Result<TensorId, LossError> {
    match kind {
        ReconstructionKind::L1 => l1_mean(g, sr_out, y_batch),
    }
}

/// Core of the geometric ensemble loss, generic over the map under test:
/// ‖base − Σᵢ Tᵢ⁻¹(fwd(Tᵢ(x)))/8‖₁ where `base` must be `fwd(x)` (it is
/// reused as the identity-transform branch, so the map runs 7 more times).
/// Gradients flow through every branch; parameters are shared by closure.
pub fn geo_loss_with<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    base: TensorId,
    mut fwd: impl FnMut(&mut Graph<S>, TensorId) -> Result<TensorId, LossError>,
) -> Result<TensorId, LossError> {
    non_empty(g, x)?;
    let sh = g.shape(x).to_vec();
    if sh.len() != 4 || sh[2] != sh[3] {
        return Err(LossError::Shape(format!(
            "geometric ensemble needs square patches, got {sh:?}"
        )));
    }
    let mut acc = base;
    for op in 2..=8u8 {
        let t = g.dihedral(x, op);
        let y = fwd(g, t)?;
        let back = g.dihedral(y, DIHEDRAL_INVERSE[op as usize]);
        acc = g.add(acc, back);
    }
    let avg = g.scale(acc, S::from_f64(1.0 / 8.0));
    l1_mean(g, base, avg)
}

/// Eq-5-style self-consistency of the correction generator under the eight
/// dihedral transforms.
pub fn geometric_ensemble_loss<S: Scalar>(
    g: &mut Graph<S>,
    net: &RcanNet<S>,
    ids: &[TensorId],
    x_batch: TensorId,
) -> Result<TensorId, LossError> {
    let base = net.forward(g, ids, x_batch);
    geo_loss_with(g, x_batch, base, |g, t| Ok(net.forward(g, ids, t)))
}

/// The two HR branches shared by the HR adversarial pair.
pub struct HrBranches {
    /// U(G_correct(x)) — the test-time path, labeled real.
    pub real: TensorId,
    /// U(pseudo_clean) — the training path, labeled fake.
    pub fake: TensorId,
    /// G_correct(G_degrade(y↓, noise)).
    pub pseudo_clean: TensorId,
}

/// Builds both HR branches with the SR net as a frozen amplifier: `sr_ids`
/// must be inserted without gradient tracking by the caller when this term
/// trains the generators.
pub fn hr_branches<S: Scalar>(
    g: &mut Graph<S>,
    g_correct: &RcanNet<S>,
    g_degrade: &mut DegradationNet<S>,
    sr: &RcanNet<S>,
    gc_ids: &[TensorId],
    gd_ids: &[TensorId],
    sr_ids: &[TensorId],
    x: TensorId,
    y_down: TensorId,
    noise: TensorId,
    bn_mode: crate::networks::BnMode,
) -> Result<HrBranches, LossError> {
    let corrected = g_correct.forward(g, gc_ids, x);
    let real = sr.forward(g, sr_ids, corrected);
    let degraded = g_degrade.forward(g, gd_ids, y_down, noise, bn_mode)?;
    let pseudo_clean = g_correct.forward(g, gc_ids, degraded);
    let fake = sr.forward(g, sr_ids, pseudo_clean);
    Ok(HrBranches { real, fake, pseudo_clean })
}

/// The HR adversarial pair with the parameter leaves it inserted, so tests
/// and callers can inspect gradient routing directly on the graph.
pub struct HrAdversarial {
    pub d_loss: TensorId,
    pub g_loss: TensorId,
    pub branches: HrBranches,
    pub gc_ids: Vec<TensorId>,
    pub gd_ids: Vec<TensorId>,
    pub sr_ids: Vec<TensorId>,
    pub d_ids: Vec<TensorId>,
}

/// The HR adversarial pair over a bundle: (d_loss, g_loss) plus the leaf
/// ids. The SR net's parameters are inserted frozen, so the generator
/// gradient with respect to them is zero by construction; the discriminator
/// side scores detached branch copies. Batch-norm runs on batch statistics
/// without touching running buffers — this function mutates no network.
pub fn hr_adversarial_loss<S: Scalar>(
    g: &mut Graph<S>,
    form: GanForm,
    nets: &mut NetworkBundle<S>,
    x: TensorId,
    y_down: TensorId,
    noise: TensorId,
) -> Result<HrAdversarial, LossError> {
    non_empty(g, x)?;
    non_empty(g, y_down)?;
    let gc_ids = nets.g_correct.insert(g, true);
    let gd_ids = nets.g_degrade.insert(g, true);
    let sr_ids = nets.sr.insert(g, false);
    let d_ids = nets.d_hr.insert(g, true);
    let branches = hr_branches(
        g,
        &nets.g_correct,
        &mut nets.g_degrade,
        &nets.sr,
        &gc_ids,
        &gd_ids,
        &sr_ids,
        x,
        y_down,
        noise,
        crate::networks::BnMode::TrainFrozen,
    )?;
    let s_real = nets.d_hr.forward(g, &d_ids, branches.real);
    let s_fake = nets.d_hr.forward(g, &d_ids, branches.fake);
    let g_loss = gan_g_loss_both(g, form, s_real, s_fake);
    let real_det = g.detach(branches.real);
    let fake_det = g.detach(branches.fake);
    let sd_real = nets.d_hr.forward(g, &d_ids, real_det);
    let sd_fake = nets.d_hr.forward(g, &d_ids, fake_det);
    let d_loss = gan_d_loss(g, form, sd_real, sd_fake);
    Ok(HrAdversarial { d_loss, g_loss, branches, gc_ids, gd_ids, sr_ids, d_ids })
}

/// Scalar components of the translation objective. A term may be absent
/// only when its weight is zero (the no-HR-discriminator ablation never
/// computes adv_hr).
#[derive(Debug, Clone, Copy, Default)]
pub struct TranslationParts {
    pub adv_x: Option<f64>,
    pub adv_yd: Option<f64>,
    pub adv_hr: Option<f64>,
    pub cyc: Option<f64>,
    pub idt: Option<f64>,
    pub geo: Option<f64>,
}

/// adv_x + adv_yd + γ·adv_hr + λcyc·cyc + λidt·idt + λgeo·geo.
pub fn total_translation_loss(parts: &TranslationParts, w: &LossWeights) -> Result<f64, LossError> {
    w.validate()?;
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| LossError::Config(format!("missing loss component {name}")))
    };
    let weighted = |v: Option<f64>, weight: f64, name: &str| -> Result<f64, LossError> {
        if weight == 0.0 {
            Ok(0.0)
        } else {
            Ok(weight * need(v, name)?)
        }
    };
    Ok(need(parts.adv_x, "adv_x")?
        + need(parts.adv_yd, "adv_yd")?
        + weighted(parts.adv_hr, w.gamma, "adv_hr")?
        + weighted(parts.cyc, w.lambda_cyc, "cyc")?
        + weighted(parts.idt, w.lambda_idt, "idt")?
        + weighted(parts.geo, w.lambda_geo, "geo")?)
}

/// Graph-level weighted sum Σ wᵢ·termᵢ (skipping zero weights).
pub fn weighted_total<S: Scalar>(g: &mut Graph<S>, terms: &[(TensorId, f64)]) -> TensorId {
    let mut acc: Option<TensorId> = None;
    for &(t, w) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { t } else { g.scale(t, S::from_f64(w)) };
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled),
        });
    }
    acc.expect("weighted_total needs at least one non-zero-weight term")
}

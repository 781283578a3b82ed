//! One training iteration: three sub-steps, each on its own graph with its
//! own freeze set, plus batch assembly from the image pools.

use super::{lr_schedule, LogRecord, TrainConfig, TrainError, TrainState, Variant};
use crate::imaging::{images_to_nchw, sample_unaligned_batch, Image};
use crate::losses::{
    gan_d_loss, gan_g_loss, gan_g_loss_both, geo_loss_with, l1_mean, reconstruction_loss,
    total_translation_loss, weighted_total, GanForm, IdentityMode, LossWeights,
    ReconstructionKind, TranslationParts,
};
use crate::networks::{BnMode, NetworkBundle};
use autograd::{collect_grads, Adam, Graph, Scalar};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// One iteration's worth of aligned tensors. `x` and `y`/`y_down` come from
/// unrelated images; `noise` is the degradation net's stochastic input,
/// drawn once per iteration and shared by every sub-step.
pub struct BatchTensors<S: Scalar> {
    pub x: ArrayD<S>,
    pub y: ArrayD<S>,
    pub y_down: ArrayD<S>,
    pub noise: ArrayD<S>,
}

/// Draw the next batch: unaligned patch sampling from the data lane,
/// standard-normal noise from the noise lane.
pub fn next_batch<S: Scalar>(
    lr_pool: &[Image],
    hr_pool: &[Image],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<BatchTensors<S>, TrainError> {
    let b = sample_unaligned_batch(
        lr_pool,
        hr_pool,
        cfg.lr_patch,
        cfg.scale,
        cfg.batch,
        &mut state.data_rng,
    )?;
    let x = images_to_nchw::<S>(&b.x)?.into_dyn();
    let y = images_to_nchw::<S>(&b.y)?.into_dyn();
    let y_down = images_to_nchw::<S>(&b.y_down)?.into_dyn();
    let n = cfg.batch * cfg.lr_patch * cfg.lr_patch;
    let draws: Vec<S> = (0..n)
        .map(|_| S::from_f64(state.noise_rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let noise =
        ArrayD::from_shape_vec(IxDyn(&[cfg.batch, 1, cfg.lr_patch, cfg.lr_patch]), draws)
            .expect("noise buffer matches its shape by construction");
    Ok(BatchTensors { x, y, y_down, noise })
}

pub struct DiscriminatorLosses {
    pub d_x: f64,
    pub d_yd: f64,
    pub d_hr: f64,
}

fn finite(v: f64, term: &'static str, iter: u64) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite { iter, term, snapshot: None })
    }
}

/// Sub-step 1: update the discriminators on detached fakes. The HR
/// discriminator trains only when its term carries weight; with it off its
/// parameters receive no gradient at all.
pub fn substep_discriminators<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    batch: &BatchTensors<S>,
    form: GanForm,
    hr_on: bool,
    adam: &Adam,
    lr: f64,
    iter: u64,
) -> Result<DiscriminatorLosses, TrainError> {
    let g = &mut Graph::<S>::new();
    let x = g.leaf(batch.x.clone(), false);
    let y_down = g.leaf(batch.y_down.clone(), false);
    let noise = g.leaf(batch.noise.clone(), false);

    let gc_ids = nets.g_correct.insert(g, false);
    let gd_ids = nets.g_degrade.insert(g, false);
    let dx_ids = nets.d_lr_x.insert(g, true);
    let dyd_ids = nets.d_lr_yd.insert(g, true);

    let fake_x = nets.g_degrade.forward(g, &gd_ids, y_down, noise, BnMode::TrainFrozen)?;
    let fake_x = g.detach(fake_x);
    let fake_yd = nets.g_correct.forward(g, &gc_ids, x);
    let fake_yd = g.detach(fake_yd);

    let s_real_x = nets.d_lr_x.forward(g, &dx_ids, x);
    let s_fake_x = nets.d_lr_x.forward(g, &dx_ids, fake_x);
    let loss_x = gan_d_loss(g, form, s_real_x, s_fake_x);

    let s_real_yd = nets.d_lr_yd.forward(g, &dyd_ids, y_down);
    let s_fake_yd = nets.d_lr_yd.forward(g, &dyd_ids, fake_yd);
    let loss_yd = gan_d_loss(g, form, s_real_yd, s_fake_yd);

    let mut total = g.add(loss_x, loss_yd);
    let mut d_hr = 0.0;
    let mut dhr_ids = Vec::new();
    if hr_on {
        let sr_ids = nets.sr.insert(g, false);
        dhr_ids = nets.d_hr.insert(g, true);
        // Both branches are upscaled through frozen nets from already
        // detached rasters: the discriminator is the only live piece.
        let real_up = nets.sr.forward(g, &sr_ids, fake_yd);
        let pseudo_clean = nets.g_correct.forward(g, &gc_ids, fake_x);
        let fake_up = nets.sr.forward(g, &sr_ids, pseudo_clean);
        let s_real = nets.d_hr.forward(g, &dhr_ids, real_up);
        let s_fake = nets.d_hr.forward(g, &dhr_ids, fake_up);
        let loss_hr = gan_d_loss(g, form, s_real, s_fake);
        d_hr = finite(g.scalar(loss_hr).as_f64(), "d_hr", iter)?;
        total = g.add(total, loss_hr);
    }
    let d_x = finite(g.scalar(loss_x).as_f64(), "d_x", iter)?;
    let d_yd = finite(g.scalar(loss_yd).as_f64(), "d_yd", iter)?;

    g.backward(total);
    adam.step(lr, &mut nets.d_lr_x.store, &collect_grads(g, &dx_ids));
    adam.step(lr, &mut nets.d_lr_yd.store, &collect_grads(g, &dyd_ids));
    if hr_on {
        adam.step(lr, &mut nets.d_hr.store, &collect_grads(g, &dhr_ids));
    }
    Ok(DiscriminatorLosses { d_x, d_yd, d_hr })
}

pub struct GeneratorTerms {
    pub adv_x: f64,
    pub adv_yd: f64,
    pub adv_hr: f64,
    pub cyc: f64,
    pub idt: f64,
    pub geo: f64,
}

/// Sub-step 2: update both translation generators jointly under the
/// weighted objective. `w_eff` carries the weights in effect this
/// iteration (ramped ensemble weight, variant-adjusted γ). The SR net and
/// all discriminators participate frozen; batch-norm running buffers update
/// here and only here.
pub fn substep_generators<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    batch: &BatchTensors<S>,
    form: GanForm,
    w_eff: &LossWeights,
    adam: &Adam,
    lr: f64,
    iter: u64,
) -> Result<GeneratorTerms, TrainError> {
    let hr_on = w_eff.gamma > 0.0;
    let g = &mut Graph::<S>::new();
    let x = g.leaf(batch.x.clone(), false);
    let y_down = g.leaf(batch.y_down.clone(), false);
    let noise = g.leaf(batch.noise.clone(), false);

    let gc_ids = nets.g_correct.insert(g, true);
    let gd_ids = nets.g_degrade.insert(g, true);
    let dx_ids = nets.d_lr_x.insert(g, false);
    let dyd_ids = nets.d_lr_yd.insert(g, false);

    let corrected = nets.g_correct.forward(g, &gc_ids, x);
    let s_fake_yd = nets.d_lr_yd.forward(g, &dyd_ids, corrected);
    let adv_yd = gan_g_loss(g, form, s_fake_yd);

    let degraded = nets.g_degrade.forward(g, &gd_ids, y_down, noise, BnMode::TrainUpdating)?;
    let s_fake_x = nets.d_lr_x.forward(g, &dx_ids, degraded);
    let adv_x = gan_g_loss(g, form, s_fake_x);

    let pseudo_clean = nets.g_correct.forward(g, &gc_ids, degraded);
    let cyc = l1_mean(g, pseudo_clean, y_down)?;

    let idt = match w_eff.idt_mode {
        IdentityMode::CleanLr => {
            let out = nets.g_correct.forward(g, &gc_ids, y_down);
            l1_mean(g, out, y_down)?
        }
        IdentityMode::SourceLr => l1_mean(g, corrected, x)?,
    };

    let gc = &nets.g_correct;
    let geo = geo_loss_with(g, x, corrected, |g, t| Ok(gc.forward(g, &gc_ids, t)))?;

    let mut terms = vec![
        (adv_x, 1.0),
        (adv_yd, 1.0),
        (cyc, w_eff.lambda_cyc),
        (idt, w_eff.lambda_idt),
        (geo, w_eff.lambda_geo),
    ];
    let mut adv_hr_v = 0.0;
    if hr_on {
        let sr_ids = nets.sr.insert(g, false);
        let dhr_ids = nets.d_hr.insert(g, false);
        let real_up = nets.sr.forward(g, &sr_ids, corrected);
        let fake_up = nets.sr.forward(g, &sr_ids, pseudo_clean);
        let s_real = nets.d_hr.forward(g, &dhr_ids, real_up);
        let s_fake = nets.d_hr.forward(g, &dhr_ids, fake_up);
        let adv_hr = gan_g_loss_both(g, form, s_real, s_fake);
        adv_hr_v = finite(g.scalar(adv_hr).as_f64(), "adv_hr", iter)?;
        terms.push((adv_hr, w_eff.gamma));
    }

    let out = GeneratorTerms {
        adv_x: finite(g.scalar(adv_x).as_f64(), "adv_x", iter)?,
        adv_yd: finite(g.scalar(adv_yd).as_f64(), "adv_yd", iter)?,
        adv_hr: adv_hr_v,
        cyc: finite(g.scalar(cyc).as_f64(), "cyc", iter)?,
        idt: finite(g.scalar(idt).as_f64(), "idt", iter)?,
        geo: finite(g.scalar(geo).as_f64(), "geo", iter)?,
    };

    let total = weighted_total(g, &terms);
    g.backward(total);
    adam.step(lr, &mut nets.g_correct.store, &collect_grads(g, &gc_ids));
    adam.step(lr, &mut nets.g_degrade.store, &collect_grads(g, &gd_ids));
    Ok(out)
}

/// Sub-step 3: update the SR net on this iteration's pseudo-pairs (or the
/// variant's replacement input), built from the just-updated generators and
/// detached — the pair is data, not a gradient path.
pub fn substep_sr<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    batch: &BatchTensors<S>,
    variant: Variant,
    kind: ReconstructionKind,
    adam: &Adam,
    lr: f64,
    iter: u64,
) -> Result<f64, TrainError> {
    let g = &mut Graph::<S>::new();
    let y = g.leaf(batch.y.clone(), false);
    let y_down = g.leaf(batch.y_down.clone(), false);

    let sr_in = match variant {
        Variant::Full | Variant::NoDHr => {
            let noise = g.leaf(batch.noise.clone(), false);
            let gc_ids = nets.g_correct.insert(g, false);
            let gd_ids = nets.g_degrade.insert(g, false);
            let degraded =
                nets.g_degrade.forward(g, &gd_ids, y_down, noise, BnMode::TrainFrozen)?;
            let pseudo = nets.g_correct.forward(g, &gc_ids, degraded);
            g.detach(pseudo)
        }
        Variant::TrainOnClean => y_down,
        Variant::TrainOnDegraded => {
            let noise = g.leaf(batch.noise.clone(), false);
            let gd_ids = nets.g_degrade.insert(g, false);
            let degraded =
                nets.g_degrade.forward(g, &gd_ids, y_down, noise, BnMode::TrainFrozen)?;
            g.detach(degraded)
        }
    };
    let sr_ids = nets.sr.insert(g, true);
    let sr_out = nets.sr.forward(g, &sr_ids, sr_in);
    let rec = reconstruction_loss(g, sr_out, y, kind)?;
    let rec_v = finite(g.scalar(rec).as_f64(), "rec", iter)?;
    g.backward(rec);
    adam.step(lr, &mut nets.sr.store, &collect_grads(g, &sr_ids));
    Ok(rec_v)
}

/// One full iteration; increments `state.iter` on success.
pub fn train_step<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    batch: &BatchTensors<S>,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<LogRecord, TrainError> {
    let iter = state.iter;
    if iter >= cfg.total_iters {
        return Err(TrainError::Config(format!(
            "iteration {iter} is past total_iters {}",
            cfg.total_iters
        )));
    }
    let lr_gan = lr_schedule(cfg.optim_gan.lr, iter, &cfg.lr_milestones);
    let lr_sr = cfg.optim_sr.lr;
    let w_eff = LossWeights {
        lambda_geo: cfg.lambda_geo_at(iter),
        gamma: cfg.gamma_eff(),
        ..cfg.weights
    };
    let adam_gan = cfg.optim_gan.adam();
    let adam_sr = cfg.optim_sr.adam();
    let hr_on = w_eff.gamma > 0.0;

    let d = substep_discriminators(nets, batch, cfg.gan_form, hr_on, &adam_gan, lr_gan, iter)?;
    let t = substep_generators(nets, batch, cfg.gan_form, &w_eff, &adam_gan, lr_gan, iter)?;
    let rec = substep_sr(nets, batch, cfg.variant, cfg.reconstruction, &adam_sr, lr_sr, iter)?;

    let parts = TranslationParts {
        adv_x: Some(t.adv_x),
        adv_yd: Some(t.adv_yd),
        adv_hr: if hr_on { Some(t.adv_hr) } else { None },
        cyc: Some(t.cyc),
        idt: Some(t.idt),
        geo: Some(t.geo),
    };
    let total_trans = total_translation_loss(&parts, &w_eff)?;

    state.iter += 1;
    Ok(LogRecord {
        iter,
        lr_gan,
        lr_sr,
        d_x: d.d_x,
        d_yd: d.d_yd,
        d_hr: d.d_hr,
        adv_x: t.adv_x,
        adv_yd: t.adv_yd,
        adv_hr: t.adv_hr,
        cyc: t.cyc,
        idt: t.idt,
        geo: t.geo,
        rec,
        total_trans,
    })
}

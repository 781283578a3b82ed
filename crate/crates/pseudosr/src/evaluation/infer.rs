//! Test-time forward paths. Inference is the correction net followed by the
//! SR net — the degradation net and every discriminator stay out of the
//! test path — with outputs clamped to the raster range.

use super::EvalError;
use crate::imaging::{predetermined_downscale, DihedralIndex, Image};
use crate::networks::{BnMode, NetworkBundle};
use crate::training::Variant;
use autograd::{Graph, Scalar};
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

fn guard_dims(x: &Image) -> Result<(), EvalError> {
    if x.h() < 8 || x.w() < 8 {
        return Err(EvalError::Invalid(format!(
            "inference needs at least 8x8 input, got {}x{}",
            x.h(),
            x.w()
        )));
    }
    Ok(())
}

/// Run the test chain on one image; returns (corrected LR, SR output).
/// With `correct` off the SR net reads the input directly.
fn chain<S: Scalar>(
    nets: &NetworkBundle<S>,
    x: &Image,
    correct: bool,
) -> Result<(Image, Image), EvalError> {
    guard_dims(x)?;
    let g = &mut Graph::<S>::new();
    let t = g.leaf(x.to_nchw::<S>(), false);
    let mid = if correct {
        let ids = nets.g_correct.insert(g, false);
        nets.g_correct.forward(g, &ids, t)
    } else {
        t
    };
    let sr_ids = nets.sr.insert(g, false);
    let out = nets.sr.forward(g, &sr_ids, mid);
    Ok((Image::from_nchw(g.value(mid), 0)?, Image::from_nchw(g.value(out), 0)?))
}

/// The corrected-LR half of the test path: G_XY↓ alone.
pub fn correct_lr<S: Scalar>(nets: &NetworkBundle<S>, x: &Image) -> Result<Image, EvalError> {
    guard_dims(x)?;
    let g = &mut Graph::<S>::new();
    let t = g.leaf(x.to_nchw::<S>(), false);
    let ids = nets.g_correct.insert(g, false);
    let out = nets.g_correct.forward(g, &ids, t);
    Ok(Image::from_nchw(g.value(out), 0)?)
}

/// Full test path: SR of the corrected input, dims scaled by the bundle's
/// factor, deterministic (no noise is drawn anywhere).
pub fn infer<S: Scalar>(nets: &NetworkBundle<S>, x: &Image) -> Result<Image, EvalError> {
    Ok(chain(nets, x, true)?.1)
}

/// Variant-aware test path: a bundle whose SR net was trained directly on
/// degraded inputs is applied without the correction stage.
pub fn infer_variant<S: Scalar>(
    nets: &NetworkBundle<S>,
    variant: Variant,
    x: &Image,
) -> Result<Image, EvalError> {
    match variant {
        Variant::TrainOnDegraded => Ok(chain(nets, x, false)?.1),
        _ => infer(nets, x),
    }
}

/// Average the test path over all eight dihedral transforms: each branch
/// runs on T_i(x) and is mapped back with the inverse transform on the
/// HR-side raster before averaging.
pub fn self_ensemble_infer<S: Scalar>(
    nets: &NetworkBundle<S>,
    x: &Image,
) -> Result<Image, EvalError> {
    let mut acc: Option<Array3<f64>> = None;
    for i in DihedralIndex::all() {
        let branch = infer(nets, &x.dihedral(i))?.dihedral(i.inverse());
        let px = branch.into_array();
        acc = Some(match acc {
            None => px,
            Some(a) => a + px,
        });
    }
    let mean = acc.expect("eight branches") / 8.0;
    Ok(Image::from_array(mean)?)
}

/// Fixed file names of the diagnostic dump, in pipeline order: the source
/// chain x → G_XY↓(x) → U(G_XY↓(x)), then the target chain y → y↓ →
/// G_Y↓X(y↓) → ẙ↓ → U(ẙ↓).
pub const DUMP_NAMES: [&str; 8] = [
    "x.png",
    "x_corrected.png",
    "x_sr.png",
    "y.png",
    "y_down.png",
    "y_down_degraded.png",
    "y_down_pseudo.png",
    "y_down_pseudo_sr.png",
];

/// Write every intermediate raster of both chains as PNGs under `out_dir`.
/// `seed` fixes the degradation net's noise draw. `y`'s dims must divide by
/// the bundle's scale.
pub fn dump_intermediates<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    x: &Image,
    y: &Image,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| EvalError::Invalid(format!("{}: {e}", out_dir.display())))?;
    let paths: Vec<PathBuf> = DUMP_NAMES.iter().map(|n| out_dir.join(n)).collect();

    x.save_png(&paths[0])?;
    let (corrected, x_sr) = chain(nets, x, true)?;
    corrected.save_png(&paths[1])?;
    x_sr.save_png(&paths[2])?;

    y.save_png(&paths[3])?;
    let y_down = predetermined_downscale(y, nets.scale)?;
    y_down.save_png(&paths[4])?;
    guard_dims(&y_down)?;

    let (h, w) = (y_down.h(), y_down.w());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<S> = (0..h * w)
        .map(|_| S::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let noise = ArrayD::from_shape_vec(IxDyn(&[1, 1, h, w]), draws)
        .expect("noise buffer matches its shape by construction");

    // Each stage consumes the clamped raster the previous file shows, so the
    // dumped chain can be reproduced from the files alone.
    let g = &mut Graph::<S>::new();
    let yd = g.leaf(y_down.to_nchw::<S>(), false);
    let nz = g.leaf(noise, false);
    let gd_ids = nets.g_degrade.insert(g, false);
    let degraded_t = nets.g_degrade.forward(g, &gd_ids, yd, nz, BnMode::Eval)?;
    let degraded = Image::from_nchw(g.value(degraded_t), 0)?;
    degraded.save_png(&paths[5])?;

    let pseudo = correct_lr(nets, &degraded)?;
    pseudo.save_png(&paths[6])?;

    let g = &mut Graph::<S>::new();
    let ps = g.leaf(pseudo.to_nchw::<S>(), false);
    let sr_ids = nets.sr.insert(g, false);
    let pseudo_sr_t = nets.sr.forward(g, &sr_ids, ps);
    Image::from_nchw(g.value(pseudo_sr_t), 0)?.save_png(&paths[7])?;

    Ok(paths)
}

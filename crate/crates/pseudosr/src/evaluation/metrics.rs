//! Fidelity metrics on `[0,1]` rasters. PSNR is channel-wise MSE in dB;
//! SSIM is the windowed structural index on the BT.601 luma plane.

use super::EvalError;
use crate::imaging::Image;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Whether metrics see the raw float rasters or their 8-bit quantization
/// (the latter mirrors scoring files written to disk).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Continuous,
    Quantized,
}

fn same_dims(a: &Image, b: &Image) -> Result<(), EvalError> {
    if a.h() != b.h() || a.w() != b.w() {
        return Err(EvalError::Invalid(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.h(),
            a.w(),
            b.h(),
            b.w()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all three channels. Identical
/// rasters score the infinity sentinel.
pub fn psnr(a: &Image, b: &Image, mode: EvalMode) -> Result<f64, EvalError> {
    same_dims(a, b)?;
    let (qa, qb);
    let (a, b) = match mode {
        EvalMode::Continuous => (a, b),
        EvalMode::Quantized => {
            qa = a.quantized();
            qb = b.quantized();
            (&qa, &qb)
        }
    };
    // Compensated accumulation: keeps the mean exact for constant-gap
    // rasters and drift-free on large images.
    let (mut acc, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        let v = d * d;
        let t = acc + v;
        comp += if acc.abs() >= v.abs() { (acc - t) + v } else { (v - t) + acc };
        acc = t;
    }
    let mse = (acc + comp) / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn luma(img: &Image) -> Array2<f64> {
    let px = img.data();
    let (h, w, _) = px.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * px[[y, x, 0]] + 0.587 * px[[y, x, 1]] + 0.114 * px[[y, x, 2]]
    })
}

fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local structural similarity over all fully interior 11×11 windows
/// of the luma planes, with the standard small constants at dynamic range 1.
/// Both inputs go through identical arithmetic, so `ssim(a, a)` is exactly 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    same_dims(a, b)?;
    if a.h() < SSIM_WINDOW || a.w() < SSIM_WINDOW {
        return Err(EvalError::Invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.h(),
            a.w()
        )));
    }
    let la = luma(a);
    let lb = luma(b);
    let w = ssim_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let (h, wd) = la.dim();
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=wd - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wt = w[dy * SSIM_WINDOW + dx];
                    let va = la[[y0 + dy, x0 + dx]];
                    let vb = lb[[y0 + dy, x0 + dx]];
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean of the per-image PSNR values (infinite if any pair is exact).
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageMetrics>,
}

/// Score a set of named (result, reference) pairs; the aggregate is the
/// arithmetic mean of the per-image values. `crop` removes a uniform border
/// from both sides before scoring (0 = score everything).
pub fn metric_report(
    pairs: &[(String, Image, Image)],
    mode: EvalMode,
    crop: usize,
) -> Result<MetricReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Invalid("no image pairs to score".into()));
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (name, out, reference) in pairs {
        let (out, reference) = if crop > 0 {
            (out.crop_border(crop)?, reference.crop_border(crop)?)
        } else {
            (out.clone(), reference.clone())
        };
        per_image.push(ImageMetrics {
            name: name.clone(),
            psnr_db: psnr(&out, &reference, mode)?,
            ssim: ssim(&out, &reference)?,
        });
    }
    let n = per_image.len() as f64;
    Ok(MetricReport {
        psnr_db: per_image.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
        per_image,
    })
}

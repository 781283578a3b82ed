//! Gaussian blur and bicubic resampling.
//!
//! Conventions (pinned so numeric oracles can reproduce them):
//! - Gaussian kernels are sampled at integer offsets, truncated at ±4σ
//!   (radius = floor(4σ)) and renormalized to unit mass.
//! - Borders reflect symmetrically with the edge pixel repeated
//!   (`-1 -> 0`, `-2 -> 1`, `h -> h-1`).
//! - Bicubic uses the a = −0.5 cubic and center-aligned sampling:
//!   `src = (dst + 0.5) * (in/out) - 0.5`. The four tap weights of any
//!   BC-family cubic sum to 1 exactly, so no renormalization is applied.
//! - No anti-aliasing inside the bicubic step; the predetermined downscale
//!   relies on its σ = scale/2 pre-blur instead.

use super::{Image, ImagingError};
use ndarray::Array3;

/// Symmetric reflection with edge repeat.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    let mut j = i.rem_euclid(2 * n);
    if j >= n {
        j = 2 * n - 1 - j;
    }
    j as usize
}

/// Sampled, truncated, renormalized 1-D Gaussian. `sigma = 0` yields the
/// identity kernel `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma >= 0.0 && sigma.is_finite());
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).floor() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_rows(px: &Array3<f64>, k: &[f64]) -> Array3<f64> {
    let (h, w, c) = px.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - r, w);
                    acc += kv * px[[y, sx, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

fn convolve_cols(px: &Array3<f64>, k: &[f64]) -> Array3<f64> {
    let (h, w, c) = px.dim();
    let r = (k.len() / 2) as isize;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - r, h);
                    acc += kv * px[[sy, x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Separable blur with an arbitrary odd-length 1-D kernel (raw raster in,
/// raw raster out; no clamping).
pub(crate) fn blur_raw(px: &Array3<f64>, k: &[f64]) -> Array3<f64> {
    assert!(k.len() % 2 == 1, "blur kernel length must be odd");
    convolve_cols(&convolve_rows(px, k), k)
}

/// Gaussian blur of an image; output clamped at the module boundary.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    Image::from_array(blur_raw(img.data(), &k)).expect("blur of finite raster is finite")
}

/// The a = −0.5 cubic interpolation kernel.
#[inline]
pub(crate) fn cubic(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d < 1.0 {
        ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        (((d - 5.0) * d + 8.0) * d - 4.0) * A
    } else {
        0.0
    }
}

/// Taps and weights for resampling a length-`n_in` axis to `n_out`.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let s = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * s - 0.5;
            let base = center.floor() as isize - 1;
            let mut idx = [0usize; 4];
            let mut wgt = [0f64; 4];
            for t in 0..4 {
                let i = base + t as isize;
                idx[t] = reflect(i, n_in);
                wgt[t] = cubic(center - i as f64);
            }
            (idx, wgt)
        })
        .collect()
}

pub(crate) fn bicubic_raw(px: &Array3<f64>, oh: usize, ow: usize) -> Array3<f64> {
    let (h, w, c) = px.dim();
    // Horizontal pass.
    let taps_x = cubic_taps(w, ow);
    let mut tmp = Array3::zeros((h, ow, c));
    for y in 0..h {
        for (x, (idx, wgt)) in taps_x.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wgt[t] * px[[y, idx[t], ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    // Vertical pass.
    let taps_y = cubic_taps(h, oh);
    let mut out = Array3::zeros((oh, ow, c));
    for (y, (idx, wgt)) in taps_y.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wgt[t] * tmp[[idx[t], x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Bicubic resample to an arbitrary size (upscale or downscale).
pub fn bicubic_resize(img: &Image, oh: usize, ow: usize) -> Result<Image, ImagingError> {
    if oh == 0 || ow == 0 {
        return Err(ImagingError::Dimension("resize to empty raster".into()));
    }
    Image::from_array(bicubic_raw(img.data(), oh, ow))
}

/// The fixed HR→clean-LR operator: Gaussian blur with σ = scale/2 followed
/// by bicubic downscaling by `scale`.
pub fn predetermined_downscale(img: &Image, scale: usize) -> Result<Image, ImagingError> {
    if !(scale == 2 || scale == 4) {
        return Err(ImagingError::UnsupportedScale(scale));
    }
    let (h, w) = (img.h(), img.w());
    if h % scale != 0 || w % scale != 0 {
        return Err(ImagingError::Dimension(format!(
            "{h}x{w} not divisible by scale {scale}"
        )));
    }
    let sigma = scale as f64 / 2.0;
    let blurred = blur_raw(img.data(), &gaussian_kernel(sigma));
    Image::from_array(bicubic_raw(&blurred, h / scale, w / scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_truncated_at_4_sigma() {
        for sigma in [0.5, 1.0, 2.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (4.0 * sigma).floor() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Symmetric, peaked at center.
            let mid = k.len() / 2;
            for i in 0..mid {
                assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
                assert!(k[i] < k[mid]);
            }
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn scale_two_cubic_weights_match_closed_form() {
        // At scale 2 the sample point sits exactly between two sources:
        // distances (1.5, 0.5, 0.5, 1.5) give the classic half-phase weights.
        assert!((cubic(1.5) - -0.0625).abs() < 1e-15);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(cubic(2.0), 0.0);
        // Partition of unity at a few phases.
        for t in [0.0, 0.25, 0.5, 0.9] {
            let s = cubic(1.0 + t) + cubic(t) + cubic(1.0 - t) + cubic(2.0 - t);
            assert!((s - 1.0).abs() < 1e-12, "phase {t}: {s}");
        }
    }

    #[test]
    fn constant_images_survive_downscale() {
        let img = Image::constant(16, 16, 0.5);
        for scale in [2, 4] {
            let out = predetermined_downscale(&img, scale).unwrap();
            assert_eq!((out.h(), out.w()), (16 / scale, 16 / scale));
            for v in out.data() {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downscale_validates_inputs() {
        let img = Image::constant(15, 16, 0.5);
        assert!(matches!(
            predetermined_downscale(&img, 2),
            Err(ImagingError::Dimension(_))
        ));
        let img = Image::constant(16, 16, 0.5);
        assert!(matches!(
            predetermined_downscale(&img, 3),
            Err(ImagingError::UnsupportedScale(3))
        ));
    }

    #[test]
    fn reflect_repeats_edges_symmetrically() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(2, 4), 2);
    }
}

//! Dense compute kernels behind the graph ops.
//!
//! All tensors are standard-layout NCHW. Kernels take raw slices plus
//! explicit dimensions; the graph layer guarantees layout and shape.

use crate::scalar::Scalar;
use ndarray::{Array2, ArrayD, IxDyn};

/// Spatial geometry of a convolution: `out = (in + 2*pad - k) / stride + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Unfold `x` into a `(n*out_h*out_w, c_in*k*k)` patch matrix; out-of-bounds
/// taps read as zero.
pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Array2<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let kk = g.c_in * g.k * g.k;
    let mut cols = Array2::<S>::zeros((g.n * oh * ow, kk));
    let cdata = cols.as_slice_mut().expect("cols is freshly allocated");
    let plane = g.h * g.w;
    for n in 0..g.n {
        let xn = &x[n * g.c_in * plane..(n + 1) * g.c_in * plane];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * kk;
                let iy0 = (oy * g.stride) as isize - g.pad as isize;
                let ix0 = (ox * g.stride) as isize - g.pad as isize;
                for c in 0..g.c_in {
                    let xc = &xn[c * plane..(c + 1) * plane];
                    let base = row + c * g.k * g.k;
                    for ky in 0..g.k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue; // row stays zero
                        }
                        let src = iy as usize * g.w;
                        for kx in 0..g.k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            cdata[base + ky * g.k + kx] = xc[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a `(n*out_h*out_w, c_in*k*k)` patch-gradient matrix back onto the
/// input raster, accumulating overlaps. Inverse-adjoint of [`im2col`].
pub fn col2im<S: Scalar>(dcols: &Array2<S>, g: &ConvGeom) -> ArrayD<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let kk = g.c_in * g.k * g.k;
    let mut dx = ArrayD::<S>::zeros(IxDyn(&[g.n, g.c_in, g.h, g.w]));
    let out = dx.as_slice_mut().expect("dx is freshly allocated");
    let dc = dcols.as_slice().expect("dcols must be standard layout");
    let plane = g.h * g.w;
    for n in 0..g.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * kk;
                let iy0 = (oy * g.stride) as isize - g.pad as isize;
                let ix0 = (ox * g.stride) as isize - g.pad as isize;
                for c in 0..g.c_in {
                    let base = row + c * g.k * g.k;
                    let xc = n * g.c_in * plane + c * plane;
                    for ky in 0..g.k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = xc + iy as usize * g.w;
                        for kx in 0..g.k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            out[dst + ix as usize] = out[dst + ix as usize] + dc[base + ky * g.k + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Rearrange `(n*oh*ow, c_out)` GEMM output into NCHW.
pub fn rows_to_nchw<S: Scalar>(rows: &Array2<S>, n: usize, c: usize, h: usize, w: usize) -> ArrayD<S> {
    let mut out = ArrayD::<S>::zeros(IxDyn(&[n, c, h, w]));
    let o = out.as_slice_mut().expect("out is freshly allocated");
    let r = rows.as_slice().expect("rows must be standard layout");
    let plane = h * w;
    for i in 0..n {
        for p in 0..plane {
            let src = (i * plane + p) * c;
            let dst = i * c * plane + p;
            for ch in 0..c {
                o[dst + ch * plane] = r[src + ch];
            }
        }
    }
    out
}

/// Inverse of [`rows_to_nchw`]: NCHW gradient to `(n*oh*ow, c_out)` rows.
pub fn nchw_to_rows<S: Scalar>(g: &ArrayD<S>, n: usize, c: usize, h: usize, w: usize) -> Array2<S> {
    let plane = h * w;
    let mut rows = Array2::<S>::zeros((n * plane, c));
    let r = rows.as_slice_mut().expect("rows is freshly allocated");
    let src = g.as_slice().expect("grad must be standard layout");
    for i in 0..n {
        for p in 0..plane {
            let dst = (i * plane + p) * c;
            let s = i * c * plane + p;
            for ch in 0..c {
                r[dst + ch] = src[s + ch * plane];
            }
        }
    }
    rows
}

/// The eight axis-aligned symmetries of a raster (dihedral group of the
/// square), indexed 1..=8:
///
/// 1 identity, 2 rotate 90 deg counter-clockwise, 3 rotate 180 deg,
/// 4 rotate 90 deg clockwise, 5 mirror left-right, 6 transpose,
/// 7 mirror top-bottom, 8 anti-transpose.
///
/// Rotations by 90 deg and the two transposes swap H and W.
pub const DIHEDRAL_OPS: usize = 8;

/// Index of the inverse element for each op (1-based, position 0 unused).
pub const DIHEDRAL_INVERSE: [u8; 9] = [0, 1, 4, 3, 2, 5, 6, 7, 8];

/// Whether the op swaps the spatial axes.
pub fn dihedral_swaps_axes(op: u8) -> bool {
    matches!(op, 2 | 4 | 6 | 8)
}

/// Source coordinates `(sy, sx)` for destination `(y, x)` under `op`, where
/// the input raster is `h x w` (output is `w x h` for axis-swapping ops).
/// Public so image-space code uses the identical geometry.
#[inline]
pub fn dihedral_src(op: u8, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
    match op {
        1 => (y, x),
        2 => (x, w - 1 - y),
        3 => (h - 1 - y, w - 1 - x),
        4 => (h - 1 - x, y),
        5 => (y, w - 1 - x),
        6 => (x, y),
        7 => (h - 1 - y, x),
        8 => (h - 1 - x, w - 1 - y),
        _ => unreachable!("dihedral op out of range"),
    }
}

/// Apply dihedral op `op` to every (H, W) plane of an NCHW tensor.
pub fn dihedral_nchw<S: Scalar>(x: &ArrayD<S>, op: u8) -> ArrayD<S> {
    let sh = x.shape();
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (oh, ow) = if dihedral_swaps_axes(op) { (w, h) } else { (h, w) };
    let mut out = ArrayD::<S>::zeros(IxDyn(&[n, c, oh, ow]));
    let src = x.as_slice().expect("input must be standard layout");
    let dst = out.as_slice_mut().expect("out is freshly allocated");
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for x_ in 0..ow {
                let (sy, sx) = dihedral_src(op, y, x_, h, w);
                d[y * ow + x_] = s[sy * w + sx];
            }
        }
    }
    out
}

/// Per-channel mean and biased variance over (N, H, W) of an NCHW tensor.
pub fn channel_moments<S: Scalar>(x: &ArrayD<S>, c: usize) -> (Vec<S>, Vec<S>) {
    let sh = x.shape();
    let (n, h, w) = (sh[0], sh[2], sh[3]);
    let plane = h * w;
    let m = S::from_f64((n * plane) as f64);
    let data = x.as_slice().expect("input must be standard layout");
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ch in 0..c {
        let mut acc = S::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for v in &data[base..base + plane] {
                acc = acc + *v;
            }
        }
        mean[ch] = acc / m;
    }
    for ch in 0..c {
        let mu = mean[ch];
        let mut acc = S::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for v in &data[base..base + plane] {
                let d = *v - mu;
                acc = acc + d * d;
            }
        }
        var[ch] = acc / m;
    }
    (mean, var)
}

/// Sub-pixel rearrangement: `(n, c*r^2, h, w) -> (n, c, h*r, w*r)`.
/// Input channel `c*r^2 + dy*r + dx` lands on output offset `(dy, dx)`.
pub fn pixel_shuffle<S: Scalar>(x: &ArrayD<S>, r: usize) -> ArrayD<S> {
    let sh = x.shape();
    let (n, c_in, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let c_out = c_in / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = ArrayD::<S>::zeros(IxDyn(&[n, c_out, oh, ow]));
    let src = x.as_slice().expect("input must be standard layout");
    let dst = out.as_slice_mut().expect("out is freshly allocated");
    for i in 0..n {
        for co in 0..c_out {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let s0 = (i * c_in + ci) * h * w;
                    let d0 = (i * c_out + co) * oh * ow;
                    for y in 0..h {
                        let drow = d0 + (y * r + dy) * ow + dx;
                        let srow = s0 + y * w;
                        for x_ in 0..w {
                            dst[drow + x_ * r] = src[srow + x_];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pixel_shuffle`]: scatter gradients back to input channels.
pub fn pixel_unshuffle<S: Scalar>(g: &ArrayD<S>, r: usize) -> ArrayD<S> {
    let sh = g.shape();
    let (n, c_out, oh, ow) = (sh[0], sh[1], sh[2], sh[3]);
    let (h, w) = (oh / r, ow / r);
    let c_in = c_out * r * r;
    let mut out = ArrayD::<S>::zeros(IxDyn(&[n, c_in, h, w]));
    let dst = out.as_slice_mut().expect("out is freshly allocated");
    let src = g.as_slice().expect("grad must be standard layout");
    for i in 0..n {
        for co in 0..c_out {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let d0 = (i * c_in + ci) * h * w;
                    let s0 = (i * c_out + co) * oh * ow;
                    for y in 0..h {
                        let srow = s0 + (y * r + dy) * ow + dx;
                        let drow = d0 + y * w;
                        for x_ in 0..w {
                            dst[drow + x_] = src[srow + x_ * r];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn arr(shape: &[usize], data: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    #[test]
    fn dihedral_rot90_ccw_matches_worked_example() {
        // [[1,2],[3,4]] rotated 90 deg counter-clockwise is [[2,4],[1,3]].
        let x = arr(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = dihedral_nchw(&x, 2);
        assert_eq!(y.as_slice().unwrap(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn dihedral_ops_invert() {
        let x = arr(&[1, 2, 3, 4], (0..24).map(|v| v as f64).collect());
        for op in 1..=8u8 {
            let inv = DIHEDRAL_INVERSE[op as usize];
            let back = dihedral_nchw(&dihedral_nchw(&x, op), inv);
            assert_eq!(back, x, "op {op} not inverted by {inv}");
        }
    }

    #[test]
    fn dihedral_ops_are_distinct_and_closed() {
        // On a generic 3x3 plane the 8 images are pairwise distinct, and
        // composing any two lands back inside the set (group closure).
        let x = arr(&[1, 1, 3, 3], (0..9).map(|v| v as f64 + 1.0).collect());
        let images: Vec<_> = (1..=8u8).map(|op| dihedral_nchw(&x, op)).collect();
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(images[i], images[j], "ops {} and {} coincide", i + 1, j + 1);
            }
        }
        for a in 1..=8u8 {
            for b in 1..=8u8 {
                let composed = dihedral_nchw(&dihedral_nchw(&x, a), b);
                assert!(
                    images.iter().any(|im| *im == composed),
                    "composition {b} after {a} left the group"
                );
            }
        }
    }

    #[test]
    fn pixel_shuffle_places_channel_blocks() {
        // r=2, one output channel: input channels [0..4) hold the four
        // sub-pixel offsets in row-major (dy, dx) order.
        let x = arr(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.as_slice().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        let back = pixel_unshuffle(&y, 2);
        assert_eq!(back, x);
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        // 1x1x3x3 input, 1x1x2x2 kernel, stride 1, no padding.
        let g = ConvGeom { n: 1, c_in: 1, h: 3, w: 3, c_out: 1, k: 2, stride: 1, pad: 0 };
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let cols = im2col(&x, &g);
        // First patch is the top-left 2x2 window.
        assert_eq!(cols.row(0).to_vec(), vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(cols.row(3).to_vec(), vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn channel_moments_are_biased() {
        let x = arr(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let (m, v) = channel_moments(&x, 1);
        assert!((m[0] - 2.5).abs() < 1e-12);
        assert!((v[0] - 1.25).abs() < 1e-12); // biased: sum of squares / n
    }
}

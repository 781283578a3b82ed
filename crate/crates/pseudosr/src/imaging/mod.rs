//! Image representation, I/O, resampling, dihedral transforms, degradation
//! synthesis, and unaligned patch sampling.
//!
//! Images are `(h, w, 3)` f64 rasters in `[0,1]`, RGB order. Every operation
//! that leaves the module clamps back into range (cubic kernels overshoot).

mod dataset;
mod degrade;
mod resize;
mod sampling;

pub use dataset::{generate_texture, load_dataset, write_dataset, Dataset, DatasetBuilder, MANIFEST_NAME};
pub use degrade::{synth_degrade, BlurKind, DegradationSpec};
pub use resize::{bicubic_resize, gaussian_blur, gaussian_kernel, predetermined_downscale};
pub use sampling::{images_to_nchw, sample_unaligned_batch, SampleInfo, UnalignedBatch};

use autograd::kernels::{dihedral_src, dihedral_swaps_axes, DIHEDRAL_INVERSE};
use autograd::Scalar;
use ndarray::{Array3, ArrayD, IxDyn};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unsupported scale {0} (expected 2 or 4)")]
    UnsupportedScale(usize),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("invalid image data: {0}")]
    Invalid(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
}

/// One of the eight flip/rotation symmetries of a raster, indexed 1..=8.
///
/// 1 identity, 2 rotate 90 CCW, 3 rotate 180, 4 rotate 90 CW,
/// 5 mirror left-right, 6 transpose, 7 mirror top-bottom, 8 anti-transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DihedralIndex(u8);

impl DihedralIndex {
    pub const IDENTITY: DihedralIndex = DihedralIndex(1);

    pub fn new(i: u8) -> Result<Self, ImagingError> {
        if (1..=8).contains(&i) {
            Ok(DihedralIndex(i))
        } else {
            Err(ImagingError::Invalid(format!("dihedral index {i} outside 1..=8")))
        }
    }

    pub fn all() -> [DihedralIndex; 8] {
        [1u8, 2, 3, 4, 5, 6, 7, 8].map(DihedralIndex)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn inverse(self) -> DihedralIndex {
        DihedralIndex(DIHEDRAL_INVERSE[self.0 as usize])
    }

    pub fn swaps_axes(self) -> bool {
        dihedral_swaps_axes(self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    px: Array3<f64>,
}

impl Image {
    /// Wrap a raster, validating shape and finiteness; values are clamped
    /// into `[0,1]` (module-boundary contract).
    pub fn from_array(mut px: Array3<f64>) -> Result<Self, ImagingError> {
        let (h, w, c) = px.dim();
        if c != 3 {
            return Err(ImagingError::Invalid(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(ImagingError::Dimension("empty image".into()));
        }
        if px.iter().any(|v| !v.is_finite()) {
            return Err(ImagingError::Invalid("non-finite pixel value".into()));
        }
        px.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Image { px })
    }

    pub fn constant(h: usize, w: usize, value: f64) -> Self {
        Image { px: Array3::from_elem((h, w, 3), value.clamp(0.0, 1.0)) }
    }

    pub fn h(&self) -> usize {
        self.px.dim().0
    }

    pub fn w(&self) -> usize {
        self.px.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.px
    }

    pub fn into_array(self) -> Array3<f64> {
        self.px
    }

    pub fn load_png(path: &Path) -> Result<Self, ImagingError> {
        let img = image::open(path).map_err(|e| ImagingError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut px = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                px[[y as usize, x as usize, c]] = p.0[c] as f64 / 255.0;
            }
        }
        Ok(Image { px })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let (h, w, _) = self.px.dim();
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for (x, y, p) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = self.px[[y as usize, x as usize, c]];
                p.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        buf.save(path).map_err(|e| ImagingError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Round-trip through 8-bit quantization (what a PNG save/load does).
    pub fn quantized(&self) -> Image {
        Image { px: self.px.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0) }
    }

    /// Apply a dihedral symmetry. Exact (pure permutation of pixels).
    pub fn dihedral(&self, i: DihedralIndex) -> Image {
        let (h, w, _) = self.px.dim();
        let (oh, ow) = if i.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = Array3::zeros((oh, ow, 3));
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = dihedral_src(i.index(), y, x, h, w);
                for c in 0..3 {
                    out[[y, x, c]] = self.px[[sy, sx, c]];
                }
            }
        }
        Image { px: out }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image, ImagingError> {
        let (ih, iw, _) = self.px.dim();
        if y0 + h > ih || x0 + w > iw {
            return Err(ImagingError::Dimension(format!(
                "crop {h}x{w}+{y0}+{x0} outside {ih}x{iw}"
            )));
        }
        Ok(Image {
            px: self.px.slice(ndarray::s![y0..y0 + h, x0..x0 + w, ..]).to_owned(),
        })
    }

    /// Remove a uniform border (used for scale-pixel evaluation crops).
    pub fn crop_border(&self, border: usize) -> Result<Image, ImagingError> {
        let (h, w, _) = self.px.dim();
        if 2 * border >= h || 2 * border >= w {
            return Err(ImagingError::Dimension(format!(
                "border {border} leaves no pixels of {h}x{w}"
            )));
        }
        self.crop(border, border, h - 2 * border, w - 2 * border)
    }

    /// `(1, 3, h, w)` network-layout tensor.
    pub fn to_nchw<S: Scalar>(&self) -> ArrayD<S> {
        let (h, w, _) = self.px.dim();
        let mut t = ArrayD::<S>::zeros(IxDyn(&[1, 3, h, w]));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    t[[0, c, y, x]] = S::from_f64(self.px[[y, x, c]]);
                }
            }
        }
        t
    }

    /// Image from one batch element of an NCHW tensor, clamped to `[0,1]`.
    pub fn from_nchw<S: Scalar>(t: &ArrayD<S>, n: usize) -> Result<Image, ImagingError> {
        let sh = t.shape();
        if sh.len() != 4 || sh[1] != 3 {
            return Err(ImagingError::Dimension(format!("expected (n,3,h,w), got {sh:?}")));
        }
        if n >= sh[0] {
            return Err(ImagingError::Dimension(format!("batch index {n} out of {}", sh[0])));
        }
        let (h, w) = (sh[2], sh[3]);
        let mut px = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = t[[n, c, y, x]].as_f64();
                    px[[y, x, c]] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                }
            }
        }
        Ok(Image { px })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dihedral_identity_and_inverses() {
        let mut px = Array3::zeros((5, 7, 3));
        for (i, v) in px.iter_mut().enumerate() {
            *v = (i % 97) as f64 / 97.0;
        }
        let img = Image::from_array(px).unwrap();
        assert_eq!(img.dihedral(DihedralIndex::IDENTITY), img);
        for i in DihedralIndex::all() {
            let back = img.dihedral(i).dihedral(i.inverse());
            assert_eq!(back, img, "op {} not undone by {}", i.index(), i.inverse().index());
        }
    }

    #[test]
    fn dihedral_rot90_ccw_worked_example() {
        let mut px = Array3::zeros((2, 2, 3));
        for c in 0..3 {
            px[[0, 0, c]] = 0.1;
            px[[0, 1, c]] = 0.2;
            px[[1, 0, c]] = 0.3;
            px[[1, 1, c]] = 0.4;
        }
        let img = Image::from_array(px).unwrap();
        let r = img.dihedral(DihedralIndex::new(2).unwrap());
        let d = r.data();
        assert_eq!(
            [d[[0, 0, 0]], d[[0, 1, 0]], d[[1, 0, 0]], d[[1, 1, 0]]],
            [0.2, 0.4, 0.1, 0.3]
        );
    }

    #[test]
    fn nchw_round_trip() {
        let mut px = Array3::zeros((3, 4, 3));
        for (i, v) in px.iter_mut().enumerate() {
            *v = (i as f64) / 36.0;
        }
        let img = Image::from_array(px).unwrap();
        let t = img.to_nchw::<f64>();
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        let back = Image::from_nchw(&t, 0).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let mut px = Array3::zeros((6, 5, 3));
        for (i, v) in px.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        let img = Image::from_array(px).unwrap();
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back, img.quantized());
    }

    #[test]
    fn invalid_rasters_are_rejected() {
        assert!(Image::from_array(Array3::zeros((0, 4, 3))).is_err());
        let mut bad = Array3::zeros((2, 2, 3));
        bad[[0, 0, 0]] = f64::NAN;
        assert!(Image::from_array(bad).is_err());
        // Out-of-range values are clamped, not rejected.
        let mut hot = Array3::zeros((2, 2, 3));
        hot[[1, 1, 2]] = 1.5;
        let img = Image::from_array(hot).unwrap();
        assert_eq!(img.data()[[1, 1, 2]], 1.0);
    }
}

//! On-disk dataset layout and procedural texture synthesis.
//!
//! A dataset is a directory holding PNG files plus a `manifest.txt` at its
//! root. Each manifest line is `hr <relative-path>` or `lr <relative-path>`
//! (blank lines and `#` comments are skipped). The two lists are independent:
//! nothing in the format pairs a source image with a target image.

use super::{Image, ImagingError};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub lr: Vec<Image>,
    pub hr: Vec<Image>,
    pub lr_names: Vec<String>,
    pub hr_names: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> ImagingError {
    ImagingError::Io { path: path.to_path_buf(), source }
}

/// Incrementally assemble a dataset directory. PNGs are written as images
/// are added; `finish` writes the manifest.
pub struct DatasetBuilder {
    root: PathBuf,
    lines: Vec<String>,
}

impl DatasetBuilder {
    pub fn new(root: &Path) -> Result<Self, ImagingError> {
        fs::create_dir_all(root.join("lr")).map_err(|e| io_err(root, e))?;
        fs::create_dir_all(root.join("hr")).map_err(|e| io_err(root, e))?;
        Ok(DatasetBuilder { root: root.to_path_buf(), lines: Vec::new() })
    }

    fn add(&mut self, domain: &str, name: &str, img: &Image) -> Result<(), ImagingError> {
        if name.is_empty() || name.contains(['/', '\\']) || name.contains(char::is_whitespace) {
            return Err(ImagingError::Manifest(format!("bad image name {name:?}")));
        }
        let rel = format!("{domain}/{name}.png");
        img.save_png(&self.root.join(&rel))?;
        self.lines.push(format!("{domain} {rel}"));
        Ok(())
    }

    pub fn add_lr(&mut self, name: &str, img: &Image) -> Result<(), ImagingError> {
        self.add("lr", name, img)
    }

    pub fn add_hr(&mut self, name: &str, img: &Image) -> Result<(), ImagingError> {
        self.add("hr", name, img)
    }

    pub fn finish(self) -> Result<PathBuf, ImagingError> {
        let path = self.root.join(MANIFEST_NAME);
        let mut body = self.lines.join("\n");
        body.push('\n');
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        Ok(self.root)
    }
}

/// Write a complete dataset in one call.
pub fn write_dataset(
    root: &Path,
    lr: &[(String, Image)],
    hr: &[(String, Image)],
) -> Result<(), ImagingError> {
    let mut b = DatasetBuilder::new(root)?;
    for (name, img) in lr {
        b.add_lr(name, img)?;
    }
    for (name, img) in hr {
        b.add_hr(name, img)?;
    }
    b.finish()?;
    Ok(())
}

pub fn load_dataset(root: &Path) -> Result<Dataset, ImagingError> {
    let mpath = root.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let mut ds = Dataset { lr: Vec::new(), hr: Vec::new(), lr_names: Vec::new(), hr_names: Vec::new() };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (domain, rel) = line.split_once(char::is_whitespace).ok_or_else(|| {
            ImagingError::Manifest(format!("{}:{}: expected `lr <path>` or `hr <path>`", mpath.display(), lineno + 1))
        })?;
        let rel = rel.trim();
        if domain != "lr" && domain != "hr" {
            return Err(ImagingError::Manifest(format!(
                "{}:{}: unknown domain {domain:?}",
                mpath.display(),
                lineno + 1
            )));
        }
        let img = Image::load_png(&root.join(rel))?;
        if domain == "lr" {
            ds.lr.push(img);
            ds.lr_names.push(rel.to_string());
        } else {
            ds.hr.push(img);
            ds.hr_names.push(rel.to_string());
        }
    }
    if ds.lr.is_empty() && ds.hr.is_empty() {
        return Err(ImagingError::Manifest(format!("{}: no images listed", mpath.display())));
    }
    Ok(ds)
}

/// Procedural color texture: a smooth ramp, a few sinusoidal gratings at
/// mixed frequencies, and one or two thresholded gratings for hard edges,
/// jointly normalized into [0.05, 0.95]. All structure comes from `rng`, so
/// equal generator states give equal images.
pub fn generate_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    assert!(h >= 4 && w >= 4, "texture size {h}x{w} too small");
    let mut px = Array3::<f64>::zeros((h, w, 3));
    let (fh, fw) = (h as f64, w as f64);

    // Smooth background ramp with a random direction per channel.
    let ramp: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(0.2..0.8),
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let (gy, gx, base) = ramp[c];
                px[[y, x, c]] = base + gy * (y as f64 / fh - 0.5) + gx * (x as f64 / fw - 0.5);
            }
        }
    }

    // Sinusoidal gratings: correlated across channels so edges carry color.
    let n_waves = rng.random_range(2..=4usize);
    for _ in 0..n_waves {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(1.5..(fh.min(fw) / 4.0).max(2.0));
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amps: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.3)).collect();
        let (dy, dx) = (theta.sin(), theta.cos());
        for y in 0..h {
            for x in 0..w {
                let t = (y as f64 * dy / fh + x as f64 * dx / fw) * std::f64::consts::TAU * freq;
                let v = (t + phase).sin();
                for c in 0..3 {
                    px[[y, x, c]] += amps[c] * v;
                }
            }
        }
    }

    // Thresholded gratings: step edges that survive any blur comparison.
    let n_hard = rng.random_range(1..=2usize);
    for _ in 0..n_hard {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(1.0..(fh.min(fw) / 8.0).max(1.5));
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let cut: f64 = rng.random_range(-0.4..0.4);
        let amps: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..0.35)).collect();
        let (dy, dx) = (theta.sin(), theta.cos());
        for y in 0..h {
            for x in 0..w {
                let t = (y as f64 * dy / fh + x as f64 * dx / fw) * std::f64::consts::TAU * freq;
                if (t + phase).sin() > cut {
                    for c in 0..3 {
                        px[[y, x, c]] += amps[c];
                    }
                }
            }
        }
    }

    // Joint min/max normalization preserves relative channel structure.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in px.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-9);
    px.mapv_inplace(|v| 0.05 + 0.9 * (v - lo) / span);
    Image::from_array(px).expect("normalized texture is in gamut")
}

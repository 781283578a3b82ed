//! Unaligned patch sampling for two-domain training.
//!
//! Source and target patches are drawn independently — nothing ever pairs a
//! source crop with a target crop. Per sample the draw order is fixed
//! (source index, y offset, x offset, transform; then the same four for the
//! target), so a given generator state reproduces a batch exactly.

use super::resize::predetermined_downscale;
use super::{DihedralIndex, Image, ImagingError};
use autograd::Scalar;
use ndarray::Array4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Where a patch came from: pool index, top-left corner, augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleInfo {
    pub x_index: usize,
    pub x_offset: (usize, usize),
    pub x_op: DihedralIndex,
    pub y_index: usize,
    pub y_offset: (usize, usize),
    pub y_op: DihedralIndex,
}

/// One training batch: `x` source-domain patches (lr_patch), `y` target
/// patches (lr_patch * scale), `y_down` the deterministic downscale of each
/// `y` patch.
#[derive(Debug, Clone)]
pub struct UnalignedBatch {
    pub x: Vec<Image>,
    pub y: Vec<Image>,
    pub y_down: Vec<Image>,
    pub provenance: Vec<SampleInfo>,
}

pub fn sample_unaligned_batch(
    lr_pool: &[Image],
    hr_pool: &[Image],
    lr_patch: usize,
    scale: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UnalignedBatch, ImagingError> {
    if lr_pool.is_empty() || hr_pool.is_empty() {
        return Err(ImagingError::Sampling("empty image pool".into()));
    }
    if lr_patch == 0 || batch == 0 {
        return Err(ImagingError::Sampling(format!(
            "lr_patch {lr_patch} and batch {batch} must be positive"
        )));
    }
    let hr_patch = lr_patch * scale;
    for (i, img) in lr_pool.iter().enumerate() {
        if img.h() < lr_patch || img.w() < lr_patch {
            return Err(ImagingError::Sampling(format!(
                "source image {i} is {}x{}, smaller than patch {lr_patch}",
                img.h(),
                img.w()
            )));
        }
    }
    for (i, img) in hr_pool.iter().enumerate() {
        if img.h() < hr_patch || img.w() < hr_patch {
            return Err(ImagingError::Sampling(format!(
                "target image {i} is {}x{}, smaller than patch {hr_patch}",
                img.h(),
                img.w()
            )));
        }
    }

    let mut out = UnalignedBatch {
        x: Vec::with_capacity(batch),
        y: Vec::with_capacity(batch),
        y_down: Vec::with_capacity(batch),
        provenance: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let x_index = rng.random_range(0..lr_pool.len());
        let xi = &lr_pool[x_index];
        let x_offset = (
            rng.random_range(0..=xi.h() - lr_patch),
            rng.random_range(0..=xi.w() - lr_patch),
        );
        let x_op = DihedralIndex::new(rng.random_range(1..=8)).expect("range is 1..=8");
        let y_index = rng.random_range(0..hr_pool.len());
        let yi = &hr_pool[y_index];
        let y_offset = (
            rng.random_range(0..=yi.h() - hr_patch),
            rng.random_range(0..=yi.w() - hr_patch),
        );
        let y_op = DihedralIndex::new(rng.random_range(1..=8)).expect("range is 1..=8");

        let x = xi.crop(x_offset.0, x_offset.1, lr_patch, lr_patch)?.dihedral(x_op);
        let y = yi.crop(y_offset.0, y_offset.1, hr_patch, hr_patch)?.dihedral(y_op);
        let y_down = predetermined_downscale(&y, scale)?;
        out.x.push(x);
        out.y.push(y);
        out.y_down.push(y_down);
        out.provenance.push(SampleInfo { x_index, x_offset, x_op, y_index, y_offset, y_op });
    }
    Ok(out)
}

/// Stack same-sized images into an (n, 3, h, w) tensor.
pub fn images_to_nchw<S: Scalar>(imgs: &[Image]) -> Result<Array4<S>, ImagingError> {
    let first = imgs
        .first()
        .ok_or_else(|| ImagingError::Sampling("cannot stack zero images".into()))?;
    let (h, w) = (first.h(), first.w());
    let mut t = Array4::<S>::zeros((imgs.len(), 3, h, w));
    for (n, img) in imgs.iter().enumerate() {
        if img.h() != h || img.w() != w {
            return Err(ImagingError::Dimension(format!(
                "image {n} is {}x{}, expected {h}x{w}",
                img.h(),
                img.w()
            )));
        }
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    t[[n, c, y, x]] = S::from_f64(img.data()[[y, x, c]]);
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pool(n: usize, h: usize, w: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut px = ndarray::Array3::zeros((h, w, 3));
                px.mapv_inplace(|_: f64| rng.random_range(0.0..1.0));
                Image::from_array(px).unwrap()
            })
            .collect()
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let lr = pool(3, 20, 24, 1);
        let hr = pool(2, 40, 44, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = sample_unaligned_batch(&lr, &hr, 8, 2, 5, &mut rng).unwrap();
        assert_eq!(b.x.len(), 5);
        for i in 0..5 {
            assert_eq!((b.x[i].h(), b.x[i].w()), (8, 8));
            assert_eq!((b.y[i].h(), b.y[i].w()), (16, 16));
            assert_eq!((b.y_down[i].h(), b.y_down[i].w()), (8, 8));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let b2 = sample_unaligned_batch(&lr, &hr, 8, 2, 5, &mut rng2).unwrap();
        assert_eq!(b.provenance, b2.provenance);
        assert_eq!(b.x, b2.x);
        assert_eq!(b.y_down, b2.y_down);
    }

    #[test]
    fn provenance_replays_patches() {
        let lr = pool(2, 16, 16, 3);
        let hr = pool(2, 32, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = sample_unaligned_batch(&lr, &hr, 6, 2, 4, &mut rng).unwrap();
        for (i, info) in b.provenance.iter().enumerate() {
            let x = lr[info.x_index]
                .crop(info.x_offset.0, info.x_offset.1, 6, 6)
                .unwrap()
                .dihedral(info.x_op);
            assert_eq!(b.x[i], x);
            let y = hr[info.y_index]
                .crop(info.y_offset.0, info.y_offset.1, 12, 12)
                .unwrap()
                .dihedral(info.y_op);
            assert_eq!(b.y[i], y);
        }
    }

    #[test]
    fn rejects_undersized_pool_images() {
        let lr = pool(2, 7, 16, 5);
        let hr = pool(1, 32, 32, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_unaligned_batch(&lr, &hr, 8, 2, 1, &mut rng).unwrap_err();
        assert!(matches!(err, ImagingError::Sampling(_)), "{err}");
        let hr_small = pool(1, 15, 32, 6);
        let lr_ok = pool(1, 16, 16, 5);
        let err = sample_unaligned_batch(&lr_ok, &hr_small, 8, 2, 1, &mut rng).unwrap_err();
        assert!(matches!(err, ImagingError::Sampling(_)), "{err}");
    }

    #[test]
    fn nchw_stack_layout() {
        let lr = pool(1, 4, 5, 7);
        let t = images_to_nchw::<f64>(&lr).unwrap();
        assert_eq!(t.dim(), (1, 3, 4, 5));
        assert_eq!(t[[0, 2, 1, 3]], lr[0].data()[[1, 3, 2]]);
        let mixed = vec![lr[0].clone(), Image::constant(5, 5, 0.1)];
        assert!(images_to_nchw::<f64>(&mixed).is_err());
    }
}

//! Finite-difference gradient verification (always in f64).

use ndarray::ArrayD;

/// Central-difference gradients of `eval` with respect to every element of
/// every array in `params`. `eval` is called with the perturbed parameter
/// set; `params` is restored before returning.
pub fn central_diff<F>(params: &mut [ArrayD<f64>], eps: f64, mut eval: F) -> Vec<ArrayD<f64>>
where
    F: FnMut(&[ArrayD<f64>]) -> f64,
{
    let mut grads: Vec<ArrayD<f64>> = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].as_slice().unwrap()[ei];
            params[pi].as_slice_mut().unwrap()[ei] = orig + eps;
            let plus = eval(params);
            params[pi].as_slice_mut().unwrap()[ei] = orig - eps;
            let minus = eval(params);
            params[pi].as_slice_mut().unwrap()[ei] = orig;
            grads[pi].as_slice_mut().unwrap()[ei] = (plus - minus) / (2.0 * eps);
        }
    }
    grads
}

/// Worst relative discrepancy between analytic and numeric gradients:
/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero entries from
/// inflating the ratio with finite-difference noise.
pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (a, b) in analytic.iter().zip(numeric.iter()) {
        let denom = a.abs().max(b.abs()).max(floor);
        worst = worst.max((a - b).abs() / denom);
    }
    worst
}

/// Max relative error across a list of (analytic, numeric) pairs where the
/// analytic side may be absent (treated as identically zero, e.g. a frozen
/// parameter that should have received no gradient at all).
pub fn max_rel_err_all(
    analytic: &[Option<ArrayD<f64>>],
    numeric: &[ArrayD<f64>],
    floor: f64,
) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        match a {
            Some(a) => worst = worst.max(max_rel_err(a, n, floor)),
            None => {
                let zero = ArrayD::zeros(n.raw_dim());
                worst = worst.max(max_rel_err(&zero, n, floor));
            }
        }
    }
    worst
}

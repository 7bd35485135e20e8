//! Central finite-difference utilities shared by gradient tests.

use ndarray::ArrayD;

/// Numerical gradient of `f` at `x0` via central differences with `step`.
pub fn central_diff<G>(mut f: G, x0: &ArrayD<f64>, step: f64) -> ArrayD<f64>
where
    G: FnMut(&ArrayD<f64>) -> f64,
{
    let mut grad = ArrayD::<f64>::zeros(x0.raw_dim());
    let mut x = x0.clone();
    for idx in 0..x0.len() {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + step;
        let fp = f(&x);
        x.as_slice_mut().unwrap()[idx] = orig - step;
        let fm = f(&x);
        x.as_slice_mut().unwrap()[idx] = orig;
        grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Worst relative error between two gradients.
///
/// Per element: `|a - n| / max(|a|, |n|)`, skipping pairs where both
/// magnitudes fall below `atol` (pure round-off noise).
pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, atol: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let scale = a.abs().max(n.abs());
        if scale < atol {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

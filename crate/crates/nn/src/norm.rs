//! Batch normalization over `(N, T, H, W)` per channel.
//!
//! Training normalizes with biased batch variance and updates running
//! statistics with the unbiased estimate (`momentum` weighting the new
//! value); evaluation normalizes with the running statistics. `eps = 1e-5`,
//! `momentum = 0.1`.

use ndarray::{s, Array1, Array5};

use crate::param::{NamedParams, NamedParamsMut, Param};
use crate::scalar::Scalar;

pub struct BatchNorm3d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    eps: F,
    momentum: F,
    cache: Option<BnCache<F>>,
}

struct BnCache<F: Scalar> {
    xhat: Array5<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm3d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            gamma: Param::new(Array1::<F>::ones(channels)),
            beta: Param::new(Array1::<F>::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: F::from_f64(1e-5),
            momentum: F::from_f64(0.1),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        vec![
            ("gamma".to_string(), &self.gamma),
            ("beta".to_string(), &self.beta),
        ]
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
        ]
    }

    /// Running statistics as named tensors so checkpoints can carry them.
    pub fn state(&self) -> Vec<(String, Array1<F>)> {
        vec![
            ("running_mean".to_string(), self.running_mean.clone()),
            ("running_var".to_string(), self.running_var.clone()),
        ]
    }

    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        let (n, c, t, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channel count");
        let count = n * t * h * w;
        let mut y = Array5::<F>::zeros(x.raw_dim());

        if train {
            assert!(count >= 2, "batchnorm needs at least two values per channel");
            let cf = F::from_f64(count as f64);
            let mut xhat = Array5::<F>::zeros(x.raw_dim());
            let mut inv_std = Array1::<F>::zeros(c);
            for ci in 0..c {
                let xc = x.slice(s![.., ci, .., .., ..]);
                let mean = xc.sum() / cf;
                let mut var = F::zero();
                for &v in xc.iter() {
                    let d = v - mean;
                    var = var + d * d;
                }
                var = var / cf;
                let istd = F::one() / (var + self.eps).sqrt();
                inv_std[ci] = istd;

                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                let mut xh = xhat.slice_mut(s![.., ci, .., .., ..]);
                let mut yc = y.slice_mut(s![.., ci, .., .., ..]);
                ndarray::Zip::from(&mut xh).and(&mut yc).and(&xc).for_each(
                    |xh, yc, &v| {
                        let z = (v - mean) * istd;
                        *xh = z;
                        *yc = g * z + b;
                    },
                );

                let unbiased = var * cf / F::from_f64((count - 1) as f64);
                let m = self.momentum;
                self.running_mean[ci] = (F::one() - m) * self.running_mean[ci] + m * mean;
                self.running_var[ci] = (F::one() - m) * self.running_var[ci] + m * unbiased;
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for ci in 0..c {
                let mean = self.running_mean[ci];
                let istd = F::one() / (self.running_var[ci] + self.eps).sqrt();
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                let xc = x.slice(s![.., ci, .., .., ..]);
                let mut yc = y.slice_mut(s![.., ci, .., .., ..]);
                ndarray::Zip::from(&mut yc)
                    .and(&xc)
                    .for_each(|yc, &v| *yc = g * (v - mean) * istd + b);
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        let cache = self.cache.take().expect("batchnorm backward without cached forward");
        let (n, c, t, h, w) = cache.xhat.dim();
        assert_eq!(dy.dim(), cache.xhat.dim(), "batchnorm dy shape");
        let cf = F::from_f64((n * t * h * w) as f64);
        let mut dx = Array5::<F>::zeros(dy.raw_dim());

        for ci in 0..c {
            let dyc = dy.slice(s![.., ci, .., .., ..]);
            let xh = cache.xhat.slice(s![.., ci, .., .., ..]);

            let mut sum_dy = F::zero();
            let mut sum_dy_xh = F::zero();
            for (&d, &z) in dyc.iter().zip(xh.iter()) {
                sum_dy = sum_dy + d;
                sum_dy_xh = sum_dy_xh + d * z;
            }
            self.beta.grad[[ci]] = self.beta.grad[[ci]] + sum_dy;
            self.gamma.grad[[ci]] = self.gamma.grad[[ci]] + sum_dy_xh;

            let g = self.gamma.value[[ci]];
            let istd = cache.inv_std[ci];
            let mean_dy = sum_dy / cf;
            let mean_dy_xh = sum_dy_xh / cf;
            let mut dxc = dx.slice_mut(s![.., ci, .., .., ..]);
            ndarray::Zip::from(&mut dxc)
                .and(&dyc)
                .and(&xh)
                .for_each(|dx, &d, &z| *dx = g * istd * (d - mean_dy - z * mean_dy_xh));
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng) -> Array5<f64> {
        Array5::from_shape_simple_fn((3, 2, 2, 3, 3), || rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn training_output_is_normalized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = sample(&mut rng);
        let mut bn = BatchNorm3d::<f64>::new(2);
        let y = bn.forward(&x, true);
        for ci in 0..2 {
            let yc = y.slice(s![.., ci, .., .., ..]);
            let mean = yc.mean().unwrap();
            let var = yc.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            // Output variance is var/(var + eps), i.e. unit up to eps.
            assert!((var - 1.0).abs() < 1e-4, "unit variance up to eps, got {var}");
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut bn = BatchNorm3d::<f64>::new(2);
        for _ in 0..50 {
            let x = sample(&mut rng);
            let _ = bn.forward(&x, true);
        }
        // A constant input in eval mode maps through the affine transform of
        // the running stats; with gamma=1, beta=0 the output is deterministic.
        let x = Array5::<f64>::zeros((1, 2, 2, 3, 3));
        let y1 = bn.forward(&x, false);
        let y2 = bn.forward(&x, false);
        assert_eq!(y1, y2);
        for ci in 0..2 {
            let want = -bn.running_mean[ci] / (bn.running_var[ci] + 1e-5).sqrt();
            assert!((y1[[0, ci, 0, 0, 0]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = sample(&mut rng);
        let coef = sample(&mut rng);
        let mut bn = BatchNorm3d::<f64>::new(2);
        bn.gamma.value.mapv_inplace(|_| rng.gen_range(0.5..1.5));
        bn.beta.value.mapv_inplace(|_| rng.gen_range(-0.5..0.5));

        let _ = bn.forward(&x, true);
        let dx = bn.backward(&coef);

        let probe = |bn: &mut BatchNorm3d<f64>, x: &Array5<f64>| {
            // Fresh running stats irrelevant: train-mode forward only.
            (&bn.forward(x, true) * &coef).sum()
        };
        let step = 1e-6;
        let mut worst = 0.0f64;
        for flat in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[flat] += step;
            xm.as_slice_mut().unwrap()[flat] -= step;
            let num = (probe(&mut bn, &xp) - probe(&mut bn, &xm)) / (2.0 * step);
            let ana = dx.as_slice().unwrap()[flat];
            let denom = ana.abs().max(num.abs()).max(1e-8);
            worst = worst.max((ana - num).abs() / denom);
        }
        assert!(worst < 1e-5, "input grad rel err {worst}");
    }
}

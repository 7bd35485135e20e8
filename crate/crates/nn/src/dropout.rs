//! Inverted dropout: kept activations are scaled by `1 / (1 - p)` during
//! training so evaluation is the identity.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub struct Dropout<F: Scalar> {
    p: f64,
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> Dropout<F> {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout { p, cache: None }
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    /// Masks draw from `rng` in row-major element order, so identical seeds
    /// produce identical masks.
    pub fn forward<D: ndarray::Dimension>(
        &mut self,
        x: &ndarray::Array<F, D>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> ndarray::Array<F, D> {
        if !train || self.p == 0.0 {
            self.cache = None;
            return x.clone();
        }
        let keep = F::from_f64(1.0 / (1.0 - self.p));
        let mask = ArrayD::<F>::from_shape_simple_fn(x.shape().to_vec(), || {
            if rng.gen_range(0.0..1.0) < self.p {
                F::zero()
            } else {
                keep
            }
        });
        let y = x * &mask
            .view()
            .into_dimensionality::<D>()
            .expect("mask shape matches input");
        self.cache = Some(mask);
        y
    }

    pub fn backward<D: ndarray::Dimension>(
        &mut self,
        dy: &ndarray::Array<F, D>,
    ) -> ndarray::Array<F, D> {
        match self.cache.take() {
            None => dy.clone(),
            Some(mask) => {
                dy * &mask
                    .view()
                    .into_dimensionality::<D>()
                    .expect("mask shape matches gradient")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn eval_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut drop = Dropout::<f64>::new(0.5);
        let x = Array2::from_elem((4, 4), 3.0);
        let y = drop.forward(&x, false, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn training_scales_survivors_and_masks_gradient_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut drop = Dropout::<f64>::new(0.5);
        let x = Array2::from_elem((8, 8), 1.0);
        let y = drop.forward(&x, true, &mut rng);
        let mut kept = 0;
        for &v in y.iter() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
            if v != 0.0 {
                kept += 1;
            }
        }
        assert!(kept > 0 && kept < 64, "mask should be non-trivial");
        let dy = Array2::from_elem((8, 8), 1.0);
        let dx = drop.backward(&dy);
        for (g, v) in dx.iter().zip(y.iter()) {
            assert_eq!(*g != 0.0, *v != 0.0, "gradient mask equals forward mask");
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Array2::from_elem((6, 6), 1.0);
        let mut d1 = Dropout::<f64>::new(0.2);
        let mut d2 = Dropout::<f64>::new(0.2);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(d1.forward(&x, true, &mut r1), d2.forward(&x, true, &mut r2));
    }
}

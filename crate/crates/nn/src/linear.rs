//! Fully connected layer `(N, in) -> (N, out)`.

use ndarray::{linalg::general_mat_mul, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::error::NnError;
use crate::init::fan_in_uniform;
use crate::param::{NamedParams, NamedParamsMut, Param};
use crate::scalar::Scalar;
use crate::Result;

/// Affine map with weight layout `(out, in)` and zero-initialized bias.
pub struct Linear<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    cache: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(fan_in_uniform::<F, _, _>(
                (out_features, in_features),
                in_features,
                rng,
            )),
            bias: Param::new(Array1::<F>::zeros(out_features)),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        vec![
            ("weight".to_string(), &self.weight),
            ("bias".to_string(), &self.bias),
        ]
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        vec![
            ("weight".to_string(), &mut self.weight),
            ("bias".to_string(), &mut self.bias),
        ]
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Result<Array2<F>> {
        let (n, d) = x.dim();
        if d != self.in_features() {
            return Err(NnError::shape("linear input", &[self.in_features()], &[d]));
        }
        let w = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_features(), d))
            .expect("weight is contiguous");
        let mut y = Array2::<F>::zeros((n, self.out_features()));
        general_mat_mul(F::one(), x, &w.t(), F::zero(), &mut y);
        for mut row in y.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.value.iter()) {
                *v = *v + *b;
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let x = self.cache.take().expect("linear backward without cached forward");
        let (n, d) = x.dim();
        let out = self.out_features();
        assert_eq!(dy.dim(), (n, out), "linear dy shape");

        let mut dw = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((out, d))
            .expect("weight grad is contiguous");
        general_mat_mul(F::one(), &dy.t(), &x, F::one(), &mut dw);
        for (bi, db) in self.bias.grad.iter_mut().enumerate() {
            let mut s = F::zero();
            for i in 0..n {
                s = s + dy[[i, bi]];
            }
            *db = *db + s;
        }

        let w = self
            .weight
            .value
            .view()
            .into_shape_with_order((out, d))
            .expect("weight is contiguous");
        let mut dx = Array2::<F>::zeros((n, d));
        general_mat_mul(F::one(), dy, &w, F::zero(), &mut dx);
        dx
    }
}

//! Token embedding table.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::NnError;
use crate::init::fan_in_uniform;
use crate::param::{NamedParams, NamedParamsMut, Param};
use crate::scalar::Scalar;
use crate::Result;

/// Lookup table `(vocab, dim)`; forward gathers rows, backward scatter-adds.
pub struct Embedding<F: Scalar> {
    pub table: Param<F>,
    cache: Option<Vec<usize>>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: Param::new(fan_in_uniform::<F, _, _>((vocab, dim), dim, rng)),
            cache: None,
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.value.shape()[1]
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        vec![("table".to_string(), &self.table)]
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        vec![("table".to_string(), &mut self.table)]
    }

    pub fn forward(&mut self, indices: &[usize], train: bool) -> Result<Array2<F>> {
        let (v, d) = (self.vocab(), self.dim());
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(NnError::shape("embedding index", &[v], &[bad]));
        }
        let mut out = Array2::<F>::zeros((indices.len(), d));
        for (row, &idx) in indices.iter().enumerate() {
            out.row_mut(row).assign(&self.table.value.index_axis(ndarray::Axis(0), idx));
        }
        if train {
            self.cache = Some(indices.to_vec());
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Array2<F>) {
        let indices = self.cache.take().expect("embedding backward without cached forward");
        assert_eq!(dy.dim().0, indices.len(), "embedding dy rows");
        for (row, &idx) in indices.iter().enumerate() {
            let mut g = self.table.grad.index_axis_mut(ndarray::Axis(0), idx);
            g += &dy.row(row);
        }
    }
}

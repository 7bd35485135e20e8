//! Trainable parameter storage: a value tensor paired with its gradient.

use ndarray::{ArrayD, Dimension};

use crate::scalar::Scalar;

/// One trainable tensor and the gradient accumulated for it.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    /// Wrap a value tensor; the gradient starts at zero with the same shape.
    pub fn new<D: Dimension>(value: ndarray::Array<F, D>) -> Self {
        let value = value.into_dyn();
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    /// Reset the accumulated gradient to zero.
    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// Number of scalar elements.
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Read-only named parameter listing, used for checkpoint save and counting.
pub type NamedParams<'a, F> = Vec<(String, &'a Param<F>)>;

/// Mutable named parameter listing, used by the optimizer and checkpoint load.
pub type NamedParamsMut<'a, F> = Vec<(String, &'a mut Param<F>)>;

/// Prefix every name in `params` with `prefix` followed by a dot.
pub fn with_prefix<T>(prefix: &str, params: Vec<(String, T)>) -> Vec<(String, T)> {
    params
        .into_iter()
        .map(|(name, p)| (format!("{prefix}.{name}"), p))
        .collect()
}

/// Total element count across a parameter listing.
pub fn total_count<F: Scalar>(params: &NamedParams<'_, F>) -> usize {
    params.iter().map(|(_, p)| p.numel()).sum()
}

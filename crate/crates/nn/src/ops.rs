//! Stateless activation helpers.

use ndarray::{ArrayBase, DataMut, Dimension};

use crate::scalar::Scalar;

/// `x <- max(x, 0)` element-wise.
pub fn relu_inplace<F: Scalar, S: DataMut<Elem = F>, D: Dimension>(x: &mut ArrayBase<S, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Back-propagate through ReLU given the *output* `y` (valid because
/// `y > 0 <=> x > 0` away from the kink, where the subgradient is zero).
pub fn relu_backward_inplace<F: Scalar, S, Sy, D>(dy: &mut ArrayBase<S, D>, y: &ArrayBase<Sy, D>)
where
    S: DataMut<Elem = F>,
    Sy: ndarray::Data<Elem = F>,
    D: Dimension,
{
    ndarray::Zip::from(dy).and(y).for_each(|d, &yv| {
        if yv <= F::zero() {
            *d = F::zero();
        }
    });
}

/// Numerically stable softmax over a 1-D slice, returned as a new vector.
pub fn softmax_1d<F: Scalar>(logits: &ndarray::ArrayView1<'_, F>) -> ndarray::Array1<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_zeroes_negatives_and_keeps_positives() {
        let mut x = array![-1.0f64, 0.0, 2.5];
        relu_inplace(&mut x);
        assert_eq!(x, array![0.0, 0.0, 2.5]);
    }

    #[test]
    fn relu_backward_masks_by_output() {
        let y = array![0.0f64, 3.0, 0.0];
        let mut dy = array![1.0f64, 1.0, 1.0];
        relu_backward_inplace(&mut dy, &y);
        assert_eq!(dy, array![0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let a = array![1.0f64, 2.0, 3.0];
        let b = array![101.0f64, 102.0, 103.0];
        let pa = softmax_1d(&a.view());
        let pb = softmax_1d(&b.view());
        assert!((pa.sum() - 1.0).abs() < 1e-12);
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

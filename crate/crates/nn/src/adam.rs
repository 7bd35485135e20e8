//! Adam optimizer with bias correction.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::param::NamedParamsMut;
use crate::scalar::Scalar;

/// Adam with `beta = (0.9, 0.999)`, `eps = 1e-8`. First/second moment
/// buffers are keyed by parameter name and created lazily.
pub struct Adam<F: Scalar> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    state: HashMap<String, Slot<F>>,
}

struct Slot<F: Scalar> {
    m: ArrayD<F>,
    v: ArrayD<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// Apply one update to every listed parameter, then zero its gradient.
    pub fn step(&mut self, params: NamedParamsMut<'_, F>) {
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let corr1 = F::from_f64(1.0 - self.beta1.powi(self.t));
        let corr2 = F::from_f64(1.0 - self.beta2.powi(self.t));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);

        for (name, p) in params {
            let slot = self.state.entry(name).or_insert_with(|| Slot {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
            });
            ndarray::Zip::from(&mut p.value)
                .and(&mut slot.m)
                .and(&mut slot.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / corr1;
                    let vhat = *v / corr2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
            p.zero_grad();
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Param;
    use ndarray::Array1;

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // With bias correction, step 1 is w -= lr * g / (|g| + eps) = lr * sign(g).
        for &g in &[0.001f64, 1.0, 250.0] {
            let mut p = Param::new(Array1::from_elem(1, 1.0f64));
            p.grad.fill(g);
            let mut opt = Adam::<f64>::new(0.1);
            opt.step(vec![("p".to_string(), &mut p)]);
            let moved = 1.0 - p.value[[0]];
            assert!((moved - 0.1).abs() < 1e-6, "grad {g}: moved {moved}");
        }
    }

    #[test]
    fn gradients_are_cleared_after_step() {
        let mut p = Param::new(Array1::from_elem(3, 0.0f64));
        p.grad.fill(2.0);
        let mut opt = Adam::<f64>::new(0.01);
        opt.step(vec![("p".to_string(), &mut p)]);
        assert!(p.grad.iter().all(|g| *g == 0.0));
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn matches_reference_two_step_trace() {
        // Hand-computed: w0=1, g=0.5 both steps, lr=0.1.
        // t=1: m=0.05, v=0.00025, mh=0.5, vh=0.25, w=1-0.1*0.5/(0.5+1e-8)≈0.9
        // t=2 (same grad): mh=0.5, vh=0.25 again -> w≈0.8
        let mut p = Param::new(Array1::from_elem(1, 1.0f64));
        let mut opt = Adam::<f64>::new(0.1);
        p.grad.fill(0.5);
        opt.step(vec![("p".to_string(), &mut p)]);
        assert!((p.value[[0]] - 0.9).abs() < 1e-7);
        p.grad.fill(0.5);
        opt.step(vec![("p".to_string(), &mut p)]);
        assert!((p.value[[0]] - 0.8).abs() < 1e-7);
    }
}

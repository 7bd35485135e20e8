//! Gated recurrent unit cell with the gate layout `r, z, n`:
//!
//! ```text
//! r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh   (W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```
//!
//! The cell processes one sample per step; sequence handling (and truncation
//! policy) belongs to the caller. Step caches stack LIFO so backward walks
//! the sequence in reverse.

use ndarray::{linalg::general_mat_mul, s, Array1, Axis};
use rand_chacha::ChaCha8Rng;

use crate::init::fan_in_uniform;
use crate::param::{NamedParams, NamedParamsMut, Param};
use crate::scalar::Scalar;

pub struct GruCell<F: Scalar> {
    pub w_ih: Param<F>,
    pub w_hh: Param<F>,
    pub b_ih: Param<F>,
    pub b_hh: Param<F>,
    input: usize,
    hidden: usize,
    caches: Vec<GruStep<F>>,
}

struct GruStep<F: Scalar> {
    x: Array1<F>,
    h_prev: Array1<F>,
    r: Array1<F>,
    z: Array1<F>,
    n: Array1<F>,
    gh_n: Array1<F>,
}

impl<F: Scalar> GruCell<F> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            w_ih: Param::new(fan_in_uniform::<F, _, _>((3 * hidden, input), input, rng)),
            w_hh: Param::new(fan_in_uniform::<F, _, _>((3 * hidden, hidden), hidden, rng)),
            b_ih: Param::new(Array1::<F>::zeros(3 * hidden)),
            b_hh: Param::new(Array1::<F>::zeros(3 * hidden)),
            input,
            hidden,
            caches: Vec::new(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        vec![
            ("w_ih".to_string(), &self.w_ih),
            ("w_hh".to_string(), &self.w_hh),
            ("b_ih".to_string(), &self.b_ih),
            ("b_hh".to_string(), &self.b_hh),
        ]
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        vec![
            ("w_ih".to_string(), &mut self.w_ih),
            ("w_hh".to_string(), &mut self.w_hh),
            ("b_ih".to_string(), &mut self.b_ih),
            ("b_hh".to_string(), &mut self.b_hh),
        ]
    }

    /// Drop any cached steps (call before reusing the cell on a new sequence).
    pub fn clear_cache(&mut self) {
        self.caches.clear();
    }

    pub fn cached_steps(&self) -> usize {
        self.caches.len()
    }

    /// One recurrence step. With `train` the step is cached for
    /// [`GruCell::backward_step`].
    pub fn step(&mut self, x: &Array1<F>, h: &Array1<F>, train: bool) -> Array1<F> {
        assert_eq!(x.len(), self.input, "gru input size");
        assert_eq!(h.len(), self.hidden, "gru hidden size");
        let hd = self.hidden;

        let w_ih = self.w_ih.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut gi = w_ih.dot(x);
        gi += &self.b_ih.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut gh = w_hh.dot(h);
        gh += &self.b_hh.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let sigmoid = |v: F| F::one() / (F::one() + (-v).exp());
        let mut r = Array1::<F>::zeros(hd);
        let mut z = Array1::<F>::zeros(hd);
        let mut n = Array1::<F>::zeros(hd);
        let gh_n = gh.slice(s![2 * hd..3 * hd]).to_owned();
        for i in 0..hd {
            r[i] = sigmoid(gi[i] + gh[i]);
            z[i] = sigmoid(gi[hd + i] + gh[hd + i]);
            n[i] = (gi[2 * hd + i] + r[i] * gh_n[i]).tanh();
        }
        let mut h_new = Array1::<F>::zeros(hd);
        for i in 0..hd {
            h_new[i] = (F::one() - z[i]) * n[i] + z[i] * h[i];
        }

        if train {
            self.caches.push(GruStep {
                x: x.clone(),
                h_prev: h.clone(),
                r,
                z,
                n,
                gh_n,
            });
        }
        h_new
    }

    /// Backward through the most recent cached step. Returns `(dx, dh_prev)`.
    pub fn backward_step(&mut self, dh_next: &Array1<F>) -> (Array1<F>, Array1<F>) {
        let stp = self.caches.pop().expect("gru backward without cached step");
        let hd = self.hidden;
        assert_eq!(dh_next.len(), hd, "gru dh size");

        let mut dgi = Array1::<F>::zeros(3 * hd);
        let mut dgh = Array1::<F>::zeros(3 * hd);
        let mut dh_prev = Array1::<F>::zeros(hd);
        for i in 0..hd {
            let (r, z, n) = (stp.r[i], stp.z[i], stp.n[i]);
            let dh = dh_next[i];
            let dn = dh * (F::one() - z);
            let dz = dh * (stp.h_prev[i] - n);
            dh_prev[i] = dh * z;

            let dpre_n = dn * (F::one() - n * n);
            let dr = dpre_n * stp.gh_n[i];
            let dpre_r = dr * r * (F::one() - r);
            let dpre_z = dz * z * (F::one() - z);

            dgi[i] = dpre_r;
            dgi[hd + i] = dpre_z;
            dgi[2 * hd + i] = dpre_n;
            dgh[i] = dpre_r;
            dgh[hd + i] = dpre_z;
            dgh[2 * hd + i] = dpre_n * r;
        }

        {
            let mut dwih = self
                .w_ih
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let dgi2 = dgi.view().insert_axis(Axis(1));
            let x2 = stp.x.view().insert_axis(Axis(0));
            general_mat_mul(F::one(), &dgi2, &x2, F::one(), &mut dwih);
        }
        {
            let mut dwhh = self
                .w_hh
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let dgh2 = dgh.view().insert_axis(Axis(1));
            let h2 = stp.h_prev.view().insert_axis(Axis(0));
            general_mat_mul(F::one(), &dgh2, &h2, F::one(), &mut dwhh);
        }
        {
            let mut bg = self.b_ih.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &dgi;
            let mut bg = self.b_hh.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &dgh;
        }

        let w_ih = self.w_ih.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let dx = w_ih.t().dot(&dgi);
        dh_prev += &w_hh.t().dot(&dgh);
        (dx, dh_prev)
    }
}

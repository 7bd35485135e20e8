//! 3-D convolution, stride 1, with "same" padding derived from the kernel
//! and dilation.
//!
//! The forward pass lowers each sample to column form (im2col) in chunks
//! along the output time axis, bounding the scratch buffer, and multiplies
//! with the flattened weight matrix. The backward pass rebuilds the same
//! columns from the cached padded input, so nothing quadratic in activation
//! size is retained between passes. Samples are processed in index order and
//! gradients accumulate in place, which keeps results independent of timing.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, Array5, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::NnError;
use crate::init::fan_in_uniform;
use crate::param::{NamedParams, NamedParamsMut, Param};
use crate::scalar::Scalar;
use crate::Result;

/// Upper bound on the im2col scratch buffer, in bytes.
const COL_CHUNK_BYTES: usize = 8 << 20;

/// 3-D convolution layer. Weight layout `(C_out, C_in, kt, kh, kw)`.
pub struct Conv3d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    dilation: [usize; 3],
    padding: [usize; 3],
    cache: Option<Array5<F>>,
}

impl<F: Scalar> Conv3d<F> {
    /// New layer with odd kernel sides; padding is chosen so stride-1 output
    /// matches the input extent (`p = d * (k - 1) / 2` per axis).
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        dilation: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel.iter().all(|k| k % 2 == 1), "kernel sides must be odd");
        assert!(dilation.iter().all(|d| *d >= 1), "dilation must be >= 1");
        let padding = [
            dilation[0] * (kernel[0] - 1) / 2,
            dilation[1] * (kernel[1] - 1) / 2,
            dilation[2] * (kernel[2] - 1) / 2,
        ];
        let fan_in = in_channels * kernel[0] * kernel[1] * kernel[2];
        let weight = Param::new(fan_in_uniform::<F, _, _>(
            (out_channels, in_channels, kernel[0], kernel[1], kernel[2]),
            fan_in,
            rng,
        ));
        let bias = Param::new(Array1::<F>::zeros(out_channels));
        Conv3d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
            padding,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Output spatial extent for a given input extent (errors if the padded
    /// input cannot contain one kernel span).
    pub fn out_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let span = (self.kernel[axis] - 1) * self.dilation[axis] + 1;
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < span {
                return Err(NnError::shape(
                    "conv3d input extent",
                    &[span],
                    &[padded],
                ));
            }
            out[axis] = padded - span + 1;
        }
        Ok(out)
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

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let k = self.in_channels * self.kernel.iter().product::<usize>();
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("weight tensor is contiguous")
    }

    /// Forward pass over a batch `(N, C_in, T, H, W)`. With `train` the
    /// padded input is cached for [`Conv3d::backward`].
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (n, cin, t, h, w) = x.dim();
        if cin != self.in_channels {
            return Err(NnError::shape(
                "conv3d input channels",
                &[self.in_channels],
                &[cin],
            ));
        }
        let [to, ho, wo] = self.out_extent([t, h, w])?;
        let [pt, ph, pw] = self.padding;
        let (tp, hp, wp) = (t + 2 * pt, h + 2 * ph, w + 2 * pw);

        let mut xp = Array5::<F>::zeros((n, cin, tp, hp, wp));
        xp.slice_mut(s![.., .., pt..pt + t, ph..ph + h, pw..pw + w])
            .assign(x);

        let k = cin * self.kernel.iter().product::<usize>();
        let chunk_t = chunk_len(k, ho * wo, to, F::DTYPE.size());
        let mut col = Array2::<F>::zeros((k, chunk_t * ho * wo));
        let mut ymat = Array2::<F>::zeros((self.out_channels, chunk_t * ho * wo));
        let mut y = Array5::<F>::zeros((n, self.out_channels, to, ho, wo));
        let w2 = {
            let k2 = k;
            self.weight
                .value
                .view()
                .into_shape_with_order((self.out_channels, k2))
                .expect("weight tensor is contiguous")
        };

        for i in 0..n {
            let xpi = xp.index_axis(Axis(0), i);
            let xs = xpi.to_slice().expect("padded input is contiguous");
            for t0 in (0..to).step_by(chunk_t) {
                let tc = chunk_t.min(to - t0);
                let l = tc * ho * wo;
                im2col(
                    self.in_channels,
                    self.kernel,
                    self.dilation,
                    xs,
                    (tp, hp, wp),
                    t0,
                    tc,
                    (ho, wo),
                    &mut col,
                );
                {
                    let cols = col.slice(s![.., ..l]);
                    let mut ys = ymat.slice_mut(s![.., ..l]);
                    general_mat_mul(F::one(), &w2, &cols, F::zero(), &mut ys);
                }
                for (co, mut row) in ymat.slice_mut(s![.., ..l]).outer_iter_mut().enumerate() {
                    let b = self.bias.value[[co]];
                    if b != F::zero() {
                        row.mapv_inplace(|v| v + b);
                    }
                    let src = row
                        .view()
                        .into_shape_with_order((tc, ho, wo))
                        .expect("row is contiguous");
                    y.slice_mut(s![i, co, t0..t0 + tc, .., ..]).assign(&src);
                }
            }
        }

        self.cache = if train { Some(xp) } else { None };
        Ok(y)
    }

    /// Backward pass; accumulates weight/bias gradients and returns the input
    /// gradient unless `need_dx` is false (first layer of a network).
    pub fn backward(&mut self, dy: &Array5<F>, need_dx: bool) -> Option<Array5<F>> {
        let xp = self.cache.take().expect("conv3d backward without cached forward");
        let (n, cin, tp, hp, wp) = xp.dim();
        let [pt, ph, pw] = self.padding;
        let (t, h, w) = (tp - 2 * pt, hp - 2 * ph, wp - 2 * pw);
        let [to, ho, wo] = self.out_extent([t, h, w]).expect("cached shape is valid");
        assert_eq!(dy.dim(), (n, self.out_channels, to, ho, wo), "conv3d dy shape");

        for (co, db) in self.bias.grad.iter_mut().enumerate() {
            let s = dy.slice(s![.., co, .., .., ..]).sum();
            *db = *db + s;
        }

        let k = cin * self.kernel.iter().product::<usize>();
        let chunk_t = chunk_len(k, ho * wo, to, F::DTYPE.size());
        let mut col = Array2::<F>::zeros((k, chunk_t * ho * wo));
        let mut dcol = Array2::<F>::zeros((k, chunk_t * ho * wo));
        let mut dxp = need_dx.then(|| Array5::<F>::zeros((n, cin, tp, hp, wp)));
        let w2 = self.weight_matrix().to_owned();
        let mut dw2 = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_channels, k))
            .expect("weight grad is contiguous");

        for i in 0..n {
            let xpi = xp.index_axis(Axis(0), i);
            let xs = xpi.to_slice().expect("padded input is contiguous");
            for t0 in (0..to).step_by(chunk_t) {
                let tc = chunk_t.min(to - t0);
                let l = tc * ho * wo;
                im2col(
                    self.in_channels,
                    self.kernel,
                    self.dilation,
                    xs,
                    (tp, hp, wp),
                    t0,
                    tc,
                    (ho, wo),
                    &mut col,
                );
                let dymat = dy
                    .slice(s![i, .., t0..t0 + tc, .., ..])
                    .to_owned()
                    .into_shape_with_order((self.out_channels, l))
                    .expect("owned chunk is contiguous");
                {
                    let cols = col.slice(s![.., ..l]);
                    general_mat_mul(F::one(), &dymat, &cols.t(), F::one(), &mut dw2);
                }
                if let Some(dxp) = dxp.as_mut() {
                    let mut dcols = dcol.slice_mut(s![.., ..l]);
                    general_mat_mul(F::one(), &w2.t(), &dymat, F::zero(), &mut dcols);
                    let mut dxpi = dxp.index_axis_mut(Axis(0), i);
                    let ds = dxpi.as_slice_mut().expect("padded grad is contiguous");
                    col2im(
                        self.in_channels,
                        self.kernel,
                        self.dilation,
                        &dcol,
                        (tp, hp, wp),
                        t0,
                        tc,
                        (ho, wo),
                        ds,
                    );
                }
            }
        }

        dxp.map(|dxp| {
            dxp.slice(s![.., .., pt..pt + t, ph..ph + h, pw..pw + w])
                .to_owned()
        })
    }

}

/// Lower `tc` output time steps starting at `t0` into `col` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    in_channels: usize,
    kernel: [usize; 3],
    dilation: [usize; 3],
    xs: &[F],
    (tp, hp, wp): (usize, usize, usize),
    t0: usize,
    tc: usize,
    (ho, wo): (usize, usize),
    col: &mut Array2<F>,
) {
    let [kt, kh, kw] = kernel;
    let [dt, dh, dw] = dilation;
    let lmax = col.dim().1;
    let cs = col.as_slice_mut().expect("col buffer is contiguous");
    let (xst, xsh) = (hp * wp, wp);
    let mut row = 0usize;
    for ci in 0..in_channels {
        let cbase = ci * tp * hp * wp;
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let mut dst = row * lmax;
                    for tt in 0..tc {
                        let tsrc = cbase + (t0 + tt + a * dt) * xst;
                        for hh in 0..ho {
                            let src = tsrc + (hh + b * dh) * xsh + c * dw;
                            cs[dst..dst + wo].copy_from_slice(&xs[src..src + wo]);
                            dst += wo;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add `dcol` columns back onto the padded input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    in_channels: usize,
    kernel: [usize; 3],
    dilation: [usize; 3],
    dcol: &Array2<F>,
    (tp, hp, wp): (usize, usize, usize),
    t0: usize,
    tc: usize,
    (ho, wo): (usize, usize),
    ds: &mut [F],
) {
    let [kt, kh, kw] = kernel;
    let [dt, dh, dw] = dilation;
    let lmax = dcol.dim().1;
    let cs = dcol.as_slice().expect("col buffer is contiguous");
    let (xst, xsh) = (hp * wp, wp);
    let mut row = 0usize;
    for ci in 0..in_channels {
        let cbase = ci * tp * hp * wp;
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let mut src = row * lmax;
                    for tt in 0..tc {
                        let tdst = cbase + (t0 + tt + a * dt) * xst;
                        for hh in 0..ho {
                            let dst = tdst + (hh + b * dh) * xsh + c * dw;
                            for ww in 0..wo {
                                ds[dst + ww] = ds[dst + ww] + cs[src + ww];
                            }
                            src += wo;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Number of output time steps whose columns fit in the scratch budget.
fn chunk_len(k: usize, plane: usize, to: usize, elem_size: usize) -> usize {
    let per_t = k * plane * elem_size;
    (COL_CHUNK_BYTES / per_t.max(1)).clamp(1, to.max(1))
}

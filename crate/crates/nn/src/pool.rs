//! Max pooling (non-overlapping, window clipped at padded borders) and
//! global average pooling.

use ndarray::{s, Array2, Array5};

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::Result;

/// Max pooling with stride equal to the kernel. Padding enlarges the index
/// range but the max is taken over in-bounds elements only, so padded cells
/// never win (equivalent to `-inf` padding).
pub struct MaxPool3d {
    kernel: [usize; 3],
    padding: [usize; 3],
    cache: Option<PoolCache>,
}

struct PoolCache {
    in_dim: (usize, usize, usize, usize, usize),
    argmax: Vec<u32>,
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], padding: [usize; 3]) -> Self {
        assert!(kernel.iter().all(|k| *k >= 1));
        assert!(
            padding.iter().zip(kernel.iter()).all(|(p, k)| p < k),
            "padding must leave every window at least one valid element"
        );
        MaxPool3d {
            kernel,
            padding,
            cache: None,
        }
    }

    /// Output extent per axis: `floor((in + 2p - k) / k) + 1`.
    pub fn out_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < self.kernel[axis] {
                return Err(NnError::shape(
                    "maxpool3d input extent",
                    &[self.kernel[axis]],
                    &[padded],
                ));
            }
            out[axis] = (padded - self.kernel[axis]) / self.kernel[axis] + 1;
        }
        Ok(out)
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (n, c, t, h, w) = x.dim();
        let [to, ho, wo] = self.out_extent([t, h, w])?;
        let [kt, kh, kw] = self.kernel;
        let [pt, ph, pw] = self.padding;

        let xs = x.as_slice().expect("input is contiguous");
        let mut y = Array5::<F>::zeros((n, c, to, ho, wo));
        let ys = y.as_slice_mut().expect("output is contiguous");
        let mut argmax = train.then(|| vec![0u32; n * c * to * ho * wo]);

        let (st, sh) = (h * w, w);
        let mut out_idx = 0usize;
        for i in 0..n {
            for ci in 0..c {
                let base = (i * c + ci) * t * h * w;
                for tt in 0..to {
                    let (t1, t2) = clip(tt, kt, pt, t);
                    for hh in 0..ho {
                        let (h1, h2) = clip(hh, kh, ph, h);
                        for ww in 0..wo {
                            let (w1, w2) = clip(ww, kw, pw, w);
                            let mut best = F::neg_infinity();
                            let mut best_at = 0usize;
                            for ti in t1..t2 {
                                for hi in h1..h2 {
                                    let row = base + ti * st + hi * sh;
                                    for wi in w1..w2 {
                                        let v = xs[row + wi];
                                        if v > best {
                                            best = v;
                                            best_at = ti * st + hi * sh + wi;
                                        }
                                    }
                                }
                            }
                            ys[out_idx] = best;
                            if let Some(am) = argmax.as_mut() {
                                am[out_idx] = best_at as u32;
                            }
                            out_idx += 1;
                        }
                    }
                }
            }
        }

        self.cache = argmax.map(|argmax| PoolCache {
            in_dim: (n, c, t, h, w),
            argmax,
        });
        Ok(y)
    }

    /// Route each output gradient to the element that produced the max.
    pub fn backward<F: Scalar>(&mut self, dy: &Array5<F>) -> Array5<F> {
        let cache = self.cache.take().expect("maxpool3d backward without cached forward");
        let (n, c, t, h, w) = cache.in_dim;
        assert_eq!(dy.len(), cache.argmax.len(), "maxpool3d dy size");
        let mut dx = Array5::<F>::zeros((n, c, t, h, w));
        let ds = dx.as_slice_mut().expect("grad is contiguous");
        let dys = dy.as_slice().expect("dy is contiguous");
        let plane = t * h * w;
        let per_image = dy.len() / (n * c);
        for (out_idx, &src) in cache.argmax.iter().enumerate() {
            let img = out_idx / per_image;
            let dst = img * plane + src as usize;
            ds[dst] = ds[dst] + dys[out_idx];
        }
        dx
    }
}

/// Clipped window bounds along one axis.
fn clip(out_pos: usize, k: usize, pad: usize, limit: usize) -> (usize, usize) {
    let start = out_pos * k;
    let lo = start.saturating_sub(pad);
    let hi = (start + k).saturating_sub(pad).min(limit);
    (lo, hi)
}

/// Mean over `(T, H, W)` per channel: `(N, C, T, H, W) -> (N, C)`.
pub fn global_avg_pool<F: Scalar>(x: &Array5<F>) -> Array2<F> {
    let (n, c, t, h, w) = x.dim();
    let count = F::from_f64((t * h * w) as f64);
    let mut out = Array2::<F>::zeros((n, c));
    for i in 0..n {
        for ci in 0..c {
            out[[i, ci]] = x.slice(s![i, ci, .., .., ..]).sum() / count;
        }
    }
    out
}

/// Backward of [`global_avg_pool`]: spread each channel gradient uniformly.
pub fn global_avg_pool_backward<F: Scalar>(
    dy: &Array2<F>,
    dim: (usize, usize, usize, usize, usize),
) -> Array5<F> {
    let (n, c, t, h, w) = dim;
    let count = F::from_f64((t * h * w) as f64);
    let mut dx = Array5::<F>::zeros(dim);
    for i in 0..n {
        for ci in 0..c {
            let g = dy[[i, ci]] / count;
            dx.slice_mut(s![i, ci, .., .., ..]).fill(g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plain_pooling_halves_extent_and_picks_maxima() {
        let mut x = Array5::<f64>::zeros((1, 1, 2, 2, 2));
        for (idx, v) in x.iter_mut().enumerate() {
            *v = idx as f64;
        }
        let mut pool = MaxPool3d::new([2, 2, 2], [0, 0, 0]);
        let y = pool.forward(&x, true).unwrap();
        assert_eq!(y.dim(), (1, 1, 1, 1, 1));
        assert_eq!(y[[0, 0, 0, 0, 0]], 7.0);
        let dy = Array5::from_elem((1, 1, 1, 1, 1), 2.5);
        let dx = pool.backward(&dy);
        assert_eq!(dx[[0, 0, 1, 1, 1]], 2.5);
        assert_eq!(dx.sum(), 2.5);
    }

    #[test]
    fn padded_windows_clip_to_valid_elements() {
        // 7 wide, kernel 2, padding 1 -> 4 outputs covering {0}, {1,2}, {3,4}, {5,6}.
        let mut x = Array5::<f64>::zeros((1, 1, 1, 1, 7));
        for ww in 0..7 {
            x[[0, 0, 0, 0, ww]] = -((ww as f64) + 1.0);
        }
        let mut pool = MaxPool3d::new([1, 1, 2], [0, 0, 1]);
        let y = pool.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (1, 1, 1, 1, 4));
        assert_eq!(y[[0, 0, 0, 0, 0]], -1.0, "clipped first window");
        assert_eq!(y[[0, 0, 0, 0, 1]], -2.0);
        assert_eq!(y[[0, 0, 0, 0, 2]], -4.0);
        assert_eq!(y[[0, 0, 0, 0, 3]], -6.0);
    }

    #[test]
    fn padded_pool_shape_matches_hand_count() {
        // (2, 7, 7) with kernel (2, 2, 2) and padding (0, 1, 1) -> (1, 4, 4).
        let x = Array5::<f64>::zeros((2, 3, 2, 7, 7));
        let mut pool = MaxPool3d::new([2, 2, 2], [0, 1, 1]);
        let y = pool.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (2, 3, 1, 4, 4));
    }

    #[test]
    fn backward_routes_all_mass_to_argmax_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array5::from_shape_simple_fn((2, 2, 4, 6, 6), || rng.gen_range(-1.0f64..1.0));
        let mut pool = MaxPool3d::new([2, 2, 2], [0, 0, 0]);
        let y = pool.forward(&x, true).unwrap();
        let dy = Array5::from_shape_simple_fn(y.dim(), || rng.gen_range(-1.0f64..1.0));
        let dx = pool.backward(&dy);
        assert!((dx.sum() - dy.sum()).abs() < 1e-12, "mass is conserved");
        // Non-overlapping windows: every nonzero dx cell equals some dy cell.
        let nonzero = dx.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, dy.len());
    }

    #[test]
    fn global_avg_pool_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array5::from_shape_simple_fn((2, 3, 2, 2, 2), || rng.gen_range(-1.0f64..1.0));
        let y = global_avg_pool(&x);
        assert_eq!(y.dim(), (2, 3));
        let manual = x.slice(s![0, 1, .., .., ..]).mean().unwrap();
        assert!((y[[0, 1]] - manual).abs() < 1e-12);
        let dy = Array2::from_elem((2, 3), 8.0f64);
        let dx = global_avg_pool_backward(&dy, x.dim());
        assert!((dx[[0, 0, 0, 0, 0]] - 1.0f64).abs() < 1e-12);
    }
}

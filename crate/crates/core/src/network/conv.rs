//! 3x3 convolution with reflect padding, lowered to matrix products.
//!
//! Feature maps are `(channels, height * width)` matrices in row-major pixel
//! order. Kernels are `(out_channels, in_channels * 9)` with column index
//! `c * 9 + ky * 3 + kx`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};

use super::Real;

/// Reflect (edge excluded) index into `[0, n)`; valid for offsets of one.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// Unfolds `x` into the `(c * 9, h * w)` patch matrix.
pub fn im2col<T: Real>(x: &Array2<T>, h: usize, w: usize) -> Array2<T> {
    let c = x.nrows();
    let src = x.as_slice().expect("feature maps are contiguous");
    let mut cols = Array2::<T>::zeros((c * 9, h * w));
    let dst = cols.as_slice_mut().expect("fresh array is contiguous");
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut dst[(ci * 9 + ky * 3 + kx) * h * w..(ci * 9 + ky * 3 + kx + 1) * h * w];
                for i in 0..h {
                    let si = reflect(i as isize + ky as isize - 1, h);
                    let s = &plane[si * w..(si + 1) * w];
                    let d = &mut row[i * w..(i + 1) * w];
                    match kx {
                        0 => {
                            d[0] = s[1];
                            d[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => d.copy_from_slice(s),
                        _ => {
                            d[..w - 1].copy_from_slice(&s[1..]);
                            d[w - 1] = s[w - 2];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch-matrix gradients back onto pixels.
pub fn col2im<T: Real>(cols: &Array2<T>, c: usize, h: usize, w: usize) -> Array2<T> {
    let src = cols.as_slice().expect("patch matrix is contiguous");
    let mut x = Array2::<T>::zeros((c, h * w));
    let dst = x.as_slice_mut().expect("fresh array is contiguous");
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &src[(ci * 9 + ky * 3 + kx) * h * w..(ci * 9 + ky * 3 + kx + 1) * h * w];
                for i in 0..h {
                    let si = reflect(i as isize + ky as isize - 1, h);
                    let g = &row[i * w..(i + 1) * w];
                    let d = &mut plane[si * w..(si + 1) * w];
                    match kx {
                        0 => {
                            d[1] = d[1] + g[0];
                            for (dv, gv) in d[..w - 1].iter_mut().zip(&g[1..]) {
                                *dv = *dv + *gv;
                            }
                        }
                        1 => {
                            for (dv, gv) in d.iter_mut().zip(g) {
                                *dv = *dv + *gv;
                            }
                        }
                        _ => {
                            for (dv, gv) in d[1..].iter_mut().zip(&g[..w - 1]) {
                                *dv = *dv + *gv;
                            }
                            d[w - 2] = d[w - 2] + g[w - 1];
                        }
                    }
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `(out_channels, in_channels * 9)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weight: Array2::zeros((cout, cin * 9)),
            bias: Array1::zeros(cout),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Output for an already unfolded input.
    pub fn apply_cols(&self, cols: &Array2<T>) -> Array2<T> {
        let mut out = self.weight.dot(cols);
        for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            if b != T::zero() {
                row.mapv_inplace(|v| v + b);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and, when asked, returns
    /// the gradient with respect to the input feature map.
    pub fn backward(
        &self,
        cols: &Array2<T>,
        d_out: &Array2<T>,
        grad: &mut ConvParams<T>,
        h: usize,
        w: usize,
        want_input_grad: bool,
    ) -> Option<Array2<T>> {
        general_mat_mul(T::one(), d_out, &cols.t(), T::one(), &mut grad.weight);
        grad.bias += &d_out.sum_axis(Axis(1));
        if want_input_grad {
            let d_cols = self.weight.t().dot(d_out);
            Some(col2im(&d_cols, self.in_channels(), h, w))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 3x3 convolution with reflect padding.
    fn direct_conv(x: &Array3<f64>, p: &ConvParams<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let cout = p.out_channels();
        let mut out = Array3::zeros((cout, h, w));
        for o in 0..cout {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = p.bias[o];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let si = reflect(i as isize + ky as isize - 1, h);
                                let sj = reflect(j as isize + kx as isize - 1, w);
                                acc += p.weight[[o, ci * 9 + ky * 3 + kx]] * x[[ci, si, sj]];
                            }
                        }
                    }
                    out[[o, i, j]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(2, 4), 2);
    }

    #[test]
    fn lowered_conv_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, h, w, cout) = (3, 5, 7, 4);
        let x = Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0));
        let p = ConvParams {
            weight: Array2::from_shape_fn((cout, c * 9), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(cout, |_| rng.random_range(-1.0..1.0)),
        };
        let flat = x.clone().into_shape_with_order((c, h * w)).unwrap();
        let got = p.apply_cols(&im2col(&flat, h, w)).into_shape_with_order((cout, h, w)).unwrap();
        let expect = direct_conv(&x, &p);
        let err = (&got - &expect).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, h, w) = (2, 4, 6);
        let x = Array2::from_shape_fn((c, h * w), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((c * 9, h * w), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (&im2col(&x, h, w) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, c, h, w)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

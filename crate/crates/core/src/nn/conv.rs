//! 2-D convolution and transposed convolution via im2col + matmul.

use ndarray::{Array2, Array3, Array4, Axis};

use super::{he_std, Param};

/// Unfold `x` [B,C,H,W] into patch columns [B, C·k·k, Ho·Wo] for a k×k
/// kernel with the given stride and zero padding.
pub fn im2col(x: &Array4<f64>, k: usize, stride: usize, pad: usize) -> Array3<f64> {
    let (bsz, c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut cols = Array3::zeros((bsz, c * k * k, ho * wo));
    for b in 0..bsz {
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[b, row, oy * wo + ox]] = x[[b, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a [B,C,H,W] canvas.
fn col2im(
    cols: &Array3<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let bsz = cols.dim().0;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    debug_assert_eq!(cols.dim().1, c * k * k);
    debug_assert_eq!(cols.dim().2, ho * wo);
    let mut x = Array4::zeros((bsz, c, h, w));
    for b in 0..bsz {
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x[[b, ci, iy as usize, ix as usize]] += cols[[b, row, oy * wo + ox]];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Strided 2-D convolution. Weight layout [C_out, C_in, k, k].
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Array3<f64>,
    in_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let w = Param::randn(
            &[c_out, c_in, kernel, kernel],
            he_std(c_in * kernel * kernel),
            rng,
        );
        let b = bias.then(|| Param::zeros(&[c_out]));
        Conv2d {
            w,
            b,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn c_out(&self) -> usize {
        self.w.value.shape()[0]
    }

    fn w_mat(&self) -> ndarray::ArrayView2<'_, f64> {
        let co = self.c_out();
        let rest = self.w.value.len() / co;
        self.w
            .value
            .view()
            .into_shape_with_order((co, rest))
            .expect("weights are contiguous")
    }

    /// Inference forward. `with_bias = false` applies only the linear map,
    /// which is what the critic's penalty chain needs.
    pub fn forward(&self, x: &Array4<f64>, with_bias: bool) -> Array4<f64> {
        self.forward_t(x, with_bias).0
    }

    pub fn forward_t(&self, x: &Array4<f64>, with_bias: bool) -> (Array4<f64>, ConvCache) {
        let (bsz, _c, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let cols = im2col(x, self.kernel, self.stride, self.pad);
        let wm = self.w_mat();
        let mut y = Array4::zeros((bsz, self.c_out(), ho, wo));
        for b in 0..bsz {
            let yb = wm.dot(&cols.index_axis(Axis(0), b));
            y.index_axis_mut(Axis(0), b)
                .into_shape_with_order((self.c_out(), ho * wo))
                .unwrap()
                .assign(&yb);
        }
        if with_bias {
            if let Some(bias) = &self.b {
                for co in 0..self.c_out() {
                    let bv = bias.value[[co]];
                    y.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bv);
                }
            }
        }
        (y, ConvCache { cols, in_hw: (h, w) })
    }

    /// Accumulates weight (and optionally bias) gradients, returns dL/dx.
    pub fn backward(
        &mut self,
        dy: &Array4<f64>,
        cache: &ConvCache,
        with_bias: bool,
    ) -> Array4<f64> {
        let (bsz, co, ho, wo) = dy.dim();
        let l = ho * wo;
        let cikk = cache.cols.dim().1;
        let mut dw = Array2::zeros((co, cikk));
        let mut dcols = Array3::zeros((bsz, cikk, l));
        let wm = self.w_mat().to_owned();
        for b in 0..bsz {
            let dyb = dy
                .index_axis(Axis(0), b)
                .into_shape_with_order((co, l))
                .unwrap();
            dw = dw + dyb.dot(&cache.cols.index_axis(Axis(0), b).t());
            dcols
                .index_axis_mut(Axis(0), b)
                .assign(&wm.t().dot(&dyb));
        }
        self.w.grad += &dw
            .into_shape_with_order(self.w.value.raw_dim())
            .unwrap();
        if with_bias {
            if let Some(bias) = &mut self.b {
                for c in 0..co {
                    bias.grad[[c]] += dy.index_axis(Axis(1), c).sum();
                }
            }
        }
        let c_in = cikk / (self.kernel * self.kernel);
        col2im(
            &dcols,
            c_in,
            cache.in_hw.0,
            cache.in_hw.1,
            self.kernel,
            self.stride,
            self.pad,
        )
    }

    /// Gradient w.r.t. the input only — touches no parameter gradients.
    pub fn input_grad(&self, dy: &Array4<f64>, in_hw: (usize, usize)) -> Array4<f64> {
        let (bsz, co, ho, wo) = dy.dim();
        let l = ho * wo;
        let wm = self.w_mat();
        let cikk = wm.dim().1;
        let mut dcols = Array3::zeros((bsz, cikk, l));
        for b in 0..bsz {
            let dyb = dy
                .index_axis(Axis(0), b)
                .into_shape_with_order((co, l))
                .unwrap();
            dcols.index_axis_mut(Axis(0), b).assign(&wm.t().dot(&dyb));
        }
        let c_in = cikk / (self.kernel * self.kernel);
        col2im(
            &dcols,
            c_in,
            in_hw.0,
            in_hw.1,
            self.kernel,
            self.stride,
            self.pad,
        )
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.w];
        if let Some(b) = &mut self.b {
            ps.push(b);
        }
        ps
    }
}

/// Strided 2-D transposed convolution (fractionally strided upsampling).
/// Weight layout [C_in, C_out, k, k]; output H = (H−1)·s − 2p + k.
#[derive(Debug, Clone)]
pub struct ConvT2d {
    pub w: Param,
    pub b: Option<Param>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvTCache {
    x: Array4<f64>,
}

impl ConvT2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let w = Param::randn(
            &[c_in, c_out, kernel, kernel],
            he_std(c_in * kernel * kernel),
            rng,
        );
        let b = bias.then(|| Param::zeros(&[c_out]));
        ConvT2d {
            w,
            b,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel - 2 * self.pad,
            (w - 1) * self.stride + self.kernel - 2 * self.pad,
        )
    }

    fn c_in(&self) -> usize {
        self.w.value.shape()[0]
    }

    fn c_out(&self) -> usize {
        self.w.value.shape()[1]
    }

    fn w_mat(&self) -> ndarray::ArrayView2<'_, f64> {
        let ci = self.c_in();
        let rest = self.w.value.len() / ci;
        self.w
            .value
            .view()
            .into_shape_with_order((ci, rest))
            .expect("weights are contiguous")
    }

    pub fn forward(&self, x: &Array4<f64>, with_bias: bool) -> Array4<f64> {
        self.forward_t(x, with_bias).0
    }

    pub fn forward_t(&self, x: &Array4<f64>, with_bias: bool) -> (Array4<f64>, ConvTCache) {
        // Per-sample views get reshaped below, which needs row-major
        // contiguity — inputs built by concatenation may not have it.
        let x = x.as_standard_layout().into_owned();
        let (bsz, ci, h, w) = x.dim();
        debug_assert_eq!(ci, self.c_in());
        let (ho, wo) = self.out_hw(h, w);
        let wm = self.w_mat();
        // Scatter W^T·x back through the im2col geometry of the *output*.
        let mut cols = Array3::zeros((bsz, self.c_out() * self.kernel * self.kernel, h * w));
        for b in 0..bsz {
            let xb = x
                .index_axis(Axis(0), b)
                .into_shape_with_order((ci, h * w))
                .unwrap();
            cols.index_axis_mut(Axis(0), b).assign(&wm.t().dot(&xb));
        }
        let mut y = col2im(&cols, self.c_out(), ho, wo, self.kernel, self.stride, self.pad);
        if with_bias {
            if let Some(bias) = &self.b {
                for co in 0..self.c_out() {
                    let bv = bias.value[[co]];
                    y.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bv);
                }
            }
        }
        (y, ConvTCache { x })
    }

    pub fn backward(
        &mut self,
        dy: &Array4<f64>,
        cache: &ConvTCache,
        with_bias: bool,
    ) -> Array4<f64> {
        let (bsz, ci, h, w) = cache.x.dim();
        let dy_cols = im2col(dy, self.kernel, self.stride, self.pad);
        let wm = self.w_mat().to_owned();
        let mut dw = Array2::zeros(wm.raw_dim());
        let mut dx = Array4::zeros((bsz, ci, h, w));
        for b in 0..bsz {
            let xb = cache
                .x
                .index_axis(Axis(0), b)
                .into_shape_with_order((ci, h * w))
                .unwrap();
            let dyc = dy_cols.index_axis(Axis(0), b);
            dw = dw + xb.dot(&dyc.t());
            dx.index_axis_mut(Axis(0), b)
                .into_shape_with_order((ci, h * w))
                .unwrap()
                .assign(&wm.dot(&dyc));
        }
        self.w.grad += &dw
            .into_shape_with_order(self.w.value.raw_dim())
            .unwrap();
        if with_bias {
            let co = self.c_out();
            if let Some(bias) = &mut self.b {
                for c in 0..co {
                    bias.grad[[c]] += dy.index_axis(Axis(1), c).sum();
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.w];
        if let Some(b) = &mut self.b {
            ps.push(b);
        }
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_rel_error, numeric_grad};
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = crate::rng::stream_rng(seed, 11);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_hand_computed_case() {
        // 3×3 input, 2×2 kernel, stride 1, no padding.
        let x = Array4::from_shape_vec(
            (1, 1, 3, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let mut rng = crate::rng::stream_rng(0, 0);
        let mut conv = Conv2d::new(1, 1, 2, 1, 0, true, &mut rng);
        conv.w.value.assign(
            &ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 0.0, 0.0, -1.0]).unwrap(),
        );
        conv.b.as_mut().unwrap().value[[0]] = 0.5;
        let y = conv.forward(&x, true);
        // Each output = top-left − bottom-right + 0.5 = −4 + 0.5.
        assert_eq!(y.dim(), (1, 1, 2, 2));
        for &v in y.iter() {
            assert!((v - (-3.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = rand4((2, 2, 7, 7), 1);
        let mut rng = crate::rng::stream_rng(2, 0);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, true, &mut rng);
        let wfix = rand4((2, 3, 4, 4), 3);
        let loss = |conv: &Conv2d, x: &Array4<f64>| (conv.forward(x, true) * &wfix).sum();

        let (y, cache) = conv.forward_t(&x, true);
        assert_eq!(y.dim(), (2, 3, 4, 4));
        let dx = conv.backward(&wfix, &cache, true);

        // Input gradient.
        let mut xd = x.clone().into_dyn();
        let conv_ref = conv.clone();
        let numeric = numeric_grad(
            |v| {
                let xv = v.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                loss(&conv_ref, &xv.to_owned())
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&dx.into_dyn(), &numeric) < 1e-6);

        // Weight gradient.
        let mut probe = conv.clone();
        probe.w.zero_grad();
        probe.b.as_mut().unwrap().zero_grad();
        let (_, cache) = probe.forward_t(&x, true);
        let _ = probe.backward(&wfix, &cache, true);
        let analytic_dw = probe.w.grad.clone();
        let mut wv = conv.w.value.clone();
        let numeric_dw = numeric_grad(
            |v| {
                let mut c = conv.clone();
                c.w.value.assign(v);
                loss(&c, &x)
            },
            &mut wv,
            1e-6,
        );
        assert!(grad_rel_error(&analytic_dw, &numeric_dw) < 1e-6);

        // Bias gradient: dL/db_c = Σ over batch and space of wfix.
        let analytic_db = probe.b.as_ref().unwrap().grad.clone();
        for c in 0..3 {
            let expect = wfix.index_axis(Axis(1), c).sum();
            assert!((analytic_db[[c]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_inverts_conv_geometry() {
        let mut rng = crate::rng::stream_rng(4, 0);
        // The 6×6/stride-2/pad-2 pair used by the image models halves and
        // doubles spatial dims exactly.
        let down = Conv2d::new(1, 4, 6, 2, 2, true, &mut rng);
        let up = ConvT2d::new(4, 1, 6, 2, 2, true, &mut rng);
        let x = rand4((1, 1, 32, 32), 5);
        let mid = down.forward(&x, true);
        assert_eq!(mid.dim(), (1, 4, 16, 16));
        let back = up.forward(&mid, true);
        assert_eq!(back.dim(), (1, 1, 32, 32));

        let up4 = ConvT2d::new(4, 2, 4, 2, 1, true, &mut rng);
        assert_eq!(up4.out_hw(16, 16), (32, 32));
    }

    #[test]
    fn conv_transpose_backward_matches_finite_differences() {
        let x = rand4((2, 3, 4, 4), 6);
        let mut rng = crate::rng::stream_rng(7, 0);
        let mut up = ConvT2d::new(3, 2, 4, 2, 1, true, &mut rng);
        let wfix = rand4((2, 2, 8, 8), 8);
        let loss = |up: &ConvT2d, x: &Array4<f64>| (up.forward(x, true) * &wfix).sum();

        let (y, cache) = up.forward_t(&x, true);
        assert_eq!(y.dim(), (2, 2, 8, 8));
        let dx = up.backward(&wfix, &cache, true);

        let mut xd = x.clone().into_dyn();
        let up_ref = up.clone();
        let numeric = numeric_grad(
            |v| {
                let xv = v.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                loss(&up_ref, &xv.to_owned())
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&dx.into_dyn(), &numeric) < 1e-6);

        let mut probe = up.clone();
        probe.w.zero_grad();
        let (_, cache) = probe.forward_t(&x, true);
        let _ = probe.backward(&wfix, &cache, true);
        let analytic_dw = probe.w.grad.clone();
        let mut wv = up.w.value.clone();
        let numeric_dw = numeric_grad(
            |v| {
                let mut c = up.clone();
                c.w.value.assign(v);
                loss(&c, &x)
            },
            &mut wv,
            1e-6,
        );
        assert!(grad_rel_error(&analytic_dw, &numeric_dw) < 1e-6);
    }

    #[test]
    fn bias_free_forward_is_linear_in_input() {
        let mut rng = crate::rng::stream_rng(9, 0);
        let conv = Conv2d::new(2, 3, 3, 1, 1, true, &mut rng);
        let a = rand4((1, 2, 6, 6), 10);
        let b = rand4((1, 2, 6, 6), 11);
        let lhs = conv.forward(&(&a + &b), false);
        let rhs = conv.forward(&a, false) + conv.forward(&b, false);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-9);
        }
    }
}

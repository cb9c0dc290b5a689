//! Layer normalization over feature rows.

use ndarray::{Array1, Array2, Axis};

use super::Param;

/// Normalizes each row to zero mean / unit variance, then applies a
/// learned per-feature affine. Rows are tokens (or samples); callers
/// flatten [B, N, E] to [B·N, E] first.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Debug)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        LayerNorm {
            gamma: Param::new(ndarray::ArrayD::ones(ndarray::IxDyn(&[features]))),
            beta: Param::zeros(&[features]),
            eps: 1e-5,
        }
    }

    fn gamma1(&self) -> ndarray::ArrayView1<'_, f64> {
        self.gamma
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_t(x).0
    }

    pub fn forward_t(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / n;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let beta = self
            .beta
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let y = &xhat * &self.gamma1().insert_axis(Axis(0)) + &beta.insert_axis(Axis(0));
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, dy: &Array2<f64>, cache: &LayerNormCache) -> Array2<f64> {
        let n = dy.ncols() as f64;
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).into_dyn();
        self.beta.grad += &dy.sum_axis(Axis(0)).into_dyn();

        let dxhat = dy * &self.gamma1().insert_axis(Axis(0));
        let row_mean = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
        let row_proj = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
        let inner = &dxhat - &row_mean - &(&cache.xhat * &row_proj);
        inner * &cache.inv_std.view().insert_axis(Axis(1))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_rel_error, numeric_grad};
    use rand::Rng;

    #[test]
    fn rows_are_standardized_before_affine() {
        let mut rng = crate::rng::stream_rng(31, 0);
        let x = Array2::from_shape_simple_fn((3, 16), || rng.random_range(-4.0..4.0));
        let ln = LayerNorm::new(16);
        let y = ln.forward(&x);
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps softens exact unit variance
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(32, 0);
        let x = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-2.0..2.0));
        let wfix = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0..1.0));
        let mut ln = LayerNorm::new(8);
        // Non-trivial affine so gamma/beta gradients are exercised.
        let mut r2 = crate::rng::stream_rng(33, 0);
        ln.gamma
            .value
            .mapv_inplace(|_| r2.random_range(0.5..1.5));
        ln.beta.value.mapv_inplace(|_| r2.random_range(-0.5..0.5));

        let loss = |ln: &LayerNorm, x: &Array2<f64>| (ln.forward(x) * &wfix).sum();
        let (_, cache) = ln.forward_t(&x);
        let dx = ln.backward(&wfix, &cache);

        let ln_ref = ln.clone();
        let mut xd = x.clone().into_dyn();
        let numeric = numeric_grad(
            |v| {
                let xv = v.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                loss(&ln_ref, &xv.to_owned())
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&dx.into_dyn(), &numeric) < 1e-6);

        let mut gv = ln.gamma.value.clone();
        let numeric_dg = numeric_grad(
            |v| {
                let mut l = ln.clone();
                l.gamma.value.assign(v);
                loss(&l, &x)
            },
            &mut gv,
            1e-6,
        );
        assert!(grad_rel_error(&ln.gamma.grad, &numeric_dg) < 1e-6);

        let mut bv = ln.beta.value.clone();
        let numeric_db = numeric_grad(
            |v| {
                let mut l = ln.clone();
                l.beta.value.assign(v);
                loss(&l, &x)
            },
            &mut bv,
            1e-6,
        );
        assert!(grad_rel_error(&ln.beta.grad, &numeric_db) < 1e-6);
    }
}

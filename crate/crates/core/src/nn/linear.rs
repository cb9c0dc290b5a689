//! Fully connected layer.

use ndarray::{Array2, Axis};

use super::{xavier_std, Param};

/// Affine map y = x·Wᵀ + b with weight layout [out, in].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

#[derive(Debug)]
pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, bias: bool, rng: &mut impl rand::Rng) -> Self {
        let w = Param::randn(&[n_out, n_in], xavier_std(n_in, n_out), rng);
        let b = bias.then(|| Param::zeros(&[n_out]));
        Linear { w, b }
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("weight is 2-D")
    }

    pub fn forward(&self, x: &Array2<f64>, with_bias: bool) -> Array2<f64> {
        let mut y = x.dot(&self.w2().t());
        if with_bias {
            if let Some(b) = &self.b {
                let bv = b
                    .value
                    .view()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap();
                y += &bv.insert_axis(Axis(0));
            }
        }
        y
    }

    pub fn forward_t(&self, x: &Array2<f64>, with_bias: bool) -> (Array2<f64>, LinearCache) {
        (self.forward(x, with_bias), LinearCache { x: x.clone() })
    }

    pub fn backward(
        &mut self,
        dy: &Array2<f64>,
        cache: &LinearCache,
        with_bias: bool,
    ) -> Array2<f64> {
        let dw = dy.t().dot(&cache.x);
        self.w.grad += &dw.into_dyn();
        if with_bias {
            if let Some(b) = &mut self.b {
                let db = dy.sum_axis(Axis(0));
                b.grad += &db.into_dyn();
            }
        }
        dy.dot(&self.w2())
    }

    /// Gradient w.r.t. the input only — touches no parameter gradients.
    pub fn input_grad(&self, dy: &Array2<f64>) -> Array2<f64> {
        dy.dot(&self.w2())
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
    use rand::Rng;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(21, 0);
        let mut lin = Linear::new(5, 3, true, &mut rng);
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let wfix = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let loss = |lin: &Linear, x: &Array2<f64>| (lin.forward(x, true) * &wfix).sum();

        let (_, cache) = lin.forward_t(&x, true);
        let dx = lin.backward(&wfix, &cache, true);

        let lin_ref = lin.clone();
        let mut xd = x.clone().into_dyn();
        let numeric = numeric_grad(
            |v| {
                let xv = v.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                loss(&lin_ref, &xv.to_owned())
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&dx.into_dyn(), &numeric) < 1e-7);

        let mut wv = lin.w.value.clone();
        let numeric_dw = numeric_grad(
            |v| {
                let mut l = lin.clone();
                l.w.value.assign(v);
                loss(&l, &x)
            },
            &mut wv,
            1e-6,
        );
        // The backward above accumulated into lin's fresh grads.
        assert!(grad_rel_error(&lin.w.grad, &numeric_dw) < 1e-7);
        let db = lin.b.as_ref().unwrap().grad.clone();
        let expect = wfix.sum_axis(Axis(0)).into_dyn();
        assert!(grad_rel_error(&db, &expect) < 1e-12);
    }
}

//! Minimal f64 neural-network engine: explicit forward/backward layers.
//!
//! Everything is plain `ndarray` in double precision with hand-written
//! gradients. There is no tape: each layer exposes `forward` (inference),
//! `forward_t` (returns the cache its backward needs), and `backward`
//! (accumulates parameter gradients, returns the input gradient). Models
//! compose layers explicitly, which keeps the less usual pieces — the
//! critic's penalty needs gradients *of* an input gradient — straightforward
//! to write and to check against finite differences.

mod act;
mod attention;
mod conv;
mod linear;
mod norm;
mod optim;

pub use act::{
    gelu, gelu_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_scalar,
    softmax_lastdim, softmax_lastdim_backward, tanh_act, tanh_backward,
};
pub use attention::{BlockCache, MultiHeadAttention, TransformerBlock};
pub use conv::{im2col, Conv2d, ConvCache, ConvT2d, ConvTCache};
pub use linear::{Linear, LinearCache};
pub use norm::{LayerNorm, LayerNormCache};
pub use optim::{AdamW, LrSchedule};

use ndarray::{ArrayD, IxDyn};
use rand_distr::{Distribution, Normal};

/// One learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(IxDyn(shape)))
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("std ≥ 0");
        Param::new(ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            dist.sample(rng)
        }))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// He/Kaiming standard deviation for a layer with the given fan-in,
/// suitable ahead of ReLU-family activations.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Xavier/Glorot standard deviation for linear maps between fan-in/out.
pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Central-difference numeric gradient of `loss` with respect to `value`,
/// used by unit tests to validate analytic backward passes.
///
/// `loss` is re-evaluated with each element of `value` displaced by ±eps;
/// the closure must read the current tensor contents on every call.
pub fn numeric_grad<F>(mut loss: F, value: &mut ArrayD<f64>, eps: f64) -> ArrayD<f64>
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    let mut grad = ArrayD::zeros(value.raw_dim());
    for idx in 0..value.len() {
        let original = value.as_slice_mut().expect("contiguous")[idx];
        value.as_slice_mut().unwrap()[idx] = original + eps;
        let up = loss(value);
        value.as_slice_mut().unwrap()[idx] = original - eps;
        let down = loss(value);
        value.as_slice_mut().unwrap()[idx] = original;
        grad.as_slice_mut().unwrap()[idx] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Maximum relative error between an analytic and a numeric gradient,
/// normalized by the larger magnitude (with an absolute floor so zero
/// gradients compare cleanly).
pub fn grad_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

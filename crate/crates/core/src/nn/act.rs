//! Elementwise activations and the row softmax, with explicit backwards.
//!
//! Each forward returns whatever its backward needs (a slope mask, or the
//! activated output) so callers can stash it in their layer caches.

use ndarray::{Array, Array2, Axis, Dimension};
use statrs::function::erf::erf;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Leaky ReLU. Returns the output and the elementwise slope mask
/// (1 where the input was positive, `slope` elsewhere); the mask is both
/// the backward multiplier and the frozen linearization the critic's
/// penalty gradient reuses.
pub fn leaky_relu<D: Dimension>(x: &Array<f64, D>, slope: f64) -> (Array<f64, D>, Array<f64, D>) {
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { slope });
    let y = x * &mask;
    (y, mask)
}

pub fn leaky_relu_backward<D: Dimension>(
    dy: &Array<f64, D>,
    mask: &Array<f64, D>,
) -> Array<f64, D> {
    dy * mask
}

/// Hyperbolic tangent. Backward wants the *output*.
pub fn tanh_act<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(f64::tanh)
}

pub fn tanh_backward<D: Dimension>(dy: &Array<f64, D>, y: &Array<f64, D>) -> Array<f64, D> {
    dy * &y.mapv(|v| 1.0 - v * v)
}

/// Exact Gaussian-error-linear unit, x·Φ(x). Returns output plus the
/// pointwise derivative Φ(x) + x·φ(x) for the backward.
pub fn gelu<D: Dimension>(x: &Array<f64, D>) -> (Array<f64, D>, Array<f64, D>) {
    let y = x.mapv(|v| v * normal_cdf(v));
    let dydx = x.mapv(|v| normal_cdf(v) + v * INV_SQRT_2PI * (-0.5 * v * v).exp());
    (y, dydx)
}

pub fn gelu_backward<D: Dimension>(dy: &Array<f64, D>, dydx: &Array<f64, D>) -> Array<f64, D> {
    dy * dydx
}

fn normal_cdf(v: f64) -> f64 {
    0.5 * (1.0 + erf(v / SQRT_2))
}

/// Scalar logistic sigmoid, sign-split so the exponential never overflows,
/// with an exactness guarantee the snapshot-ensemble symmetry contract
/// needs: `sigmoid_scalar(v) + sigmoid_scalar(-v) == 1.0` bitwise. The
/// negative branch computes `1 − σ(−v)`, which is exact by Sterbenz's lemma
/// because σ(−v) ∈ [0.5, 1]. (Probabilities below ~1e-16 flatten to 0 as a
/// consequence — irrelevant at classification scale.)
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        1.0 - 1.0 / (1.0 + v.exp())
    }
}

/// Logistic sigmoid. Backward is y·(1−y), so only the output is cached.
pub fn sigmoid<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| {
        // Split by sign so the exponential never overflows.
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Row-wise softmax over the last axis of a matrix (max-subtracted).
pub fn softmax_lastdim(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward of the row softmax given its output `y`:
/// dx = (dy − ⟨dy, y⟩_row) ⊙ y.
pub fn softmax_lastdim_backward(dy: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let inner = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
    (dy - &inner) * y
}

//! Multi-task critic and the input-gradient penalty.
//!
//! The critic is a stride-2 4×4 conv stack with LeakyReLU(0.2), a global
//! average pool, and two linear heads: an unbounded adversarial score and
//! an attribute logit. Every piece is piecewise linear, which makes the
//! penalty's parameter gradient computable without general second-order
//! autodiff: the input gradient g(θ) is itself a linear chain through the
//! frozen activation masks, so pulling a cotangent back through g's chain
//! (a "tangent" forward pass re-using the masks, followed by a standard
//! adjoint sweep with biases excluded) yields exact ∂/∂θ of the penalty.

use ndarray::{Array1, Array2, Array4, Axis};

use crate::nn::{leaky_relu, Conv2d, Linear, Param};
use crate::rng::stream_rng;
use crate::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;
const INIT_SALT: u64 = 0x44_49_53_43; // "DISC"
const INTERP_SALT: u64 = 0x47_50_49_4e; // "GPIN"

/// Anything that can report the gradient of its scalar critic output with
/// respect to its input, per sample.
pub trait InputGradient {
    fn input_gradient(&self, x: &Array4<f64>) -> Array4<f64>;
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    pub head_adv: Linear,
    pub head_cls: Linear,
    image_size: usize,
}

#[derive(Debug)]
pub struct DiscCache {
    convs: Vec<crate::nn::ConvCache>,
    masks: Vec<Array4<f64>>,
    c_adv: crate::nn::LinearCache,
    c_cls: crate::nn::LinearCache,
}

fn gap(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let mut out = Array2::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            out[[bi, ci]] = x.slice(ndarray::s![bi, ci, .., ..]).sum() / (h * w) as f64;
        }
    }
    out
}

fn gap_backward(d_pooled: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (b, c) = d_pooled.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((b, c, h, w), |(bi, ci, _, _)| d_pooled[[bi, ci]] * scale)
}

impl Discriminator {
    pub fn new(
        image_size: usize,
        base_channels: usize,
        stages: usize,
        seed: u64,
    ) -> Result<Self> {
        if stages == 0 || base_channels == 0 {
            return Err(Error::InvalidSpec(
                "critic needs at least one stage and one channel".into(),
            ));
        }
        if image_size % (1 << stages) != 0 || image_size >> stages == 0 {
            return Err(Error::InvalidSize(format!(
                "image size {image_size} cannot be halved {stages} times"
            )));
        }
        let mut rng = stream_rng(seed, INIT_SALT);
        let mut convs = Vec::with_capacity(stages);
        let mut c_in = 1;
        for i in 0..stages {
            let c_out = base_channels << i;
            convs.push(Conv2d::new(c_in, c_out, 4, 2, 1, true, &mut rng));
            c_in = c_out;
        }
        let feat = base_channels << (stages - 1);
        Ok(Discriminator {
            convs,
            head_adv: Linear::new(feat, 1, true, &mut rng),
            head_cls: Linear::new(feat, 1, true, &mut rng),
            image_size,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn base_channels(&self) -> usize {
        self.convs[0].w.value.shape()[0]
    }

    pub fn stages(&self) -> usize {
        self.convs.len()
    }

    /// (adversarial score, attribute logit) per sample.
    pub fn forward(&self, x: &Array4<f64>) -> (Array1<f64>, Array1<f64>) {
        let (adv, cls, _) = self.forward_t(x);
        (adv, cls)
    }

    pub fn forward_t(&self, x: &Array4<f64>) -> (Array1<f64>, Array1<f64>, DiscCache) {
        debug_assert_eq!(x.dim().2, self.image_size);
        let mut h = x.clone();
        let mut convs = Vec::new();
        let mut masks = Vec::new();
        for conv in &self.convs {
            let (z, c) = conv.forward_t(&h, true);
            let (a, mask) = leaky_relu(&z, LEAKY_SLOPE);
            convs.push(c);
            masks.push(mask);
            h = a;
        }
        let pooled = gap(&h);
        let (adv, c_adv) = self.head_adv.forward_t(&pooled, true);
        let (cls, c_cls) = self.head_cls.forward_t(&pooled, true);
        (
            adv.column(0).to_owned(),
            cls.column(0).to_owned(),
            DiscCache {
                convs,
                masks,
                c_adv,
                c_cls,
            },
        )
    }

    /// Backpropagates head seeds to the input. With `accumulate` the
    /// parameter gradients are summed into the layers; without it the
    /// parameters are left untouched (used when the generator trains
    /// through a frozen critic).
    pub fn backward(
        &mut self,
        d_adv: &Array1<f64>,
        d_cls: &Array1<f64>,
        cache: &DiscCache,
        accumulate: bool,
    ) -> Array4<f64> {
        let b = d_adv.len();
        let d_adv_m = d_adv.view().insert_axis(Axis(1)).to_owned();
        let d_cls_m = d_cls.view().insert_axis(Axis(1)).to_owned();
        let d_pooled = if accumulate {
            self.head_adv.backward(&d_adv_m, &cache.c_adv, true)
                + self.head_cls.backward(&d_cls_m, &cache.c_cls, true)
        } else {
            self.head_adv.input_grad(&d_adv_m) + self.head_cls.input_grad(&d_cls_m)
        };
        let (_, _, fh, fw) = cache.masks.last().unwrap().dim();
        let mut d_h = gap_backward(&d_pooled, fh, fw);
        debug_assert_eq!(d_h.dim().0, b);
        for i in (0..self.convs.len()).rev() {
            let dz = &d_h * &cache.masks[i];
            d_h = if accumulate {
                self.convs[i].backward(&dz, &cache.convs[i], true)
            } else {
                let side = self.image_size >> i;
                self.convs[i].input_grad(&dz, (side, side))
            };
        }
        d_h
    }

    /// Accumulates `scale`·∂penalty/∂θ into the parameter gradients and
    /// returns the penalty value at `x_hat`.
    ///
    /// Derivation: the penalty is mean_b φ(g_b) with φ(g) = (‖g‖−1)² and
    /// g_b = ∇_x adv(x̂_b). For a piecewise-linear critic, g is a linear
    /// chain in the weights through the frozen masks, so ∂/∂θ ⟨t, g(θ)⟩
    /// with cotangent t = ∇_g φ is computed exactly by running the mask
    /// chain forward from t (biases excluded) and sweeping the standard
    /// adjoint back over that tangent chain.
    pub fn accumulate_gp_gradients(&mut self, x_hat: &Array4<f64>, scale: f64) -> f64 {
        let b = x_hat.dim().0;
        let (_, _, cache) = self.forward_t(x_hat);
        let ones = Array1::ones(b);
        let zeros = Array1::zeros(b);
        let g = self.backward(&ones, &zeros, &cache, false);

        let (penalty, cotangent) = penalty_and_cotangent(&g);

        // Tangent forward through the frozen masks, biases off.
        let mut h = cotangent;
        let mut tcaches = Vec::with_capacity(self.convs.len());
        for (conv, mask) in self.convs.iter().zip(&cache.masks) {
            let (z, tc) = conv.forward_t(&h, false);
            h = z * mask;
            tcaches.push(tc);
        }
        let (_, _, fh, fw) = h.dim();
        let pooled_t = gap(&h);
        let (_, tc_adv) = self.head_adv.forward_t(&pooled_t, false);

        // Adjoint sweep over the tangent chain.
        let ds = Array2::from_elem((b, 1), scale);
        let d_pooled = self.head_adv.backward(&ds, &tc_adv, false);
        let mut d_h = gap_backward(&d_pooled, fh, fw);
        for i in (0..self.convs.len()).rev() {
            let dz = &d_h * &cache.masks[i];
            d_h = self.convs[i].backward(&dz, &tcaches[i], false);
        }
        penalty
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = Vec::new();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.w"), &mut conv.w));
            if let Some(b) = &mut conv.b {
                out.push((format!("conv{i}.b"), b));
            }
        }
        for (name, lin) in [("adv", &mut self.head_adv), ("cls", &mut self.head_cls)] {
            out.push((format!("head_{name}.w"), &mut lin.w));
            if let Some(b) = &mut lin.b {
                out.push((format!("head_{name}.b"), b));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

impl InputGradient for Discriminator {
    fn input_gradient(&self, x: &Array4<f64>) -> Array4<f64> {
        let b = x.dim().0;
        let (_, _, cache) = self.forward_t(x);
        // Cloning self to satisfy the &mut backward signature would be
        // wasteful; accumulate=false never touches parameters, so a local
        // mutable copy of the layer list is avoided by a small unsafe-free
        // trick: forward the call through an owned shallow clone.
        let mut me = self.clone();
        me.backward(&Array1::ones(b), &Array1::zeros(b), &cache, false)
    }
}

/// Penalty value mean_b (‖g_b‖−1)² and the cotangent ∂penalty/∂g.
fn penalty_and_cotangent(g: &Array4<f64>) -> (f64, Array4<f64>) {
    let b = g.dim().0;
    let mut penalty = 0.0;
    let mut cot = Array4::zeros(g.raw_dim());
    for bi in 0..b {
        let gb = g.index_axis(Axis(0), bi);
        let norm = gb.mapv(|v| v * v).sum().sqrt();
        penalty += (norm - 1.0) * (norm - 1.0);
        if norm > 1e-12 {
            let c = 2.0 * (norm - 1.0) / (b as f64 * norm);
            cot.index_axis_mut(Axis(0), bi).assign(&(&gb * c));
        }
        // ‖g‖ = 0 keeps a zero cotangent (subgradient convention).
    }
    (penalty / b as f64, cot)
}

/// Per-sample convex interpolation x̂ = u·x_real + (1−u)·x_fake with
/// u ~ U[0,1] drawn deterministically from `seed`.
pub fn interpolate_pairs(
    x_real: &Array4<f64>,
    x_fake: &Array4<f64>,
    seed: u64,
) -> Result<Array4<f64>> {
    if x_real.dim() != x_fake.dim() {
        return Err(Error::ShapeError(format!(
            "real {:?} vs fake {:?}",
            x_real.dim(),
            x_fake.dim()
        )));
    }
    let mut rng = stream_rng(seed, INTERP_SALT);
    let b = x_real.dim().0;
    let mut out = Array4::zeros(x_real.raw_dim());
    for bi in 0..b {
        let u: f64 = rand::Rng::random(&mut rng);
        let blend = &x_real.index_axis(Axis(0), bi) * u
            + &x_fake.index_axis(Axis(0), bi) * (1.0 - u);
        out.index_axis_mut(Axis(0), bi).assign(&blend);
    }
    Ok(out)
}

/// mean over the batch of (‖∇_x critic(x̂)‖₂ − 1)² at the seeded
/// interpolates.
pub fn gradient_penalty<C: InputGradient>(
    critic: &C,
    x_real: &Array4<f64>,
    x_fake: &Array4<f64>,
    seed: u64,
) -> Result<f64> {
    let x_hat = interpolate_pairs(x_real, x_fake, seed)?;
    let g = critic.input_gradient(&x_hat);
    Ok(penalty_and_cotangent(&g).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_rel_error, numeric_grad};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = crate::rng::stream_rng(seed, 17);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    struct SumCritic;
    impl InputGradient for SumCritic {
        fn input_gradient(&self, x: &Array4<f64>) -> Array4<f64> {
            Array4::ones(x.raw_dim())
        }
    }

    struct ConstCritic;
    impl InputGradient for ConstCritic {
        fn input_gradient(&self, x: &Array4<f64>) -> Array4<f64> {
            Array4::zeros(x.raw_dim())
        }
    }

    struct LinearCritic {
        w: Array4<f64>, // per-sample gradient, broadcast over batch
    }
    impl InputGradient for LinearCritic {
        fn input_gradient(&self, x: &Array4<f64>) -> Array4<f64> {
            let b = x.dim().0;
            let mut g = Array4::zeros(x.raw_dim());
            for bi in 0..b {
                g.index_axis_mut(Axis(0), bi)
                    .assign(&self.w.index_axis(Axis(0), 0));
            }
            g
        }
    }

    #[test]
    fn summing_critic_gives_closed_form_penalty() {
        // Gradient of Σx is all-ones: norm √N, penalty (√N − 1)².
        let x_real = rand4((3, 1, 4, 4), 1);
        let x_fake = rand4((3, 1, 4, 4), 2);
        let n = 16.0f64;
        let expect = (n.sqrt() - 1.0) * (n.sqrt() - 1.0);
        let pen = gradient_penalty(&SumCritic, &x_real, &x_fake, 0).unwrap();
        assert!((pen - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_penalty_is_one() {
        let x = rand4((2, 1, 4, 4), 3);
        let pen = gradient_penalty(&ConstCritic, &x, &x, 0).unwrap();
        assert!((pen - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_gradient_critic_has_zero_penalty() {
        let mut w = rand4((1, 1, 4, 4), 4);
        let norm = w.mapv(|v| v * v).sum().sqrt();
        w.mapv_inplace(|v| v / norm);
        let critic = LinearCritic { w };
        let x_real = rand4((3, 1, 4, 4), 5);
        let x_fake = rand4((3, 1, 4, 4), 6);
        let pen = gradient_penalty(&critic, &x_real, &x_fake, 1).unwrap();
        assert!(pen < 1e-24);
    }

    #[test]
    fn penalty_is_nonnegative_for_random_critics() {
        let x_real = rand4((2, 1, 4, 4), 7);
        let x_fake = rand4((2, 1, 4, 4), 8);
        for i in 0..100 {
            let critic = LinearCritic {
                w: rand4((1, 1, 4, 4), 100 + i),
            };
            let pen = gradient_penalty(&critic, &x_real, &x_fake, i).unwrap();
            assert!(pen >= 0.0);
        }
    }

    #[test]
    fn interpolation_is_seeded_and_convex() {
        let x_real = rand4((4, 1, 3, 3), 9);
        let x_fake = rand4((4, 1, 3, 3), 10);
        let a = interpolate_pairs(&x_real, &x_fake, 42).unwrap();
        let b = interpolate_pairs(&x_real, &x_fake, 42).unwrap();
        assert_eq!(a, b);
        for ((&v, &r), &f) in a.iter().zip(x_real.iter()).zip(x_fake.iter()) {
            assert!(v >= r.min(f) - 1e-12 && v <= r.max(f) + 1e-12);
        }
        let bad = rand4((4, 1, 4, 4), 11);
        assert!(matches!(
            interpolate_pairs(&x_real, &bad, 0),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn critic_forward_shapes_and_input_gradient_check() {
        let d = Discriminator::new(8, 2, 2, 0).unwrap();
        let x = rand4((3, 1, 8, 8), 12);
        let (adv, cls) = d.forward(&x);
        assert_eq!(adv.len(), 3);
        assert_eq!(cls.len(), 3);

        // d(Σ_b adv_b)/dx equals the stacked per-sample gradients.
        let g = d.input_gradient(&x);
        let mut xd = x.clone().into_dyn();
        let numeric = numeric_grad(
            |v| {
                let xv = v.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                d.forward(&xv.to_owned()).0.sum()
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&g.into_dyn(), &numeric) < 1e-5);
    }

    #[test]
    fn critic_parameter_gradients_match_finite_differences() {
        let mut d = Discriminator::new(8, 2, 2, 1).unwrap();
        let x = rand4((2, 1, 8, 8), 13);
        let mut rng = crate::rng::stream_rng(14, 0);
        let ca = Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0));
        let cc = Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0));
        let loss = |d: &Discriminator, x: &Array4<f64>| {
            let (adv, cls) = d.forward(x);
            (&adv * &ca).sum() + (&cls * &cc).sum()
        };

        let (_, _, cache) = d.forward_t(&x);
        let _ = d.backward(&ca, &cc, &cache, true);

        for probe in ["conv0.w", "head_adv.w", "head_cls.b"] {
            let analytic = d
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.grad.clone())
                .unwrap();
            let mut value = d
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.value.clone())
                .unwrap();
            let base = d.clone();
            let numeric = numeric_grad(
                |v| {
                    let mut m = base.clone();
                    m.named_params_mut()
                        .into_iter()
                        .find(|(n, _)| n == probe)
                        .map(|(_, p)| p.value.assign(v))
                        .unwrap();
                    loss(&m, &x)
                },
                &mut value,
                1e-6,
            );
            assert!(
                grad_rel_error(&analytic, &numeric) < 1e-5,
                "gradient mismatch for {probe}"
            );
        }
    }

    #[test]
    fn penalty_parameter_gradients_match_finite_differences() {
        let mut d = Discriminator::new(8, 2, 2, 2).unwrap();
        let x_hat = rand4((3, 1, 8, 8), 15);

        for p in d.params_mut() {
            p.zero_grad();
        }
        let value = d.accumulate_gp_gradients(&x_hat, 1.0);
        assert!(value >= 0.0);

        let penalty_of = |d: &Discriminator| {
            let g = d.input_gradient(&x_hat);
            super::penalty_and_cotangent(&g).0
        };
        assert!((penalty_of(&d) - value).abs() < 1e-12);

        // Conv weights and the adversarial head carry the whole gradient;
        // biases and the attribute head shift masks only on a measure-zero
        // set, so both sides must be (near) zero there.
        for probe in ["conv0.w", "conv1.w", "head_adv.w", "conv0.b", "head_cls.w"] {
            let analytic = d
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.grad.clone())
                .unwrap();
            let mut value = d
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.value.clone())
                .unwrap();
            let base = d.clone();
            let numeric = numeric_grad(
                |v| {
                    let mut m = base.clone();
                    m.named_params_mut()
                        .into_iter()
                        .find(|(n, _)| n == probe)
                        .map(|(_, p)| p.value.assign(v))
                        .unwrap();
                    penalty_of(&m)
                },
                &mut value,
                1e-6,
            );
            assert!(
                grad_rel_error(&analytic, &numeric) < 1e-4,
                "penalty gradient mismatch for {probe}"
            );
        }
    }

    #[test]
    fn scaled_accumulation_scales_the_gradient() {
        let mut d1 = Discriminator::new(8, 2, 2, 3).unwrap();
        let mut d2 = d1.clone();
        let x_hat = rand4((2, 1, 8, 8), 16);
        d1.accumulate_gp_gradients(&x_hat, 1.0);
        d2.accumulate_gp_gradients(&x_hat, 10.0);
        let g1 = d1
            .named_params_mut()
            .into_iter()
            .find(|(n, _)| n == "conv0.w")
            .map(|(_, p)| p.grad.clone())
            .unwrap();
        let g2 = d2
            .named_params_mut()
            .into_iter()
            .find(|(n, _)| n == "conv0.w")
            .map(|(_, p)| p.grad.clone())
            .unwrap();
        assert!(grad_rel_error(&(&g1 * 10.0), &g2) < 1e-12);
    }
}

//! AdamW with decoupled weight decay, plus the warmup/cosine LR schedule.

use ndarray::ArrayD;

use super::Param;

/// Adam with decoupled weight decay. Moment buffers are allocated lazily on
/// the first step and keyed by parameter order, so callers must pass the
/// same parameter list (same order) every step.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Flat view over every moment value, first-moment buffers then
    /// second-moment, in parameter order; used to fingerprint state.
    pub fn moment_values(&self) -> impl Iterator<Item = &f64> {
        self.m.iter().chain(self.v.iter()).flat_map(|a| a.iter())
    }

    /// Applies one update at learning rate `lr` and clears gradients.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer was initialized with a different parameter list"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&p.grad, |mv, &g| *mv = self.beta1 * *mv + (1.0 - self.beta1) * g);
            v.zip_mut_with(&p.grad, |vv, &g| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g
            });
            let decay = lr * self.weight_decay;
            ndarray::Zip::from(&mut p.value)
                .and(&*m)
                .and(&*v)
                .for_each(|th, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *th -= lr * mhat / (vhat.sqrt() + self.eps) + decay * *th;
                });
            p.grad.fill(0.0);
        }
    }
}

/// Linear warmup followed by cosine decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.base_lr;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        p.grad.fill(0.5);
        let mut opt = AdamW::new(0.01);
        opt.step(&mut [&mut p], 0.1);
        // m̂ = 0.5, v̂ = 0.25 after bias correction; update ≈ 0.1, decay 0.001.
        assert!((p.value[[0]] - 0.899).abs() < 1e-6);
        assert_eq!(p.grad[[0]], 0.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), -2.0));
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let theta = p.value[[0]];
            p.grad[[0]] = 2.0 * (theta - 3.0);
            opt.step(&mut [&mut p], 0.05);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let sched = LrSchedule {
            base_lr: 1.0,
            warmup_steps: 10,
            total_steps: 110,
        };
        assert!((sched.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((sched.lr_at(9) - 1.0).abs() < 1e-12);
        // Cosine midpoint and tail.
        assert!((sched.lr_at(60) - 0.5).abs() < 1e-12);
        assert!(sched.lr_at(109) < 0.01);
        // Monotone decay after warmup.
        let mut prev = f64::INFINITY;
        for step in 10..110 {
            let lr = sched.lr_at(step);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }
}

//! Small convolutional classifier backbone with a staged forward pass.
//!
//! A stack of stride-2 3×3 conv blocks with ReLU, global average pooling,
//! and one linear head. The forward pass can be split at any block
//! boundary, which is what feature-space mixup and class-activation maps
//! need: run the front, manipulate or capture the feature map, run the
//! rest, and push gradients back through either part independently.

use ndarray::{Array2, Array4};

use crate::nn::{leaky_relu, leaky_relu_backward, Conv2d, Linear, Param};
use crate::rng::stream_rng;
use crate::{Error, Result};

const INIT_SALT: u64 = 0x43_4e_4e_42; // "CNNB"

#[derive(Debug, Clone)]
pub struct CnnBackbone {
    blocks: Vec<Conv2d>,
    head: Linear,
    image_size: usize,
}

#[derive(Debug)]
pub struct ConvBlockCache {
    conv: crate::nn::ConvCache,
    mask: Array4<f64>,
    in_hw: (usize, usize),
}

#[derive(Debug)]
pub struct HeadCache {
    feat_hw: (usize, usize),
    linear: crate::nn::LinearCache,
}

#[derive(Debug)]
pub struct FullCache {
    pub blocks: Vec<ConvBlockCache>,
    pub head: HeadCache,
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

fn gap_backward(d: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (b, c) = d.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((b, c, h, w), |(bi, ci, _, _)| d[[bi, ci]] * scale)
}

impl CnnBackbone {
    /// `blocks` stride-2 conv stages (channels base·2^i) into `n_out`
    /// logits.
    pub fn new(
        image_size: usize,
        base_channels: usize,
        blocks: usize,
        n_out: usize,
        seed: u64,
    ) -> Result<Self> {
        if blocks == 0 || base_channels == 0 || n_out == 0 {
            return Err(Error::InvalidSpec(
                "backbone needs at least one block, one channel, one output".into(),
            ));
        }
        if image_size % (1 << blocks) != 0 || image_size >> blocks == 0 {
            return Err(Error::InvalidSize(format!(
                "image size {image_size} cannot be halved {blocks} times"
            )));
        }
        let mut rng = stream_rng(seed, INIT_SALT);
        let mut convs = Vec::with_capacity(blocks);
        let mut c_in = 1;
        for i in 0..blocks {
            let c_out = base_channels << i;
            convs.push(Conv2d::new(c_in, c_out, 3, 2, 1, true, &mut rng));
            c_in = c_out;
        }
        let feat = base_channels << (blocks - 1);
        Ok(CnnBackbone {
            blocks: convs,
            head: Linear::new(feat, n_out, true, &mut rng),
            image_size,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_out(&self) -> usize {
        self.head.w.value.shape()[0]
    }

    /// Zeroes the output head so an untrained network scores every input
    /// at exactly 0.5. A randomly initialised head on pooled features
    /// correlates with global image brightness, which would make a
    /// never-trained classifier look systematically better or worse than
    /// chance; a zero head keeps "no training" indistinguishable from
    /// coin flips while the conv stack still trains normally (its
    /// gradients become nonzero after the first head update).
    pub fn zero_head(&mut self) {
        self.head.w.value.fill(0.0);
        if let Some(b) = &mut self.head.b {
            b.value.fill(0.0);
        }
    }

    pub fn base_channels(&self) -> usize {
        self.blocks[0].w.value.shape()[0]
    }

    /// The block boundary in front of the last conv stage — the
    /// feature-space mixing point.
    pub fn penultimate_boundary(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Runs conv blocks `from..to` (block boundaries; 0 = raw input).
    pub fn forward_blocks_t(
        &self,
        x: &Array4<f64>,
        from: usize,
        to: usize,
    ) -> (Array4<f64>, Vec<ConvBlockCache>) {
        assert!(from <= to && to <= self.blocks.len());
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(to - from);
        for conv in &self.blocks[from..to] {
            let in_hw = (h.dim().2, h.dim().3);
            let (z, c) = conv.forward_t(&h, true);
            let (a, mask) = leaky_relu(&z, 0.0);
            caches.push(ConvBlockCache {
                conv: c,
                mask,
                in_hw,
            });
            h = a;
        }
        (h, caches)
    }

    /// Gradient through blocks `from..from+caches.len()`, reversed. Without
    /// `accumulate`, parameters stay untouched.
    pub fn backward_blocks(
        &mut self,
        d_out: &Array4<f64>,
        caches: &[ConvBlockCache],
        from: usize,
        accumulate: bool,
    ) -> Array4<f64> {
        if !accumulate {
            return self.blocks_input_grad(d_out, caches, from);
        }
        let mut d_h = d_out.clone();
        for (offset, cache) in caches.iter().enumerate().rev() {
            let dz = leaky_relu_backward(&d_h, &cache.mask);
            d_h = self.blocks[from + offset].backward(&dz, &cache.conv, true);
        }
        d_h
    }

    /// [`Self::backward_blocks`] without parameter accumulation; usable on a
    /// shared reference, e.g. for saliency extraction from a frozen model.
    pub fn blocks_input_grad(
        &self,
        d_out: &Array4<f64>,
        caches: &[ConvBlockCache],
        from: usize,
    ) -> Array4<f64> {
        let mut d_h = d_out.clone();
        for (offset, cache) in caches.iter().enumerate().rev() {
            let dz = leaky_relu_backward(&d_h, &cache.mask);
            d_h = self.blocks[from + offset].input_grad(&dz, cache.in_hw);
        }
        d_h
    }

    pub fn head_forward_t(&self, feat: &Array4<f64>) -> (Array2<f64>, HeadCache) {
        let (_, _, fh, fw) = feat.dim();
        let pooled = gap(feat);
        let (logits, linear) = self.head.forward_t(&pooled, true);
        (
            logits,
            HeadCache {
                feat_hw: (fh, fw),
                linear,
            },
        )
    }

    pub fn head_backward(
        &mut self,
        d_logits: &Array2<f64>,
        cache: &HeadCache,
        accumulate: bool,
    ) -> Array4<f64> {
        if !accumulate {
            return self.head_input_grad(d_logits, cache);
        }
        let d_pooled = self.head.backward(d_logits, &cache.linear, true);
        gap_backward(&d_pooled, cache.feat_hw.0, cache.feat_hw.1)
    }

    /// [`Self::head_backward`] without parameter accumulation, on a shared
    /// reference.
    pub fn head_input_grad(&self, d_logits: &Array2<f64>, cache: &HeadCache) -> Array4<f64> {
        let d_pooled = self.head.input_grad(d_logits);
        gap_backward(&d_pooled, cache.feat_hw.0, cache.feat_hw.1)
    }

    /// Full pass to logits (no output nonlinearity).
    pub fn forward_t(&self, x: &Array4<f64>) -> (Array2<f64>, FullCache) {
        let (feat, blocks) = self.forward_blocks_t(x, 0, self.blocks.len());
        let (logits, head) = self.head_forward_t(&feat);
        (logits, FullCache { blocks, head })
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array2<f64> {
        self.forward_t(x).0
    }

    /// Post-sigmoid probabilities, one column per output node.
    pub fn probs(&self, x: &Array4<f64>) -> Array2<f64> {
        self.forward(x).mapv(crate::nn::sigmoid_scalar)
    }

    pub fn backward(
        &mut self,
        d_logits: &Array2<f64>,
        cache: &FullCache,
        accumulate: bool,
    ) -> Array4<f64> {
        let d_feat = self.head_backward(d_logits, &cache.head, accumulate);
        self.backward_blocks(&d_feat, &cache.blocks, 0, accumulate)
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = Vec::new();
        for (i, conv) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.w"), &mut conv.w));
            if let Some(b) = &mut conv.b {
                out.push((format!("block{i}.b"), b));
            }
        }
        out.push(("head.w".into(), &mut self.head.w));
        if let Some(b) = &mut self.head.b {
            out.push(("head.b".into(), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_rel_error, numeric_grad};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = crate::rng::stream_rng(seed, 3);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn staged_forward_equals_full_forward() {
        let m = CnnBackbone::new(16, 4, 3, 5, 0).unwrap();
        let x = rand4((2, 1, 16, 16), 1);
        let full = m.forward(&x);
        let k = m.penultimate_boundary();
        let (feat, _) = m.forward_blocks_t(&x, 0, k);
        let (rest, _) = m.forward_blocks_t(&feat, k, m.n_blocks());
        let (staged, _) = m.head_forward_t(&rest);
        assert_eq!(full, staged);
        assert_eq!(full.dim(), (2, 5));
    }

    #[test]
    fn probabilities_live_in_the_unit_interval() {
        let m = CnnBackbone::new(16, 4, 2, 15, 1).unwrap();
        let p = m.probs(&rand4((3, 1, 16, 16), 2));
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            CnnBackbone::new(18, 4, 2, 2, 0),
            Err(Error::InvalidSize(_))
        ));
        assert!(matches!(
            CnnBackbone::new(16, 0, 2, 2, 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = CnnBackbone::new(8, 2, 2, 3, 2).unwrap();
        let x = rand4((2, 1, 8, 8), 4);
        let mut rng = crate::rng::stream_rng(5, 0);
        let cw = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let loss = |m: &CnnBackbone, x: &Array4<f64>| (&m.forward(x) * &cw).sum();

        let (_, cache) = m.forward_t(&x);
        let dx = m.backward(&cw, &cache, true);

        // Input gradient.
        let mut xd = x.clone().into_dyn();
        let numeric_x = numeric_grad(
            |v| {
                let xv = v
                    .view()
                    .into_dimensionality::<ndarray::Ix4>()
                    .unwrap()
                    .to_owned();
                loss(&m, &xv)
            },
            &mut xd,
            1e-6,
        );
        assert!(grad_rel_error(&dx.into_dyn(), &numeric_x) < 1e-5);

        // A conv weight and the head weight.
        for probe in ["block0.w", "head.w", "block1.b"] {
            let analytic = m
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.grad.clone())
                .unwrap();
            let mut value = m
                .named_params_mut()
                .into_iter()
                .find(|(n, _)| n == probe)
                .map(|(_, p)| p.value.clone())
                .unwrap();
            let base = m.clone();
            let numeric = numeric_grad(
                |v| {
                    let mut probe_model = base.clone();
                    probe_model
                        .named_params_mut()
                        .into_iter()
                        .find(|(n, _)| n == probe)
                        .map(|(_, p)| p.value.assign(v))
                        .unwrap();
                    loss(&probe_model, &x)
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
    fn split_backward_matches_full_backward() {
        let mut full = CnnBackbone::new(8, 2, 3, 2, 6).unwrap();
        let mut split = full.clone();
        let x = rand4((2, 1, 8, 8), 7);
        let d_logits = Array2::from_elem((2, 2), 0.5);

        let (_, cache) = full.forward_t(&x);
        let dx_full = full.backward(&d_logits, &cache, true);

        let k = split.penultimate_boundary();
        let (feat, front_caches) = split.forward_blocks_t(&x, 0, k);
        let (rest, back_caches) = split.forward_blocks_t(&feat, k, 3);
        let (_, head_cache) = split.head_forward_t(&rest);
        let d_feat_last = split.head_backward(&d_logits, &head_cache, true);
        let d_feat = split.backward_blocks(&d_feat_last, &back_caches, k, true);
        let dx_split = split.backward_blocks(&d_feat, &front_caches, 0, true);

        assert!(grad_rel_error(&dx_full.into_dyn(), &dx_split.into_dyn()) < 1e-12);
        for ((na, pa), (_, pb)) in full
            .named_params_mut()
            .into_iter()
            .zip(split.named_params_mut())
        {
            assert!(
                grad_rel_error(&pa.grad, &pb.grad) < 1e-12,
                "{na} grads differ between split and full backward"
            );
        }
    }
}

//! Encoder/decoder generator with swappable conv and transformer encoders.
//!
//! Both encoders compress a 1×S×S image into a C×g×g latent grid. The
//! decoder conditions on the attribute target by concatenating it as a
//! constant channel plane, then upsamples back to image resolution with a
//! final tanh. The conv path keeps per-stage skip tensors; the transformer
//! path does not.

use ndarray::{concatenate, s, Array1, Array3, Array4, Axis};

use crate::nn::{
    leaky_relu, leaky_relu_backward, tanh_act, tanh_backward, BlockCache, Conv2d, ConvCache,
    ConvT2d, ConvTCache, LayerNorm, LayerNormCache, Linear, Param, TransformerBlock,
};
use crate::rng::stream_rng;
use crate::{Error, Result};

use super::types::{EncoderKind, GeneratorSpec};

const LEAKY_SLOPE: f64 = 0.2;
const INIT_SALT: u64 = 0x47_45_4e_49; // "GENI"

/// Encoder output: the latent feature grid plus any skip tensors the
/// decoder will consume (finest resolution first; empty for the
/// transformer path).
#[derive(Debug, Clone)]
pub struct Latent {
    pub grid: Array4<f64>,
    pub skips: Vec<Array4<f64>>,
}

fn grid_to_tokens(x: &Array4<f64>) -> Array3<f64> {
    let (b, c, g, _) = x.dim();
    x.view()
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((b, g * g, c))
        .unwrap()
}

fn tokens_to_grid(t: &Array3<f64>, g: usize) -> Array4<f64> {
    let (b, _n, c) = t.dim();
    t.to_owned()
        .into_shape_with_order((b, g, g, c))
        .unwrap()
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
}

// ---------------------------------------------------------------- encoders

#[derive(Debug, Clone)]
struct VitEncoder {
    lift: Conv2d,
    patch: Conv2d,
    cls: Param,
    pos: Param,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    grid: usize,
}

#[derive(Debug)]
pub(crate) struct VitCache {
    c_lift: ConvCache,
    c_patch: ConvCache,
    c_blocks: Vec<BlockCache>,
    c_norm: LayerNormCache,
}

impl VitEncoder {
    fn new(spec: &GeneratorSpec, rng: &mut impl rand::Rng) -> Self {
        let g = spec.latent_grid();
        let e = spec.embed_dim;
        let n_tokens = g * g;
        VitEncoder {
            lift: Conv2d::new(1, 3, 1, 1, 0, true, rng),
            patch: Conv2d::new(3, e, 16, 16, 0, true, rng),
            cls: Param::randn(&[1, e], 0.02, rng),
            pos: Param::randn(&[n_tokens + 1, e], 0.02, rng),
            blocks: (0..spec.depth)
                .map(|_| TransformerBlock::new(e, spec.heads, 4, rng))
                .collect(),
            norm: LayerNorm::new(e),
            grid: g,
        }
    }

    fn forward_t(&self, x: &Array4<f64>) -> (Array4<f64>, VitCache) {
        let b = x.dim().0;
        let e = self.cls.value.shape()[1];
        let n = self.grid * self.grid;
        let (lifted, c_lift) = self.lift.forward_t(x, true);
        let (pm, c_patch) = self.patch.forward_t(&lifted, true);
        let tokens = grid_to_tokens(&pm);

        let mut seq = Array3::zeros((b, n + 1, e));
        let cls_row = self
            .cls
            .value
            .view()
            .into_shape_with_order(e)
            .unwrap();
        for bi in 0..b {
            seq.slice_mut(s![bi, 0, ..]).assign(&cls_row);
        }
        seq.slice_mut(s![.., 1.., ..]).assign(&tokens);
        let pos = self
            .pos
            .value
            .view()
            .into_shape_with_order((n + 1, e))
            .unwrap();
        seq = seq + &pos.insert_axis(Axis(0));

        let mut c_blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (next, cache) = blk.forward_t(&seq);
            seq = next;
            c_blocks.push(cache);
        }
        let rows = seq
            .into_shape_with_order(((n + 1) * b, e))
            .unwrap();
        let (normed, c_norm) = self.norm.forward_t(&rows);
        let seq_n = normed.into_shape_with_order((b, n + 1, e)).unwrap();
        let out_tokens = seq_n.slice(s![.., 1.., ..]).to_owned();
        (
            tokens_to_grid(&out_tokens, self.grid),
            VitCache {
                c_lift,
                c_patch,
                c_blocks,
                c_norm,
            },
        )
    }

    fn backward(&mut self, d_grid: &Array4<f64>, cache: &VitCache) -> Array4<f64> {
        let (b, e, _g, _) = d_grid.dim();
        let n = self.grid * self.grid;
        let d_tokens = grid_to_tokens(d_grid);
        let mut d_seq = Array3::zeros((b, n + 1, e));
        d_seq.slice_mut(s![.., 1.., ..]).assign(&d_tokens);

        let d_rows = d_seq.into_shape_with_order((b * (n + 1), e)).unwrap();
        let d_pre_norm = self.norm.backward(&d_rows, &cache.c_norm);
        let mut d = d_pre_norm.into_shape_with_order((b, n + 1, e)).unwrap();
        for (blk, c) in self.blocks.iter_mut().zip(&cache.c_blocks).rev() {
            d = blk.backward(&d, c);
        }

        let d_pos = d.sum_axis(Axis(0));
        self.pos.grad += &d_pos.into_dyn();
        let d_cls = d.slice(s![.., 0, ..]).sum_axis(Axis(0));
        self.cls.grad += &d_cls
            .insert_axis(Axis(0))
            .into_dyn();

        let d_tok_in = d.slice(s![.., 1.., ..]).to_owned();
        let d_pm = tokens_to_grid(&d_tok_in, self.grid);
        let d_lifted = self.patch.backward(&d_pm, &cache.c_patch, true);
        self.lift.backward(&d_lifted, &cache.c_lift, true)
    }
}

#[derive(Debug, Clone)]
struct UnetEncoder {
    stages: Vec<Conv2d>,
}

#[derive(Debug)]
pub(crate) struct UnetCache {
    convs: Vec<ConvCache>,
    masks: Vec<Array4<f64>>,
}

impl UnetEncoder {
    fn new(spec: &GeneratorSpec, rng: &mut impl rand::Rng) -> Self {
        let mut stages = Vec::with_capacity(spec.depth);
        let mut c_in = 1;
        for &c_out in &spec.unet_channels {
            stages.push(Conv2d::new(c_in, c_out, 6, 2, 2, true, rng));
            c_in = c_out;
        }
        UnetEncoder { stages }
    }

    /// Returns (latent, skips, cache); skips are the post-activation
    /// tensors of every stage except the last.
    fn forward_t(&self, x: &Array4<f64>) -> (Array4<f64>, Vec<Array4<f64>>, UnetCache) {
        let mut h = x.clone();
        let mut convs = Vec::new();
        let mut masks = Vec::new();
        let mut acts = Vec::new();
        for stage in &self.stages {
            let (z, c) = stage.forward_t(&h, true);
            let (a, mask) = leaky_relu(&z, LEAKY_SLOPE);
            convs.push(c);
            masks.push(mask);
            acts.push(a.clone());
            h = a;
        }
        let latent = acts.pop().unwrap();
        (latent, acts, UnetCache { convs, masks })
    }

    fn backward(
        &mut self,
        d_latent: &Array4<f64>,
        d_skips: &[Array4<f64>],
        cache: &UnetCache,
    ) -> Array4<f64> {
        let depth = self.stages.len();
        let mut d_act = d_latent.clone();
        for i in (0..depth).rev() {
            if i < depth - 1 {
                d_act += &d_skips[i];
            }
            let dz = leaky_relu_backward(&d_act, &cache.masks[i]);
            d_act = self.stages[i].backward(&dz, &cache.convs[i], true);
        }
        d_act
    }
}

// ---------------------------------------------------------------- decoder

#[derive(Debug, Clone)]
struct Decoder {
    stages: Vec<ConvT2d>,
    use_skips: bool,
    latent_channels: usize,
}

#[derive(Debug)]
pub(crate) struct DecCache {
    convts: Vec<ConvTCache>,
    masks: Vec<Array4<f64>>,
    tanh_out: Array4<f64>,
    /// Channel count of the activation part at each mid-stage concat.
    splits: Vec<usize>,
}

impl Decoder {
    fn new(spec: &GeneratorSpec, rng: &mut impl rand::Rng) -> Self {
        let latent_c = spec.latent_channels();
        let n = spec.decoder_stages;
        let mut plan: Vec<(usize, usize)> = Vec::with_capacity(n);
        match spec.encoder_kind {
            EncoderKind::Vit => {
                let mut c_in = latent_c + 1;
                for j in 0..n {
                    let c_out = if j == n - 1 {
                        1
                    } else {
                        (latent_c >> (j + 1)).max(8)
                    };
                    plan.push((c_in, c_out));
                    c_in = c_out;
                }
            }
            EncoderKind::Unet => {
                let ch = &spec.unet_channels;
                let d = spec.depth;
                let mut c_in = latent_c + 1;
                for j in 0..n {
                    let c_out = if j == n - 1 { 1 } else { ch[d - 2 - j] };
                    plan.push((c_in, c_out));
                    c_in = if spec.skip_connections && j < n - 1 {
                        c_out * 2
                    } else {
                        c_out
                    };
                }
            }
        }
        Decoder {
            stages: plan
                .into_iter()
                .map(|(ci, co)| ConvT2d::new(ci, co, 6, 2, 2, true, rng))
                .collect(),
            use_skips: spec.skip_connections,
            latent_channels: latent_c,
        }
    }

    fn forward_t(
        &self,
        grid: &Array4<f64>,
        target: &Array1<f64>,
        skips: &[Array4<f64>],
    ) -> (Array4<f64>, DecCache) {
        let (b, _c, g, _) = grid.dim();
        let plane = Array4::from_shape_fn((b, 1, g, g), |(bi, _, _, _)| target[bi]);
        let mut h = concatenate(Axis(1), &[grid.view(), plane.view()]).unwrap();
        let n = self.stages.len();
        let mut convts = Vec::new();
        let mut masks = Vec::new();
        let mut splits = Vec::new();
        let mut out = Array4::zeros((0, 0, 0, 0));
        for (j, stage) in self.stages.iter().enumerate() {
            let (z, c) = stage.forward_t(&h, true);
            convts.push(c);
            if j == n - 1 {
                out = tanh_act(&z);
            } else {
                let (a, mask) = leaky_relu(&z, 0.0); // plain ReLU
                masks.push(mask);
                splits.push(a.dim().1);
                h = if self.use_skips {
                    let skip = &skips[skips.len() - 1 - j];
                    concatenate(Axis(1), &[a.view(), skip.view()]).unwrap()
                } else {
                    a
                };
            }
        }
        (
            out.clone(),
            DecCache {
                convts,
                masks,
                tanh_out: out,
                splits,
            },
        )
    }

    /// Returns the gradient w.r.t. the latent grid and each skip tensor
    /// (indexed like the encoder's skips). The attribute plane is an
    /// input, so its gradient is dropped.
    fn backward(
        &mut self,
        d_img: &Array4<f64>,
        cache: &DecCache,
    ) -> (Array4<f64>, Vec<Array4<f64>>) {
        let n = self.stages.len();
        let mut d_skips: Vec<Array4<f64>> = vec![Array4::zeros((0, 0, 0, 0)); n - 1];
        let dz = tanh_backward(d_img, &cache.tanh_out);
        let mut d_h = self.stages[n - 1].backward(&dz, &cache.convts[n - 1], true);
        for j in (0..n - 1).rev() {
            let d_a = if self.use_skips {
                let split = cache.splits[j];
                let d_a = d_h.slice(s![.., ..split, .., ..]).to_owned();
                d_skips[n - 2 - j] = d_h.slice(s![.., split.., .., ..]).to_owned();
                d_a
            } else {
                d_h.clone()
            };
            let dz = leaky_relu_backward(&d_a, &cache.masks[j]);
            d_h = self.stages[j].backward(&dz, &cache.convts[j], true);
        }
        let d_grid = d_h
            .slice(s![.., ..self.latent_channels, .., ..])
            .to_owned();
        (d_grid, d_skips)
    }
}

// --------------------------------------------------------------- generator

#[derive(Debug, Clone)]
enum Encoder {
    Vit(VitEncoder),
    Unet(UnetEncoder),
}

#[derive(Debug)]
pub(crate) enum EncCache {
    Vit(VitCache),
    Unet(UnetCache),
}

pub(crate) struct DecodeCache(DecCache);

/// The attribute-editing generator.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    enc: Encoder,
    dec: Decoder,
}

impl Generator {
    /// Builds a freshly initialized generator; initialization is
    /// deterministic in `seed`.
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, INIT_SALT);
        let enc = match spec.encoder_kind {
            EncoderKind::Vit => Encoder::Vit(VitEncoder::new(&spec, &mut rng)),
            EncoderKind::Unet => Encoder::Unet(UnetEncoder::new(&spec, &mut rng)),
        };
        let dec = Decoder::new(&spec, &mut rng);
        Ok(Generator { spec, enc, dec })
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_b, c, h, w) = x.dim();
        if c != 1 || h != self.spec.image_size || w != self.spec.image_size {
            return Err(Error::ShapeError(format!(
                "expected 1x{s}x{s} input, got {c}x{h}x{w}",
                s = self.spec.image_size
            )));
        }
        Ok(())
    }

    /// Compresses images to the latent grid (plus skips for the conv path).
    pub fn encode(&self, x: &Array4<f64>) -> Result<Latent> {
        Ok(self.encode_t(x)?.0)
    }

    pub(crate) fn encode_t(&self, x: &Array4<f64>) -> Result<(Latent, EncCache)> {
        self.check_input(x)?;
        match &self.enc {
            Encoder::Vit(v) => {
                let (grid, cache) = v.forward_t(x);
                Ok((
                    Latent {
                        grid,
                        skips: Vec::new(),
                    },
                    EncCache::Vit(cache),
                ))
            }
            Encoder::Unet(u) => {
                let (grid, skips, cache) = u.forward_t(x);
                Ok((Latent { grid, skips }, EncCache::Unet(cache)))
            }
        }
    }

    fn check_latent(&self, latent: &Latent, target: &Array1<f64>) -> Result<()> {
        let (b, c, gh, gw) = latent.grid.dim();
        let g = self.spec.latent_grid();
        if c != self.spec.latent_channels() || gh != g || gw != g {
            return Err(Error::ShapeError(format!(
                "latent grid {c}x{gh}x{gw} does not match spec {}x{g}x{g}",
                self.spec.latent_channels()
            )));
        }
        if target.len() != b {
            return Err(Error::ShapeError(format!(
                "{} attribute targets for a batch of {b}",
                target.len()
            )));
        }
        if self.dec.use_skips {
            if latent.skips.len() != self.spec.depth - 1 {
                return Err(Error::ShapeError(format!(
                    "expected {} skip tensors, got {}",
                    self.spec.depth - 1,
                    latent.skips.len()
                )));
            }
            for (i, skip) in latent.skips.iter().enumerate() {
                let side = self.spec.image_size >> (i + 1);
                let want = (b, self.spec.unet_channels[i], side, side);
                if skip.dim() != want {
                    return Err(Error::ShapeError(format!(
                        "skip {i} has shape {:?}, expected {:?}",
                        skip.dim(),
                        want
                    )));
                }
            }
        }
        debug_assert!(target.iter().all(|t| (0.0..=1.0).contains(t)));
        Ok(())
    }

    /// Decodes a latent into an image conditioned on per-sample attribute
    /// targets in [0,1]. Output values lie in [-1,1].
    pub fn decode(&self, latent: &Latent, target: &Array1<f64>) -> Result<Array4<f64>> {
        Ok(self.decode_t(latent, target)?.0)
    }

    pub(crate) fn decode_t(
        &self,
        latent: &Latent,
        target: &Array1<f64>,
    ) -> Result<(Array4<f64>, DecodeCache)> {
        self.check_latent(latent, target)?;
        let (img, cache) = self.dec.forward_t(&latent.grid, target, &latent.skips);
        Ok((img, DecodeCache(cache)))
    }

    /// encode → decode in one call.
    pub fn edit(&self, x: &Array4<f64>, target: &Array1<f64>) -> Result<Array4<f64>> {
        let latent = self.encode(x)?;
        self.decode(&latent, target)
    }

    pub(crate) fn decode_backward(
        &mut self,
        d_img: &Array4<f64>,
        cache: &DecodeCache,
    ) -> (Array4<f64>, Vec<Array4<f64>>) {
        self.dec.backward(d_img, &cache.0)
    }

    pub(crate) fn encode_backward(
        &mut self,
        d_grid: &Array4<f64>,
        d_skips: &[Array4<f64>],
        cache: &EncCache,
    ) -> Array4<f64> {
        match (&mut self.enc, cache) {
            (Encoder::Vit(v), EncCache::Vit(c)) => v.backward(d_grid, c),
            (Encoder::Unet(u), EncCache::Unet(c)) => u.backward(d_grid, d_skips, c),
            _ => unreachable!("cache kind matches encoder kind"),
        }
    }

    /// Stable-ordered (name, parameter) pairs for optimization and
    /// checkpointing.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = Vec::new();
        match &mut self.enc {
            Encoder::Vit(v) => {
                push_conv(&mut out, "enc.lift", &mut v.lift);
                push_conv(&mut out, "enc.patch", &mut v.patch);
                out.push(("enc.cls".into(), &mut v.cls));
                out.push(("enc.pos".into(), &mut v.pos));
                for (i, blk) in v.blocks.iter_mut().enumerate() {
                    let p = format!("enc.block{i}");
                    out.push((format!("{p}.ln1.gamma"), &mut blk.ln1.gamma));
                    out.push((format!("{p}.ln1.beta"), &mut blk.ln1.beta));
                    push_linear(&mut out, &format!("{p}.attn.wq"), &mut blk.attn.wq);
                    push_linear(&mut out, &format!("{p}.attn.wk"), &mut blk.attn.wk);
                    push_linear(&mut out, &format!("{p}.attn.wv"), &mut blk.attn.wv);
                    push_linear(&mut out, &format!("{p}.attn.wo"), &mut blk.attn.wo);
                    out.push((format!("{p}.ln2.gamma"), &mut blk.ln2.gamma));
                    out.push((format!("{p}.ln2.beta"), &mut blk.ln2.beta));
                    push_linear(&mut out, &format!("{p}.fc1"), &mut blk.fc1);
                    push_linear(&mut out, &format!("{p}.fc2"), &mut blk.fc2);
                }
                out.push(("enc.norm.gamma".into(), &mut v.norm.gamma));
                out.push(("enc.norm.beta".into(), &mut v.norm.beta));
            }
            Encoder::Unet(u) => {
                for (i, stage) in u.stages.iter_mut().enumerate() {
                    push_conv(&mut out, &format!("enc.stage{i}"), stage);
                }
            }
        }
        for (j, stage) in self.dec.stages.iter_mut().enumerate() {
            let p = format!("dec.stage{j}");
            out.push((format!("{p}.w"), &mut stage.w));
            if let Some(b) = &mut stage.b {
                out.push((format!("{p}.b"), b));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

fn push_conv<'a>(out: &mut Vec<(String, &'a mut Param)>, prefix: &str, c: &'a mut Conv2d) {
    out.push((format!("{prefix}.w"), &mut c.w));
    if let Some(b) = &mut c.b {
        out.push((format!("{prefix}.b"), b));
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a mut Param)>, prefix: &str, l: &'a mut Linear) {
    out.push((format!("{prefix}.w"), &mut l.w));
    if let Some(b) = &mut l.b {
        out.push((format!("{prefix}.b"), b));
    }
}

//! Multi-head self-attention and the pre-norm transformer block.

use ndarray::{s, Array2, Array3, Array4};

use super::{
    gelu, gelu_backward, softmax_lastdim, softmax_lastdim_backward, LayerNorm, LayerNormCache,
    Linear, LinearCache, Param,
};

fn rows(x: &Array3<f64>) -> Array2<f64> {
    let (b, n, e) = x.dim();
    x.view()
        .into_shape_with_order((b * n, e))
        .unwrap()
        .to_owned()
}

fn tokens(x: &Array2<f64>, b: usize, n: usize) -> Array3<f64> {
    let e = x.ncols();
    x.view()
        .into_shape_with_order((b, n, e))
        .unwrap()
        .to_owned()
}

/// Scaled dot-product self-attention over token sequences [B, N, E].
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

#[derive(Debug)]
pub struct MhsaCache {
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    q: Array3<f64>,
    k: Array3<f64>,
    v: Array3<f64>,
    attn: Array4<f64>,
    c_out: LinearCache,
}

impl MultiHeadAttention {
    pub fn new(embed: usize, heads: usize, rng: &mut impl rand::Rng) -> Self {
        assert!(embed % heads == 0, "head count must divide embed dim");
        MultiHeadAttention {
            wq: Linear::new(embed, embed, true, rng),
            wk: Linear::new(embed, embed, true, rng),
            wv: Linear::new(embed, embed, true, rng),
            wo: Linear::new(embed, embed, true, rng),
            heads,
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_t(x).0
    }

    pub fn forward_t(&self, x: &Array3<f64>) -> (Array3<f64>, MhsaCache) {
        let (b, n, e) = x.dim();
        let dh = e / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let xr = rows(x);
        let (qr, cq) = self.wq.forward_t(&xr, true);
        let (kr, ck) = self.wk.forward_t(&xr, true);
        let (vr, cv) = self.wv.forward_t(&xr, true);
        let q = tokens(&qr, b, n);
        let k = tokens(&kr, b, n);
        let v = tokens(&vr, b, n);

        let mut attn = Array4::zeros((b, self.heads, n, n));
        let mut concat = Array3::zeros((b, n, e));
        for bi in 0..b {
            for h in 0..self.heads {
                let span = s![bi, .., h * dh..(h + 1) * dh];
                let qh = q.slice(span);
                let kh = k.slice(span);
                let vh = v.slice(span);
                let scores = qh.dot(&kh.t()) * scale;
                let a = softmax_lastdim(&scores);
                concat.slice_mut(span).assign(&a.dot(&vh));
                attn.slice_mut(s![bi, h, .., ..]).assign(&a);
            }
        }
        let (out, c_out) = self.wo.forward_t(&rows(&concat), true);
        (
            tokens(&out, b, n),
            MhsaCache {
                cq,
                ck,
                cv,
                q,
                k,
                v,
                attn,
                c_out,
            },
        )
    }

    pub fn backward(&mut self, dy: &Array3<f64>, cache: &MhsaCache) -> Array3<f64> {
        let (b, n, e) = dy.dim();
        let dh = e / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = tokens(&self.wo.backward(&rows(dy), &cache.c_out, true), b, n);

        let mut dq = Array3::zeros((b, n, e));
        let mut dk = Array3::zeros((b, n, e));
        let mut dv = Array3::zeros((b, n, e));
        for bi in 0..b {
            for h in 0..self.heads {
                let span = s![bi, .., h * dh..(h + 1) * dh];
                let dout = dconcat.slice(span);
                let a = cache.attn.slice(s![bi, h, .., ..]).to_owned();
                let qh = cache.q.slice(span);
                let kh = cache.k.slice(span);
                let vh = cache.v.slice(span);

                let da = dout.dot(&vh.t());
                dv.slice_mut(span).assign(&a.t().dot(&dout));
                let dscores = softmax_lastdim_backward(&da, &a);
                dq.slice_mut(span).assign(&(dscores.dot(&kh) * scale));
                dk.slice_mut(span).assign(&(dscores.t().dot(&qh) * scale));
            }
        }
        let dx = self.wq.backward(&rows(&dq), &cache.cq, true)
            + self.wk.backward(&rows(&dk), &cache.ck, true)
            + self.wv.backward(&rows(&dv), &cache.cv, true);
        tokens(&dx, b, n)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.wq.params_mut();
        ps.extend(self.wk.params_mut());
        ps.extend(self.wv.params_mut());
        ps.extend(self.wo.params_mut());
        ps
    }
}

/// Pre-norm transformer encoder block: attention and a GELU MLP, both
/// residual.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug)]
pub struct BlockCache {
    c_ln1: LayerNormCache,
    c_attn: MhsaCache,
    c_ln2: LayerNormCache,
    c_fc1: LinearCache,
    gelu_dydx: Array2<f64>,
    c_fc2: LinearCache,
}

impl TransformerBlock {
    pub fn new(embed: usize, heads: usize, mlp_ratio: usize, rng: &mut impl rand::Rng) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(embed),
            attn: MultiHeadAttention::new(embed, heads, rng),
            ln2: LayerNorm::new(embed),
            fc1: Linear::new(embed, embed * mlp_ratio, true, rng),
            fc2: Linear::new(embed * mlp_ratio, embed, true, rng),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_t(x).0
    }

    pub fn forward_t(&self, x: &Array3<f64>) -> (Array3<f64>, BlockCache) {
        let (b, n, _e) = x.dim();
        let (h1, c_ln1) = self.ln1.forward_t(&rows(x));
        let (a, c_attn) = self.attn.forward_t(&tokens(&h1, b, n));
        let x1 = x + &a;
        let (h2, c_ln2) = self.ln2.forward_t(&rows(&x1));
        let (m1, c_fc1) = self.fc1.forward_t(&h2, true);
        let (g, gelu_dydx) = gelu(&m1);
        let (m2, c_fc2) = self.fc2.forward_t(&g, true);
        let y = &x1 + &tokens(&m2, b, n);
        (
            y,
            BlockCache {
                c_ln1,
                c_attn,
                c_ln2,
                c_fc1,
                gelu_dydx,
                c_fc2,
            },
        )
    }

    pub fn backward(&mut self, dy: &Array3<f64>, cache: &BlockCache) -> Array3<f64> {
        let (b, n, _e) = dy.dim();
        let dg = self.fc2.backward(&rows(dy), &cache.c_fc2, true);
        let dm1 = gelu_backward(&dg, &cache.gelu_dydx);
        let dh2 = self.fc1.backward(&dm1, &cache.c_fc1, true);
        let dx1 = dy + &tokens(&self.ln2.backward(&dh2, &cache.c_ln2), b, n);

        let dh1 = self.attn.backward(&dx1, &cache.c_attn);
        &dx1 + &tokens(&self.ln1.backward(&rows(&dh1), &cache.c_ln1), b, n)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.ln1.params_mut();
        ps.extend(self.attn.params_mut());
        ps.extend(self.ln2.params_mut());
        ps.extend(self.fc1.params_mut());
        ps.extend(self.fc2.params_mut());
        ps
    }
}

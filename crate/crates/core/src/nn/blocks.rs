//! Shared sub-networks. Sequences are `[channels, time]`.

use rand::Rng;
use voxclone_tensor::layers::{ChannelNorm, Conv1d, Init};
use voxclone_tensor::{Graph, ParamStore, Var};

use crate::{Real, Result};

/// Pre-norm transformer block: multi-head self-attention then a
/// convolutional feed-forward, each with a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: ChannelNorm,
    q: Conv1d,
    k: Conv1d,
    v: Conv1d,
    o: Conv1d,
    norm2: ChannelNorm,
    ff1: Conv1d,
    ff2: Conv1d,
    n_heads: usize,
}

impl TransformerBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        ffn_kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm1: ChannelNorm::new(store, &format!("{name}.norm1"), dim)?,
            q: Conv1d::pointwise(store, &format!("{name}.q"), dim, dim, Init::FanIn, rng)?,
            k: Conv1d::pointwise(store, &format!("{name}.k"), dim, dim, Init::FanIn, rng)?,
            v: Conv1d::pointwise(store, &format!("{name}.v"), dim, dim, Init::FanIn, rng)?,
            o: Conv1d::pointwise(store, &format!("{name}.o"), dim, dim, Init::FanIn, rng)?,
            norm2: ChannelNorm::new(store, &format!("{name}.norm2"), dim)?,
            ff1: Conv1d::same(store, &format!("{name}.ff1"), dim, ffn_dim, ffn_kernel, 1, Init::FanIn, rng)?,
            ff2: Conv1d::same(store, &format!("{name}.ff2"), ffn_dim, dim, ffn_kernel, 1, Init::FanIn, rng)?,
            n_heads,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let (dim, _) = g.shape(x);
        let dh = dim / self.n_heads;
        let scale = T::one() / T::lit((dh as f64).sqrt());

        let h = self.norm1.forward(g, store, x);
        let q = self.q.forward(g, store, h);
        let k = self.k.forward(g, store, h);
        let v = self.v.forward(g, store, h);
        let mut heads = Vec::with_capacity(self.n_heads);
        for i in 0..self.n_heads {
            let qh = g.slice_rows(q, i * dh, dh);
            let kh = g.slice_rows(k, i * dh, dh);
            let vh = g.slice_rows(v, i * dh, dh);
            // scores[t, s] = q_t · k_s
            let scores = g.matmul_t(qh, true, kh, false);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul_t(vh, false, attn, true));
        }
        let att = if heads.len() == 1 { heads[0] } else { g.concat_rows(&heads) };
        let att = self.o.forward(g, store, att);
        let x = g.add(x, att);

        let h = self.norm2.forward(g, store, x);
        let h = self.ff1.forward(g, store, h);
        let h = g.relu(h);
        let h = self.ff2.forward(g, store, h);
        g.add(x, h)
    }
}

/// Non-causal WaveNet stack: dilated convolutions with tanh·sigmoid gates,
/// globally conditioned on a `[cond_dim, 1]` vector. Returns the skip sum.
#[derive(Debug, Clone)]
pub struct WaveNet {
    in_layers: Vec<Conv1d>,
    res_skip: Vec<Conv1d>,
    cond: Conv1d,
    channels: usize,
}

impl WaveNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        dilation_rate: usize,
        layers: usize,
        cond_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut in_layers = Vec::with_capacity(layers);
        let mut res_skip = Vec::with_capacity(layers);
        for i in 0..layers {
            let d = dilation_rate.pow(i as u32);
            in_layers.push(Conv1d::same(
                store,
                &format!("{name}.in{i}"),
                channels,
                2 * channels,
                kernel,
                d,
                Init::FanIn,
                rng,
            )?);
            let out = if i + 1 < layers { 2 * channels } else { channels };
            res_skip.push(Conv1d::pointwise(store, &format!("{name}.rs{i}"), channels, out, Init::FanIn, rng)?);
        }
        let cond = Conv1d::pointwise(
            store,
            &format!("{name}.cond"),
            cond_dim,
            2 * channels * layers,
            Init::FanIn,
            rng,
        )?;
        Ok(Self {
            in_layers,
            res_skip,
            cond,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, cond: Var) -> Var {
        let c = self.channels;
        let cond_all = self.cond.forward(g, store, cond);
        let mut x = x;
        let mut skip: Option<Var> = None;
        let n = self.in_layers.len();
        for i in 0..n {
            let h = self.in_layers[i].forward(g, store, x);
            let gc = g.slice_rows(cond_all, 2 * c * i, 2 * c);
            let h = g.add(h, gc);
            let a = g.slice_rows(h, 0, c);
            let b = g.slice_rows(h, c, c);
            let a = g.tanh(a);
            let b = g.sigmoid(b);
            let acts = g.mul(a, b);
            let rs = self.res_skip[i].forward(g, store, acts);
            let s = if i + 1 < n {
                let res = g.slice_rows(rs, 0, c);
                x = g.add(x, res);
                g.slice_rows(rs, c, c)
            } else {
                rs
            };
            skip = Some(match skip {
                Some(acc) => g.add(acc, s),
                None => s,
            });
        }
        skip.expect("at least one layer")
    }
}

/// Residual stack of dilated convolutions (dilation `kernel^i`) with channel norm.
#[derive(Debug, Clone)]
pub struct DilatedConvStack {
    convs: Vec<Conv1d>,
    norms: Vec<ChannelNorm>,
}

impl DilatedConvStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..layers {
            let d = kernel.pow(i as u32);
            convs.push(Conv1d::same(
                store,
                &format!("{name}.conv{i}"),
                channels,
                channels,
                kernel,
                d,
                Init::FanIn,
                rng,
            )?);
            norms.push(ChannelNorm::new(store, &format!("{name}.norm{i}"), channels)?);
        }
        Ok(Self { convs, norms })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut x = x;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let h = conv.forward(g, store, x);
            let h = norm.forward(g, store, h);
            let h = g.relu(h);
            x = g.add(x, h);
        }
        x
    }
}

/// Clamps to `[lo, hi]` with pass-through gradient inside the band.
pub(crate) fn clamp<T: Real>(g: &mut Graph<T>, x: Var, lo: f64, hi: f64) -> Var {
    let a = g.clamp_min(x, T::lit(lo));
    let n = g.neg(a);
    let b = g.clamp_min(n, T::lit(-hi));
    g.neg(b)
}

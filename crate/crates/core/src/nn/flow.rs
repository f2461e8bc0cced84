use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init};
use voxclone_tensor::{Graph, ParamStore, Var};

use super::blocks::{TransformerBlock, WaveNet};
use super::ModelConfig;
use crate::{Real, Result};

/// Affine coupling over the second half of the channels. The conditioner
/// is a residual transformer block followed by a speaker-conditioned
/// WaveNet; its output projection starts at zero.
#[derive(Debug, Clone)]
pub struct AffineCoupling {
    pre: Conv1d,
    attn: TransformerBlock,
    wn: WaveNet,
    post: Conv1d,
    half: usize,
}

impl AffineCoupling {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let half = cfg.latent_dim / 2;
        let h = cfg.hidden_dim;
        Ok(Self {
            pre: Conv1d::pointwise(store, &format!("{name}.pre"), half, h, Init::FanIn, rng)?,
            attn: TransformerBlock::new(
                store,
                &format!("{name}.attn"),
                h,
                cfg.n_heads,
                cfg.ffn_dim,
                cfg.ffn_kernel,
                rng,
            )?,
            wn: WaveNet::new(
                store,
                &format!("{name}.wn"),
                h,
                cfg.flow_kernel,
                1,
                cfg.flow_wn_layers,
                cfg.spk_emb_dim,
                rng,
            )?,
            post: Conv1d::pointwise(store, &format!("{name}.post"), h, 2 * half, Init::Zeros, rng)?,
            half,
        })
    }

    pub fn post(&self) -> &Conv1d {
        &self.post
    }

    /// Returns the transformed sequence and its log-determinant (`[1, 1]`).
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        spk: Var,
        reverse: bool,
    ) -> (Var, Var) {
        let c = self.half;
        let x0 = g.slice_rows(x, 0, c);
        let x1 = g.slice_rows(x, c, c);
        let h = self.pre.forward(g, store, x0);
        let h = self.attn.forward(g, store, h);
        let h = self.wn.forward(g, store, h, spk);
        let stats = self.post.forward(g, store, h);
        let m = g.slice_rows(stats, 0, c);
        let logs = g.slice_rows(stats, c, c);
        let ld = g.sum(logs);
        let (y1, ld) = if reverse {
            let d = g.sub(x1, m);
            let nl = g.neg(logs);
            let s = g.exp(nl);
            (g.mul(d, s), g.neg(ld))
        } else {
            let s = g.exp(logs);
            let y = g.mul(x1, s);
            (g.add(m, y), ld)
        };
        (g.concat_rows(&[x0, y1]), ld)
    }
}

/// Stack of `[coupling, channel flip]` steps mapping posterior latents to
/// the prior space.
#[derive(Debug, Clone)]
pub struct Flow {
    steps: Vec<AffineCoupling>,
}

impl Flow {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let steps = (0..cfg.n_flow_steps)
            .map(|i| AffineCoupling::new(store, &format!("{name}.step{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[AffineCoupling] {
        &self.steps
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var, spk: Var) -> (Var, Var) {
        let mut x = z;
        let mut logdet = g.constant(voxclone_tensor::Tensor::scalar(T::zero()));
        for step in &self.steps {
            let (y, ld) = step.apply(g, store, x, spk, false);
            logdet = g.add(logdet, ld);
            x = g.reverse_rows(y);
        }
        (x, logdet)
    }

    pub fn inverse<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, fz: Var, spk: Var) -> (Var, Var) {
        let mut x = fz;
        let mut logdet = g.constant(voxclone_tensor::Tensor::scalar(T::zero()));
        for step in self.steps.iter().rev() {
            let y = g.reverse_rows(x);
            let (y, ld) = step.apply(g, store, y, spk, true);
            logdet = g.add(logdet, ld);
            x = y;
        }
        (x, logdet)
    }
}

use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init};
use voxclone_tensor::{Graph, ParamStore, Var};

use super::blocks::{clamp, WaveNet};
use super::ModelConfig;
use crate::{Real, Result};

pub const LOGSTD_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub z: Var,
    pub mean: Var,
    pub logstd: Var,
}

/// Linear spectrogram → latent sequence through a speaker-conditioned WaveNet.
#[derive(Debug, Clone)]
pub struct PosteriorEncoder {
    pre: Conv1d,
    wn: WaveNet,
    proj: Conv1d,
    latent_dim: usize,
}

impl PosteriorEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let h = cfg.hidden_dim;
        Ok(Self {
            pre: Conv1d::pointwise(store, &format!("{name}.pre"), cfg.n_bins(), h, Init::FanIn, rng)?,
            wn: WaveNet::new(
                store,
                &format!("{name}.wn"),
                h,
                cfg.posterior_kernel,
                1,
                cfg.posterior_layers,
                cfg.spk_emb_dim,
                rng,
            )?,
            proj: Conv1d::pointwise(store, &format!("{name}.proj"), h, 2 * cfg.latent_dim, Init::FanIn, rng)?,
            latent_dim: cfg.latent_dim,
        })
    }

    /// `spec` is `[F, T]`, `noise` is `[latent_dim, T]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        spec: Var,
        spk: Var,
        noise: Var,
    ) -> LatentVars {
        // magnitudes span several orders; compress before the first projection
        let x = g.affine(spec, T::one(), T::one());
        let x = g.log(x);
        let x = self.pre.forward(g, store, x);
        let x = self.wn.forward(g, store, x, spk);
        let stats = self.proj.forward(g, store, x);
        let c = self.latent_dim;
        let mean = g.slice_rows(stats, 0, c);
        let logstd = g.slice_rows(stats, c, c);
        let logstd = clamp(g, logstd, -LOGSTD_BOUND, LOGSTD_BOUND);
        let std = g.exp(logstd);
        let e = g.mul(std, noise);
        let z = g.add(mean, e);
        LatentVars { z, mean, logstd }
    }
}

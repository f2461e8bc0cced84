use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init, Upsample1d};
use voxclone_tensor::{Graph, ParamStore, Var};

use super::ModelConfig;
use crate::{Real, Result};

const SLOPE: f64 = 0.1;

/// Residual block: one dilated convolution per dilation, each on a leaky-ReLU input.
#[derive(Debug, Clone)]
struct ResBlock {
    convs: Vec<Conv1d>,
}

impl ResBlock {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut x = x;
        for conv in &self.convs {
            let h = g.leaky_relu(x, T::lit(SLOPE));
            let h = conv.forward(g, store, h);
            x = g.add(x, h);
        }
        x
    }
}

#[derive(Debug, Clone)]
struct Stage {
    up: Upsample1d,
    blocks: Vec<ResBlock>,
}

/// Upsampling generator from latent frames to samples, `[latent, T] → [1, T·hop]`,
/// with multi-receptive-field residual blocks and a tanh output.
#[derive(Debug, Clone)]
pub struct Vocoder {
    pre: Conv1d,
    cond: Conv1d,
    stages: Vec<Stage>,
    post: Conv1d,
}

impl Vocoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let init = Init::Normal(0.01);
        let mut ch = cfg.vocoder_channels;
        let pre = Conv1d::same(store, &format!("{name}.pre"), cfg.latent_dim, ch, 7, 1, Init::FanIn, rng)?;
        let cond = Conv1d::pointwise(store, &format!("{name}.cond"), cfg.spk_emb_dim, ch, Init::FanIn, rng)?;
        let mut stages = Vec::new();
        for (i, &f) in cfg.upsample_factors.iter().enumerate() {
            let up = Upsample1d::new(store, &format!("{name}.up{i}"), ch, ch / 2, f, init, rng)?;
            ch /= 2;
            let blocks = cfg
                .resblock_kernels
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    let convs = cfg
                        .resblock_dilations
                        .iter()
                        .enumerate()
                        .map(|(l, &d)| {
                            Conv1d::same(store, &format!("{name}.res{i}.{j}.{l}"), ch, ch, k, d, init, rng)
                        })
                        .collect::<voxclone_tensor::Result<_>>()?;
                    Ok(ResBlock { convs })
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { up, blocks });
        }
        let post = Conv1d::same(store, &format!("{name}.post"), ch, 1, 7, 1, init, rng)?;
        Ok(Self {
            pre,
            cond,
            stages,
            post,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var, spk: Var) -> Var {
        let x = self.pre.forward(g, store, z);
        let s = self.cond.forward(g, store, spk);
        let mut x = g.add(x, s);
        for stage in &self.stages {
            let h = g.leaky_relu(x, T::lit(SLOPE));
            let h = stage.up.forward(g, store, h);
            let mut acc: Option<Var> = None;
            for b in &stage.blocks {
                let y = b.forward(g, store, h);
                acc = Some(match acc {
                    Some(a) => g.add(a, y),
                    None => y,
                });
            }
            x = g.scale(acc.expect("resblocks"), T::one() / T::lit(stage.blocks.len() as f64));
        }
        let x = g.leaky_relu(x, T::lit(0.01));
        let x = self.post.forward(g, store, x);
        g.tanh(x)
    }
}

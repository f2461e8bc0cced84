use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init};
use voxclone_tensor::{Graph, ParamStore, Tensor, Var};

use super::ModelConfig;
use crate::{Real, Result};

const SLOPE: f64 = 0.1;

/// Outputs of one sub-discriminator: score maps and intermediate activations.
#[derive(Debug, Clone, Default)]
pub struct DiscOutput {
    pub logits: Vec<Var>,
    pub fmaps: Vec<Var>,
}

#[derive(Debug, Clone)]
struct ConvStack {
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ConvStack {
    fn run<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, out: &mut DiscOutput) {
        let mut x = x;
        for c in &self.convs {
            let h = c.forward(g, store, x);
            x = g.leaky_relu(h, T::lit(SLOPE));
            out.fmaps.push(x);
        }
        let y = self.post.forward(g, store, x);
        out.fmaps.push(y);
        out.logits.push(y);
    }
}

fn conv<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    rng: &mut R,
) -> Result<Conv1d> {
    Ok(Conv1d::with_padding(
        store,
        &name,
        cin,
        cout,
        k,
        1,
        stride,
        (k / 2, k / 2),
        Init::FanIn,
        rng,
    )?)
}

/// Views the waveform as `period` interleaved phases and scores each with
/// shared convolutions.
#[derive(Debug, Clone)]
struct PeriodDisc {
    period: usize,
    stack: ConvStack,
}

impl PeriodDisc {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, y: Var) -> DiscOutput {
        let p = self.period;
        let n = g.shape(y).1;
        let y = if !n.is_multiple_of(p) {
            let z = g.constant(Tensor::zeros(1, p - n % p));
            g.concat_cols(&[y, z])
        } else {
            y
        };
        let len = g.shape(y).1 / p;
        let mut out = DiscOutput::default();
        for phase in 0..p {
            let idx: Vec<usize> = (0..len).map(|k| phase + k * p).collect();
            let x = g.gather_cols(y, &idx);
            self.stack.run(g, store, x, &mut out);
        }
        out
    }
}

/// Scores the waveform after `pools` rounds of 4-tap average pooling (stride 2).
#[derive(Debug, Clone)]
struct ScaleDisc {
    pools: usize,
    stack: ConvStack,
}

impl ScaleDisc {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, y: Var) -> DiscOutput {
        let mut x = y;
        for _ in 0..self.pools {
            let cols = g.im2col(x, 4, 1, 2, 2, 2);
            let s = g.col_sums(cols);
            x = g.scale(s, T::lit(0.25));
        }
        let mut out = DiscOutput::default();
        self.stack.run(g, store, x, &mut out);
        out
    }
}

/// Multi-period plus multi-scale waveform discriminators.
#[derive(Debug, Clone)]
pub struct Discriminators {
    periods: Vec<PeriodDisc>,
    scales: Vec<ScaleDisc>,
}

impl Discriminators {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c1 = cfg.disc_channels;
        let c2 = 2 * c1;
        let mut periods = Vec::new();
        for &p in &cfg.disc_periods {
            let n = format!("{name}.p{p}");
            periods.push(PeriodDisc {
                period: p,
                stack: ConvStack {
                    convs: vec![
                        conv(store, format!("{n}.c0"), 1, c1, 5, 3, rng)?,
                        conv(store, format!("{n}.c1"), c1, c2, 5, 3, rng)?,
                        conv(store, format!("{n}.c2"), c2, c2, 5, 1, rng)?,
                    ],
                    post: conv(store, format!("{n}.post"), c2, 1, 3, 1, rng)?,
                },
            });
        }
        let mut scales = Vec::new();
        for s in 0..cfg.msd_scales {
            let n = format!("{name}.s{s}");
            scales.push(ScaleDisc {
                pools: s,
                stack: ConvStack {
                    convs: vec![
                        conv(store, format!("{n}.c0"), 1, c1, 15, 1, rng)?,
                        conv(store, format!("{n}.c1"), c1, c2, 11, 4, rng)?,
                        conv(store, format!("{n}.c2"), c2, c2, 11, 4, rng)?,
                        conv(store, format!("{n}.c3"), c2, c2, 5, 1, rng)?,
                    ],
                    post: conv(store, format!("{n}.post"), c2, 1, 3, 1, rng)?,
                },
            });
        }
        Ok(Self { periods, scales })
    }

    /// `y` is a `[1, N]` waveform.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, y: Var) -> Vec<DiscOutput> {
        let mut outs: Vec<DiscOutput> = self.periods.iter().map(|d| d.forward(g, store, y)).collect();
        outs.extend(self.scales.iter().map(|d| d.forward(g, store, y)));
        outs
    }
}

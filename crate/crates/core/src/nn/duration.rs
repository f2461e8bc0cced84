use std::f64::consts::PI;

use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init};
use voxclone_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::blocks::DilatedConvStack;
use super::ModelConfig;
use crate::{Error, Real, Result};

/// Per-channel affine map on a 2-channel sequence.
#[derive(Debug, Clone)]
struct ElementwiseAffine {
    m: ParamId,
    logs: ParamId,
}

impl ElementwiseAffine {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str) -> Result<Self> {
        Ok(Self {
            m: store.register(format!("{name}.m"), Tensor::zeros(2, 1))?,
            logs: store.register(format!("{name}.logs"), Tensor::zeros(2, 1))?,
        })
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, reverse: bool) -> (Var, Var) {
        let (_, t) = g.shape(x);
        let m = g.param(store, self.m);
        let logs = g.param(store, self.logs);
        let ld = g.sum(logs);
        let ld = g.scale(ld, T::lit(t as f64));
        if reverse {
            let d = g.sub(x, m);
            let nl = g.neg(logs);
            let s = g.exp(nl);
            (g.mul(d, s), g.neg(ld))
        } else {
            let s = g.exp(logs);
            let y = g.mul(x, s);
            (g.add(y, m), ld)
        }
    }
}

/// Affine coupling on a 2-channel sequence, channel 1 transformed given channel 0.
#[derive(Debug, Clone)]
struct ScalarCoupling {
    pre: Conv1d,
    convs: DilatedConvStack,
    proj: Conv1d,
}

impl ScalarCoupling {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let c = cfg.dp_channels;
        Ok(Self {
            pre: Conv1d::pointwise(store, &format!("{name}.pre"), 1, c, Init::FanIn, rng)?,
            convs: DilatedConvStack::new(store, &format!("{name}.convs"), c, cfg.dp_kernel, cfg.dp_conv_layers, rng)?,
            proj: Conv1d::pointwise(store, &format!("{name}.proj"), c, 2, Init::Zeros, rng)?,
        })
    }

    fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        cond: Var,
        reverse: bool,
    ) -> (Var, Var) {
        let x0 = g.slice_rows(x, 0, 1);
        let x1 = g.slice_rows(x, 1, 1);
        let h = self.pre.forward(g, store, x0);
        let h = g.add(h, cond);
        let h = self.convs.forward(g, store, h);
        let stats = self.proj.forward(g, store, h);
        let m = g.slice_rows(stats, 0, 1);
        let logs = g.slice_rows(stats, 1, 1);
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

/// Elementwise affine followed by `[coupling, flip]` pairs.
#[derive(Debug, Clone)]
struct FlowChain {
    affine: ElementwiseAffine,
    couplings: Vec<ScalarCoupling>,
}

impl FlowChain {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            affine: ElementwiseAffine::new(store, &format!("{name}.affine"))?,
            couplings: (0..cfg.dp_flows)
                .map(|i| ScalarCoupling::new(store, &format!("{name}.c{i}"), cfg, rng))
                .collect::<Result<_>>()?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, cond: Var) -> (Var, Var) {
        let (mut x, mut logdet) = self.affine.apply(g, store, x, false);
        for c in &self.couplings {
            let (y, ld) = c.apply(g, store, x, cond, false);
            logdet = g.add(logdet, ld);
            x = g.reverse_rows(y);
        }
        (x, logdet)
    }

    fn inverse<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, cond: Var) -> Var {
        let mut x = x;
        for c in self.couplings.iter().rev() {
            let y = g.reverse_rows(x);
            x = c.apply(g, store, y, cond, true).0;
        }
        self.affine.apply(g, store, x, true).0
    }
}

/// Flow-based stochastic duration predictor with variational dequantization.
/// Its conditioning input is detached from the text encoder.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    pre: Conv1d,
    cond: Conv1d,
    convs: DilatedConvStack,
    proj: Conv1d,
    post_pre: Conv1d,
    post_convs: DilatedConvStack,
    post_proj: Conv1d,
    flows: FlowChain,
    post_flows: FlowChain,
}

impl DurationPredictor {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.dp_channels;
        let (k, l) = (cfg.dp_kernel, cfg.dp_conv_layers);
        Ok(Self {
            pre: Conv1d::pointwise(store, &format!("{name}.pre"), cfg.hidden_dim, c, Init::FanIn, rng)?,
            cond: Conv1d::pointwise(store, &format!("{name}.cond"), cfg.spk_emb_dim, c, Init::FanIn, rng)?,
            convs: DilatedConvStack::new(store, &format!("{name}.convs"), c, k, l, rng)?,
            proj: Conv1d::pointwise(store, &format!("{name}.proj"), c, c, Init::FanIn, rng)?,
            post_pre: Conv1d::pointwise(store, &format!("{name}.post_pre"), 1, c, Init::FanIn, rng)?,
            post_convs: DilatedConvStack::new(store, &format!("{name}.post_convs"), c, k, l, rng)?,
            post_proj: Conv1d::pointwise(store, &format!("{name}.post_proj"), c, c, Init::FanIn, rng)?,
            flows: FlowChain::new(store, &format!("{name}.flows"), cfg, rng)?,
            post_flows: FlowChain::new(store, &format!("{name}.post_flows"), cfg, rng)?,
        })
    }

    fn condition<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, hidden: Var, spk: Var) -> Var {
        let x = g.detach(hidden);
        let x = self.pre.forward(g, store, x);
        let s = self.cond.forward(g, store, spk);
        let x = g.add(x, s);
        let x = self.convs.forward(g, store, x);
        self.proj.forward(g, store, x)
    }

    /// Single-sample estimate of the negative variational lower bound on
    /// `log p(durations)`, divided by `T_text`. `noise` is standard normal `[2, T_text]`.
    pub fn nll<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        hidden: Var,
        spk: Var,
        durations: &[usize],
        noise: Tensor<T>,
    ) -> Result<Var> {
        let t = g.shape(hidden).1;
        if durations.len() != t {
            return Err(Error::InvalidArgument(format!(
                "{} durations for {t} text positions",
                durations.len()
            )));
        }
        if let Some(i) = durations.iter().position(|&d| d < 1) {
            return Err(Error::InvalidArgument(format!("duration at {i} is below 1")));
        }
        if noise.shape() != (2, t) {
            return Err(Error::InvalidArgument("duration noise must be [2, T_text]".into()));
        }
        let half_log_2pi = T::lit(0.5 * (2.0 * PI).ln());
        let x = self.condition(g, store, hidden, spk);
        let w = g.constant(Tensor::from_fn(1, t, |_, j| T::lit(durations[j] as f64)));

        let hw = self.post_pre.forward(g, store, w);
        let hw = self.post_convs.forward(g, store, hw);
        let hw = self.post_proj.forward(g, store, hw);
        let post_cond = g.add(x, hw);

        let e_q = g.constant(noise);
        let (z_q, logdet_q) = self.post_flows.forward(g, store, e_q, post_cond);
        let z_u = g.slice_rows(z_q, 0, 1);
        let z1 = g.slice_rows(z_q, 1, 1);
        let u = g.sigmoid(z_u);
        let z0 = g.sub(w, u);
        let ls = g.log_sigmoid(z_u);
        let nz = g.neg(z_u);
        let ls_neg = g.log_sigmoid(nz);
        let sig_ld = g.add(ls, ls_neg);
        let sig_ld = g.sum(sig_ld);
        let logdet_q = g.add(logdet_q, sig_ld);
        let eq2 = g.square(e_q);
        let eq2 = g.affine(eq2, T::lit(-0.5), -half_log_2pi);
        let log_q = g.sum(eq2);
        let log_q = g.sub(log_q, logdet_q);

        let z0 = g.clamp_min(z0, T::lit(1e-5));
        let z0 = g.log(z0);
        let log_ld = g.sum(z0);
        let log_ld = g.neg(log_ld);
        let z = g.concat_rows(&[z0, z1]);
        let (z, logdet) = self.flows.forward(g, store, z, x);
        let logdet = g.add(logdet, log_ld);
        let z2 = g.square(z);
        let z2 = g.affine(z2, T::lit(0.5), half_log_2pi);
        let nll = g.sum(z2);
        let nll = g.sub(nll, logdet);
        let total = g.add(nll, log_q);
        Ok(g.scale(total, T::one() / T::lit(t as f64)))
    }

    /// Log-durations `[1, T_text]` from prior noise `[2, T_text]` already
    /// scaled by the caller.
    pub fn sample_log_durations<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        hidden: Var,
        spk: Var,
        noise: Tensor<T>,
    ) -> Var {
        let x = self.condition(g, store, hidden, spk);
        let z = g.constant(noise);
        let z = self.flows.inverse(g, store, z, x);
        g.slice_rows(z, 0, 1)
    }
}

/// `ceil(exp(logw) · length_scale)`, at least 1.
pub fn durations_from_log<T: Real>(logw: &[T], length_scale: f64) -> Vec<usize> {
    logw.iter()
        .map(|&l| {
            let d = (l.to_f64().unwrap_or(0.0).exp() * length_scale).ceil();
            if d.is_finite() && d >= 1.0 {
                d.min(1e6) as usize
            } else {
                1
            }
        })
        .collect()
}

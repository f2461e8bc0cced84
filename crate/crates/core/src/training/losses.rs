use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use voxclone_tensor::{Graph, Tensor, Var};

use super::config::LossWeights;
use crate::audio::{MelFilterbank, StftConfig};
use crate::nn::DiscOutput;
use crate::{Error, Real, Result};

/// Per-step loss values. `total` is the weighted generator objective;
/// `discriminator` is reported separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_recon: f64,
    pub kl: f64,
    pub adversarial_g: f64,
    pub feature_match: f64,
    pub duration: f64,
    pub total: f64,
    pub discriminator: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.mel * self.mel_recon
            + w.kl * self.kl
            + w.feature_match * self.feature_match
            + w.adversarial * self.adversarial_g
            + w.duration * self.duration
    }

    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("mel_recon", self.mel_recon),
            ("kl", self.kl),
            ("adversarial_g", self.adversarial_g),
            ("feature_match", self.feature_match),
            ("duration", self.duration),
            ("discriminator", self.discriminator),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    pub fn check(&self, step: u64) -> Result<()> {
        match self.non_finite_term() {
            Some(term) => Err(Error::NonFiniteLoss { term, step }),
            None => Ok(()),
        }
    }
}

/// Differentiable log-mel projection of a `[1, N]` waveform: centered
/// frames with reflection padding, windowed DFT as two matrix products,
/// magnitude, mel filterbank, `ln(max(·, 1e-5))`.
#[derive(Debug, Clone)]
pub struct MelTransform<T> {
    stft: StftConfig,
    cos: Tensor<T>,
    sin: Tensor<T>,
    mel: Tensor<T>,
}

impl<T: Real> MelTransform<T> {
    pub fn new(stft: StftConfig, n_mels: usize) -> Self {
        let window = stft.window();
        let n = stft.fft_size;
        let bins = stft.n_bins();
        let basis = |f: fn(f64) -> f64| {
            Tensor::from_fn(bins, n, |k, j| {
                T::lit(window[j] * f(2.0 * PI * ((k * j) % n) as f64 / n as f64))
            })
        };
        Self {
            cos: basis(f64::cos),
            sin: basis(f64::sin),
            mel: MelFilterbank::new(stft.sample_rate, n, n_mels, 0.0, None).matrix(),
            stft,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, y: Var) -> Var {
        let n = g.shape(y).1;
        let pad = (self.stft.fft_size / 2) as isize;
        let idx: Vec<usize> = (-pad..n as isize + pad)
            .map(|j| crate::audio::reflect_index(j, n))
            .collect();
        let padded = g.gather_cols(y, &idx);
        let frames = g.im2col(padded, self.stft.fft_size, 1, self.stft.hop, 0, 0);
        let c = g.constant(self.cos.clone());
        let s = g.constant(self.sin.clone());
        let re = g.matmul(c, frames);
        let im = g.matmul(s, frames);
        let re2 = g.square(re);
        let im2 = g.square(im);
        let p = g.add(re2, im2);
        let p = g.affine(p, T::one(), T::lit(1e-9));
        let mag = g.sqrt(p);
        let fb = g.constant(self.mel.clone());
        let mel = g.matmul(fb, mag);
        let mel = g.clamp_min(mel, T::lit(1e-5));
        g.log(mel)
    }
}

/// Mean absolute difference between log-mel projections of the real and generated slices.
pub fn mel_recon_loss<T: Real>(g: &mut Graph<T>, mel: &MelTransform<T>, real: Var, fake: Var) -> Var {
    let a = mel.forward(g, real);
    let b = mel.forward(g, fake);
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

/// Single-sample KL estimate between the posterior (pushed through the
/// flow) and the duration-expanded text prior, per frame:
/// `Σ [logs_p − logs_q − ½ε² + ½((z_p − m_p)/σ_p)²] − logdet`, divided by `T_spec`.
/// Zero whenever the posterior equals the prior under an identity flow.
pub fn kl_loss<T: Real>(
    g: &mut Graph<T>,
    z_p: Var,
    logdet: Var,
    eps: Var,
    logs_q: Var,
    m_p: Var,
    logs_p: Var,
) -> Var {
    let t = g.shape(z_p).1;
    let a = g.sub(logs_p, logs_q);
    let e2 = g.square(eps);
    let e2 = g.scale(e2, T::lit(0.5));
    let a = g.sub(a, e2);
    let d = g.sub(z_p, m_p);
    let nl = g.scale(logs_p, T::lit(-2.0));
    let inv_var = g.exp(nl);
    let d2 = g.square(d);
    let q = g.mul(d2, inv_var);
    let q = g.scale(q, T::lit(0.5));
    let a = g.add(a, q);
    let s = g.sum(a);
    let s = g.sub(s, logdet);
    g.scale(s, T::one() / T::lit(t as f64))
}

fn sum_vars<T: Real>(g: &mut Graph<T>, vars: Vec<Var>) -> Var {
    let mut it = vars.into_iter();
    let first = it.next().expect("at least one term");
    it.fold(first, |acc, v| g.add(acc, v))
}

/// Least-squares discriminator objective summed over sub-discriminators.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, real: &[DiscOutput], fake: &[DiscOutput]) -> Var {
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        for (&lr, &lf) in r.logits.iter().zip(&f.logits) {
            let a = g.affine(lr, -T::one(), T::one());
            let a = g.square(a);
            terms.push(g.mean(a));
            let b = g.square(lf);
            terms.push(g.mean(b));
        }
    }
    sum_vars(g, terms)
}

/// Least-squares generator objective summed over sub-discriminators.
pub fn generator_adv_loss<T: Real>(g: &mut Graph<T>, fake: &[DiscOutput]) -> Var {
    let mut terms = Vec::new();
    for f in fake {
        for &lf in &f.logits {
            let a = g.affine(lf, -T::one(), T::one());
            let a = g.square(a);
            terms.push(g.mean(a));
        }
    }
    sum_vars(g, terms)
}

/// Sum over every intermediate activation of the mean absolute difference;
/// real activations are treated as constants.
pub fn feature_match_loss<T: Real>(g: &mut Graph<T>, real: &[DiscOutput], fake: &[DiscOutput]) -> Var {
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        for (&fr, &ff) in r.fmaps.iter().zip(&f.fmaps) {
            let fr = g.detach(fr);
            let d = g.sub(fr, ff);
            let d = g.abs(d);
            terms.push(g.mean(d));
        }
    }
    sum_vars(g, terms)
}

/// `ll[i, j] = log N(z_p[:, j]; m_p[:, i], σ_p[:, i])` summed over channels,
/// `[T_text, T_spec]`.
pub fn alignment_log_likelihood<T: Real>(z_p: &Tensor<T>, m_p: &Tensor<T>, logs_p: &Tensor<T>) -> Result<Tensor<T>> {
    let half_log_2pi = T::lit(0.5 * (2.0 * PI).ln());
    let inv_var = logs_p.map(|l| (l * T::lit(-2.0)).exp());
    let (c, t_text) = m_p.shape();
    let t_spec = z_p.cols();
    // constant per text state
    let mut a = vec![T::zero(); t_text];
    for ch in 0..c {
        for (i, ai) in a.iter_mut().enumerate() {
            let m = m_p.at(ch, i);
            *ai -= half_log_2pi + logs_p.at(ch, i) + T::lit(0.5) * m * m * inv_var.at(ch, i);
        }
    }
    let z2 = z_p.map(|v| v * v);
    let b = inv_var.matmul(true, &z2, false)?;
    let mv = m_p.zip_map(&inv_var, |m, v| m * v);
    let cross = mv.matmul(true, z_p, false)?;
    Ok(Tensor::from_fn(t_text, t_spec, |i, j| {
        a[i] - T::lit(0.5) * b.at(i, j) + cross.at(i, j)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mel_recon_of_identical_slices_is_zero() {
        let mel = MelTransform::<f32>::new(StftConfig::default(), 80);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let y = Tensor::randn(1, 2048, 0.3, &mut rng);
        let a = g.constant(y.clone());
        let b = g.constant(y);
        let l = mel_recon_loss(&mut g, &mel, a, b);
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn mel_transform_matches_fft_pipeline() {
        // oracle: rustfft spectrogram and the filterbank applied offline
        let cfg = StftConfig::default();
        let mel = MelTransform::<f64>::new(cfg, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Tensor::<f64>::randn(1, 3000, 0.2, &mut rng);
        let w = crate::audio::Waveform::new(y.data().to_vec(), 16_000).unwrap();
        let spec = crate::audio::linear_spectrogram(&w, &cfg).unwrap();
        let fb = MelFilterbank::new(16_000, 1024, 80, 0.0, None);
        let expected = fb.log_mel(&spec);
        let mut g = Graph::new();
        let v = g.constant(y);
        let got = mel.forward(&mut g, v);
        let got = g.value(got);
        assert_eq!(got.shape(), expected.shape());
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn kl_is_zero_when_posterior_equals_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::<f64>::randn(4, 6, 1.0, &mut rng);
        let logs = Tensor::<f64>::randn(4, 6, 0.3, &mut rng);
        let eps = Tensor::<f64>::randn(4, 6, 1.0, &mut rng);
        let z = Tensor::from_fn(4, 6, |i, j| m.at(i, j) + logs.at(i, j).exp() * eps.at(i, j));
        let mut g = Graph::new();
        let zv = g.constant(z);
        let ld = g.constant(Tensor::scalar(0.0));
        let e = g.constant(eps);
        let lq = g.constant(logs.clone());
        let mp = g.constant(m);
        let lp = g.constant(logs);
        let kl = kl_loss(&mut g, zv, ld, e, lq, mp, lp);
        assert!(g.item(kl).abs() < 1e-12);
    }

    #[test]
    fn kl_estimate_averages_to_closed_form() {
        // E over ε of the estimator equals KL(N(mq, sq²) ‖ N(mp, sp²))
        let (mq, lq, mp, lp) = (0.3f64, -0.2f64, -0.1f64, 0.4f64);
        let closed = lp - lq + ((2.0 * lq).exp() + (mq - mp).powi(2)) / (2.0 * (2.0 * lp).exp()) - 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let eps = Tensor::<f64>::randn(1, n, 1.0, &mut rng);
        let z = eps.map(|e| mq + lq.exp() * e);
        let mut g = Graph::new();
        let zv = g.constant(z);
        let ld = g.constant(Tensor::scalar(0.0));
        let e = g.constant(eps);
        let lqv = g.constant(Tensor::full(1, n, lq));
        let mpv = g.constant(Tensor::full(1, n, mp));
        let lpv = g.constant(Tensor::full(1, n, lp));
        let kl = kl_loss(&mut g, zv, ld, e, lqv, mpv, lpv);
        assert!((g.item(kl) - closed).abs() < 5e-3, "{} vs {closed}", g.item(kl));
    }

    #[test]
    fn alignment_likelihood_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::<f64>::randn(3, 7, 1.0, &mut rng);
        let m = Tensor::<f64>::randn(3, 4, 1.0, &mut rng);
        let l = Tensor::<f64>::randn(3, 4, 0.3, &mut rng);
        let ll = alignment_log_likelihood(&z, &m, &l).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let direct: f64 = (0..3)
                    .map(|c| {
                        let s = l.at(c, i).exp();
                        let d = (z.at(c, j) - m.at(c, i)) / s;
                        -0.5 * (2.0 * PI).ln() - l.at(c, i) - 0.5 * d * d
                    })
                    .sum();
                assert!((ll.at(i, j) - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn discriminator_loss_minimum_on_perfect_scores() {
        let mut g = Graph::<f64>::new();
        let ones = g.constant(Tensor::full(1, 5, 1.0));
        let zeros = g.constant(Tensor::zeros(1, 5));
        let real = vec![DiscOutput {
            logits: vec![ones],
            fmaps: vec![ones],
        }];
        let fake = vec![DiscOutput {
            logits: vec![zeros],
            fmaps: vec![zeros],
        }];
        let d = discriminator_loss(&mut g, &real, &fake);
        assert_eq!(g.item(d), 0.0);
        let a = generator_adv_loss(&mut g, &fake);
        assert_eq!(g.item(a), 1.0);
        let f = feature_match_loss(&mut g, &real, &real);
        assert_eq!(g.item(f), 0.0);
    }

    #[test]
    fn breakdown_total_and_nan_detection() {
        let b = LossBreakdown {
            mel_recon: 1.0,
            kl: 2.0,
            adversarial_g: 3.0,
            feature_match: 4.0,
            duration: 5.0,
            ..Default::default()
        };
        assert_eq!(b.weighted_total(&LossWeights::default()), 45.0 + 2.0 + 3.0 + 8.0 + 5.0);
        let bad = LossBreakdown { kl: f64::NAN, ..b };
        assert!(matches!(bad.check(7), Err(Error::NonFiniteLoss { term: "kl", step: 7 })));
    }
}

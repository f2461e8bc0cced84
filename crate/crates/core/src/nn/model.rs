use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxclone_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::checkpoint::Checkpoint;
use super::discriminator::Discriminators;
use super::duration::{durations_from_log, DurationPredictor};
use super::flow::Flow;
use super::posterior::PosteriorEncoder;
use super::speaker::SpeakerEmbedding;
use super::text::TextEncoder;
use super::vocoder::Vocoder;
use super::ModelConfig;
use crate::audio::LinearSpectrogram;
use crate::{Error, Real, Result};

pub const GENERATOR_PREFIX: &str = "gen.";
pub const DISCRIMINATOR_PREFIX: &str = "disc.";

/// Text encoder outputs, `[channels, T_text]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding<T> {
    pub hidden: Tensor<T>,
    pub prior_mean: Tensor<T>,
    pub prior_logstd: Tensor<T>,
}

impl<T: Real> TextEncoding<T> {
    pub fn t_text(&self) -> usize {
        self.hidden.cols()
    }
}

/// Posterior encoder outputs, `[latent_dim, T_spec]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<T> {
    pub z: Tensor<T>,
    pub posterior_mean: Tensor<T>,
    pub posterior_logstd: Tensor<T>,
}

/// Every trainable parameter of the generator and the discriminators.
#[derive(Debug, Clone)]
pub struct VoiceModel<T> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    text: TextEncoder,
    posterior: PosteriorEncoder,
    flow: Flow,
    duration: DurationPredictor,
    vocoder: Vocoder,
    disc: Discriminators,
    gen_ids: Vec<ParamId>,
    disc_ids: Vec<ParamId>,
}

impl<T: Real> VoiceModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, "gen.text", &cfg, &mut rng)?;
        let posterior = PosteriorEncoder::new(&mut store, "gen.posterior", &cfg, &mut rng)?;
        let flow = Flow::new(&mut store, "gen.flow", &cfg, &mut rng)?;
        let duration = DurationPredictor::new(&mut store, "gen.duration", &cfg, &mut rng)?;
        let vocoder = Vocoder::new(&mut store, "gen.vocoder", &cfg, &mut rng)?;
        let disc = Discriminators::new(&mut store, "disc", &cfg, &mut rng)?;
        let gen_ids = store
            .iter()
            .filter(|(_, n, _)| n.starts_with(GENERATOR_PREFIX))
            .map(|(id, _, _)| id)
            .collect();
        let disc_ids = store
            .iter()
            .filter(|(_, n, _)| n.starts_with(DISCRIMINATOR_PREFIX))
            .map(|(id, _, _)| id)
            .collect();
        Ok(Self {
            cfg,
            store,
            text,
            posterior,
            flow,
            duration,
            vocoder,
            disc,
            gen_ids,
            disc_ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn generator_params(&self) -> &[ParamId] {
        &self.gen_ids
    }

    pub fn discriminator_params(&self) -> &[ParamId] {
        &self.disc_ids
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn posterior_encoder(&self) -> &PosteriorEncoder {
        &self.posterior
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn duration_predictor(&self) -> &DurationPredictor {
        &self.duration
    }

    pub fn vocoder(&self) -> &Vocoder {
        &self.vocoder
    }

    pub fn discriminators(&self) -> &Discriminators {
        &self.disc
    }

    pub fn check_speaker(&self, spk: &SpeakerEmbedding<T>) -> Result<()> {
        if spk.dim() != self.cfg.spk_emb_dim {
            return Err(Error::InvalidArgument(format!(
                "speaker embedding has {} dims, model expects {}",
                spk.dim(),
                self.cfg.spk_emb_dim
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        if z.rows() != self.cfg.latent_dim || z.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent sequence must be [{}, T>=1], got {:?}",
                self.cfg.latent_dim,
                z.shape()
            )));
        }
        Ok(())
    }

    fn spk_var(&self, g: &mut Graph<T>, spk: &SpeakerEmbedding<T>) -> Result<Var> {
        self.check_speaker(spk)?;
        Ok(g.constant(spk.to_tensor()))
    }

    pub fn encode_text(&self, symbols: &[usize], language: usize, spk: &SpeakerEmbedding<T>) -> Result<TextEncoding<T>> {
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let v = self.text.forward(&mut g, &self.store, symbols, language, s)?;
        Ok(TextEncoding {
            hidden: g.value(v.hidden).clone(),
            prior_mean: g.value(v.prior_mean).clone(),
            prior_logstd: g.value(v.prior_logstd).clone(),
        })
    }

    /// `eps` is the reparameterization noise, `[latent_dim, T_spec]`.
    pub fn encode_posterior(
        &self,
        spec: &LinearSpectrogram<T>,
        spk: &SpeakerEmbedding<T>,
        eps: &Tensor<T>,
    ) -> Result<LatentSequence<T>> {
        if spec.n_bins() != self.cfg.n_bins() {
            return Err(Error::InvalidArgument(format!(
                "spectrogram has {} bins, model expects {}",
                spec.n_bins(),
                self.cfg.n_bins()
            )));
        }
        if eps.shape() != (self.cfg.latent_dim, spec.n_frames()) {
            return Err(Error::InvalidArgument(format!(
                "noise shape {:?} does not match [{}, {}]",
                eps.shape(),
                self.cfg.latent_dim,
                spec.n_frames()
            )));
        }
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let x = g.constant(spec.magnitudes.clone());
        let e = g.constant(eps.clone());
        let v = self.posterior.forward(&mut g, &self.store, x, s, e);
        Ok(LatentSequence {
            z: g.value(v.z).clone(),
            posterior_mean: g.value(v.mean).clone(),
            posterior_logstd: g.value(v.logstd).clone(),
        })
    }

    pub fn flow_forward(&self, z: &Tensor<T>, spk: &SpeakerEmbedding<T>) -> Result<(Tensor<T>, T)> {
        self.check_latent(z)?;
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let x = g.constant(z.clone());
        let (y, ld) = self.flow.forward(&mut g, &self.store, x, s);
        Ok((g.value(y).clone(), g.item(ld)))
    }

    /// Returns `z` and the inverse log-determinant.
    pub fn flow_inverse(&self, fz: &Tensor<T>, spk: &SpeakerEmbedding<T>) -> Result<(Tensor<T>, T)> {
        self.check_latent(fz)?;
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let x = g.constant(fz.clone());
        let (y, ld) = self.flow.inverse(&mut g, &self.store, x, s);
        Ok((g.value(y).clone(), g.item(ld)))
    }

    /// Samples integer durations; `noise_scale = 0` is deterministic.
    pub fn predict_durations<R: Rng + ?Sized>(
        &self,
        enc: &TextEncoding<T>,
        spk: &SpeakerEmbedding<T>,
        noise_scale: f64,
        length_scale: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_scale must be >= 0, got {noise_scale}")));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("length_scale must be > 0, got {length_scale}")));
        }
        let t = enc.t_text();
        let noise = if noise_scale == 0.0 {
            Tensor::zeros(2, t)
        } else {
            Tensor::randn(2, t, noise_scale, rng)
        };
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let h = g.constant(enc.hidden.clone());
        let logw = self.duration.sample_log_durations(&mut g, &self.store, h, s, noise);
        Ok(durations_from_log(g.value(logw).data(), length_scale))
    }

    /// Duration-flow loss for `target` durations with fresh variational noise from `rng`.
    pub fn duration_loss<R: Rng + ?Sized>(
        &self,
        enc: &TextEncoding<T>,
        spk: &SpeakerEmbedding<T>,
        target: &[usize],
        rng: &mut R,
    ) -> Result<T> {
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let h = g.constant(enc.hidden.clone());
        let noise = Tensor::randn(2, enc.t_text(), 1.0, rng);
        let l = self.duration.nll(&mut g, &self.store, h, s, target, noise)?;
        Ok(g.item(l))
    }

    /// Waveform samples for `z_slice` (`[latent_dim, T_chunk]`), `T_chunk·hop` long.
    pub fn vocode(&self, z_slice: &Tensor<T>, spk: &SpeakerEmbedding<T>) -> Result<Vec<T>> {
        self.check_latent(z_slice)?;
        let mut g = Graph::new();
        let s = self.spk_var(&mut g, spk)?;
        let x = g.constant(z_slice.clone());
        let y = self.vocoder.forward(&mut g, &self.store, x, s);
        Ok(g.value(y).data().to_vec())
    }

    /// Archive of every parameter, converted to `f32`.
    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(self.cfg.clone(), metadata);
        for (_, name, t) in self.store.iter() {
            ck.arrays.push((name.to_string(), t.cast()));
        }
        ck
    }

    /// Rebuilds the model from an archive; every parameter must be present
    /// with the expected shape. Arrays outside the model namespaces are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.header.config.clone(), 0)?;
        let mut seen = 0;
        for (name, t) in &ck.arrays {
            if !(name.starts_with(GENERATOR_PREFIX) || name.starts_with(DISCRIMINATOR_PREFIX)) {
                continue;
            }
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let expected = model.store.get(id).shape();
            if t.shape() != expected {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {expected:?}",
                    t.shape()
                )));
            }
            model.store.set(id, t.cast())?;
            seen += 1;
        }
        if seen != model.store.len() {
            let missing: Vec<&str> = model
                .store
                .iter()
                .filter(|(_, n, _)| ck.array(n).is_none())
                .map(|(_, n, _)| n)
                .take(3)
                .collect();
            return Err(Error::Checkpoint(format!("missing parameters, e.g. {missing:?}")));
        }
        Ok(model)
    }
}

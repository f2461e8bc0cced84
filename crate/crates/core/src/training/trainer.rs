use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voxclone_tensor::{AdamW, Graph, ParamId, Tensor, Var};

use super::config::{lr_at, SamplerConfig, SamplingStrategy, ScheduleConfig, TrainConfig};
use super::data::{prepare_utterance, PreparedUtterance};
use super::losses::{
    alignment_log_likelihood, discriminator_loss, feature_match_loss, generator_adv_loss, kl_loss,
    mel_recon_loss, LossBreakdown, MelTransform,
};
use super::sampler::{mixup_datasets, Sampler};
use crate::alignment::noisy_mas;
use crate::corpus::{CharacterVocabulary, Manifest};
use crate::nn::{Checkpoint, SpeakerEncoder, VoiceModel};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Loop position stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub step: u64,
    pub stage: Stage,
    /// Global step at which the current stage began.
    pub stage_start: u64,
    pub generator_opt_steps: u64,
    pub discriminator_opt_steps: u64,
    pub config: TrainConfig,
}

/// Everything besides parameters that a checkpoint carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocabulary: Vec<char>,
    pub languages: Vec<String>,
    pub speakers: Vec<String>,
    #[serde(default)]
    pub training: Option<TrainingState>,
}

impl CheckpointMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ck.header.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))
    }

    pub fn vocabulary(&self) -> Result<CharacterVocabulary> {
        CharacterVocabulary::from_char_list(&self.vocabulary)
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub speakers: Vec<String>,
}

/// Where [`Trainer::run`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Owns the model, both optimizers, the sampler and the prepared data.
pub struct Trainer<T: Real> {
    model: VoiceModel<T>,
    cfg: TrainConfig,
    vocab: CharacterVocabulary,
    languages: Vec<String>,
    speakers: Vec<String>,
    sampler: Sampler,
    data: Vec<PreparedUtterance<T>>,
    g_opt: AdamW<T>,
    d_opt: AdamW<T>,
    step: u64,
    stage: Stage,
    stage_start: u64,
    mel: MelTransform<T>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for stream `lane` of step `step` under root seed `seed`.
pub(crate) fn derive_seed(seed: u64, step: u64, lane: u64) -> u64 {
    splitmix(seed ^ splitmix(step ^ splitmix(lane)))
}

fn prepare_all<T: Real>(
    sampler: &Sampler,
    vocab: &CharacterVocabulary,
    languages: &[String],
    model: &VoiceModel<T>,
    encoder: &dyn SpeakerEncoder,
) -> Result<Vec<PreparedUtterance<T>>> {
    if encoder.dim() != model.config().spk_emb_dim {
        return Err(Error::Config(format!(
            "speaker encoder `{}` emits {} dims, model expects {}",
            encoder.name(),
            encoder.dim(),
            model.config().spk_emb_dim
        )));
    }
    sampler
        .utterances()
        .iter()
        .map(|u| prepare_utterance(u, vocab, languages, model.config(), encoder))
        .collect()
}

fn check_languages(manifest: &Manifest, languages: &[String]) -> Result<()> {
    match manifest.languages().iter().find(|l| !languages.contains(l)) {
        Some(l) => Err(Error::UnknownLanguage(format!("{l} (model knows {})", languages.join(", ")))),
        None => Ok(()),
    }
}

impl<T: Real> Trainer<T> {
    /// Fresh model; the vocabulary and language table come from `manifest`.
    pub fn pretrain(manifest: &Manifest, cfg: TrainConfig, encoder: &dyn SpeakerEncoder) -> Result<Self> {
        cfg.validate()?;
        let vocab = CharacterVocabulary::build([manifest])?;
        let languages: Vec<String> = manifest.languages().iter().cloned().collect();
        let mut model_cfg = cfg.model.clone();
        model_cfg.n_symbols = vocab.len();
        model_cfg.n_languages = languages.len();
        let model = VoiceModel::new(model_cfg.clone(), cfg.seed)?;
        let cfg = TrainConfig { model: model_cfg, ..cfg };
        let sampler = Sampler::new(&[manifest], cfg.sampler)?;
        let data = prepare_all(&sampler, &vocab, &languages, &model, encoder)?;
        let o = cfg.optimizer;
        Ok(Self {
            speakers: manifest.speakers().iter().cloned().collect(),
            mel: MelTransform::new(cfg.model.stft, cfg.model.n_mels),
            g_opt: AdamW::new(o.beta1, o.beta2, o.eps, o.weight_decay),
            d_opt: AdamW::new(o.beta1, o.beta2, o.eps, o.weight_decay),
            model,
            cfg,
            vocab,
            languages,
            sampler,
            data,
            step: 0,
            stage: Stage::Pretrain,
            stage_start: 0,
        })
    }

    /// Continues from a pre-trained checkpoint on the mix of both corpora with
    /// speaker-balanced sampling. Optimizer state, discriminators and the
    /// global step (which drives the alignment noise) carry over; the
    /// learning-rate schedule restarts from `finetune_schedule`.
    pub fn finetune(
        ck: &Checkpoint,
        pretrain: &Manifest,
        fewshot: &Manifest,
        encoder: &dyn SpeakerEncoder,
    ) -> Result<Self> {
        Self::finetune_with_config(ck, pretrain, fewshot, encoder, None)
    }

    /// [`Trainer::finetune`] with a replacement training config. Its model
    /// section must describe the checkpoint's architecture.
    pub fn finetune_with_config(
        ck: &Checkpoint,
        pretrain: &Manifest,
        fewshot: &Manifest,
        encoder: &dyn SpeakerEncoder,
        cfg: Option<TrainConfig>,
    ) -> Result<Self> {
        let mixed = mixup_datasets(pretrain, fewshot)?;
        let mut t = Self::restore(ck, &mixed, encoder, Some(Stage::Finetune), cfg)?;
        t.stage = Stage::Finetune;
        t.stage_start = t.step;
        Ok(t)
    }

    /// Resumes exactly where `ck` left off. `dataset` must be the manifest the
    /// run was using (the mixed manifest for a fine-tuning run).
    pub fn resume(ck: &Checkpoint, dataset: &Manifest, encoder: &dyn SpeakerEncoder) -> Result<Self> {
        Self::restore(ck, dataset, encoder, None, None)
    }

    fn restore(
        ck: &Checkpoint,
        dataset: &Manifest,
        encoder: &dyn SpeakerEncoder,
        stage_override: Option<Stage>,
        cfg_override: Option<TrainConfig>,
    ) -> Result<Self> {
        let meta = CheckpointMeta::from_checkpoint(ck)?;
        let state = meta
            .training
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?;
        let model = VoiceModel::<T>::from_checkpoint(ck)?;
        let vocab = meta.vocabulary()?;
        check_languages(dataset, &meta.languages)?;
        let stage = stage_override.unwrap_or(state.stage);
        let cfg = match cfg_override {
            Some(mut c) => {
                c.validate()?;
                c.model.n_symbols = ck.header.config.n_symbols;
                c.model.n_languages = ck.header.config.n_languages;
                if c.model != ck.header.config {
                    return Err(Error::Config(
                        "model section differs from the checkpoint's architecture".into(),
                    ));
                }
                c
            }
            None => state.config.clone(),
        };
        let sampler_cfg = match stage {
            Stage::Pretrain => cfg.sampler,
            Stage::Finetune => SamplerConfig {
                strategy: SamplingStrategy::Balanced,
                ..cfg.sampler
            },
        };
        let sampler = Sampler::new(&[dataset], sampler_cfg)?;
        let data = prepare_all(&sampler, &vocab, &meta.languages, &model, encoder)?;
        let o = cfg.optimizer;
        let mut g_opt = AdamW::new(o.beta1, o.beta2, o.eps, o.weight_decay);
        let mut d_opt = AdamW::new(o.beta1, o.beta2, o.eps, o.weight_decay);
        g_opt.restore(state.generator_opt_steps, read_moments(ck, &model, model.generator_params(), "g")?);
        d_opt.restore(
            state.discriminator_opt_steps,
            read_moments(ck, &model, model.discriminator_params(), "d")?,
        );
        let mut speakers: Vec<String> = meta.speakers.clone();
        for s in dataset.speakers() {
            if !speakers.contains(s) {
                speakers.push(s.clone());
            }
        }
        Ok(Self {
            mel: MelTransform::new(cfg.model.stft, cfg.model.n_mels),
            model,
            cfg,
            vocab,
            languages: meta.languages,
            speakers,
            sampler,
            data,
            g_opt,
            d_opt,
            step: state.step,
            stage,
            stage_start: state.stage_start,
        })
    }

    pub fn model(&self) -> &VoiceModel<T> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn vocabulary(&self) -> &CharacterVocabulary {
        &self.vocab
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        match self.stage {
            Stage::Pretrain => &self.cfg.schedule,
            Stage::Finetune => &self.cfg.finetune_schedule,
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        let n = self.sampler.utterances().len() as u64;
        n.div_ceil(self.cfg.sampler.batch_size as u64).max(1)
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f64 {
        let sched = self.schedule();
        lr_at(sched.index(self.step - self.stage_start, self.steps_per_epoch()), sched)
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.step;
        let lr = self.current_lr();
        let batch = self.sampler.batch_indices(step - self.stage_start);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, step, 0));
        let cfg = self.model.config().clone();
        let hop = cfg.hop();
        let w = self.cfg.losses;
        let inv_b = T::one() / T::lit(batch.len() as f64);
        let store = self.model.store();

        struct Item {
            y_real: Var,
            y_hat: Var,
            mel: Var,
            kl: Var,
            dur: Var,
        }

        let mut g: Graph<T> = Graph::new();
        let mut items = Vec::with_capacity(batch.len());
        for (k, &di) in batch.iter().enumerate() {
            let d = &self.data[di];
            let t_spec = d.spec.cols();
            let spk = g.constant(d.speaker.clone());
            let text = self
                .model
                .text_encoder()
                .forward(&mut g, store, &d.symbols, d.language, spk)?;
            let spec = g.constant(d.spec.clone());
            let eps_t = Tensor::<T>::randn(cfg.latent_dim, t_spec, 1.0, &mut rng);
            let eps = g.constant(eps_t);
            let post = self.model.posterior_encoder().forward(&mut g, store, spec, spk, eps);
            let (z_p, logdet) = self.model.flow().forward(&mut g, store, post.z, spk);

            let ll = alignment_log_likelihood(g.value(z_p), g.value(text.prior_mean), g.value(text.prior_logstd))?;
            let path = noisy_mas(
                &ll,
                &self.cfg.mas_noise,
                step,
                derive_seed(self.cfg.seed, step, 1 + k as u64),
            )?;
            let m_exp = g.gather_cols(text.prior_mean, path.states());
            let logs_exp = g.gather_cols(text.prior_logstd, path.states());
            let kl = kl_loss(&mut g, z_p, logdet, eps, post.logstd, m_exp, logs_exp);

            let dur_noise = Tensor::<T>::randn(2, d.symbols.len(), 1.0, &mut rng);
            let dur = self.model.duration_predictor().nll(
                &mut g,
                store,
                text.hidden,
                spk,
                &path.durations(),
                dur_noise,
            )?;

            let seg = self.cfg.segment_frames.min(t_spec);
            let s0 = rng.gen_range(0..=t_spec - seg);
            let z_slice = g.slice_cols(post.z, s0, seg);
            let y_hat = self.model.vocoder().forward(&mut g, store, z_slice, spk);
            let real: Vec<T> = d.wave[s0 * hop..(s0 + seg) * hop].to_vec();
            let y_real_var = g.constant(Tensor::new(1, seg * hop, real)?);
            let mel = mel_recon_loss(&mut g, &self.mel, y_real_var, y_hat);
            items.push(Item {
                y_real: y_real_var,
                y_hat,
                mel,
                kl,
                dur,
            });
        }

        let mut report = LossBreakdown::default();
        let scale = 1.0 / batch.len() as f64;
        for it in &items {
            report.mel_recon += scale * g.item(it.mel).to_f64().unwrap_or(f64::NAN);
            report.kl += scale * g.item(it.kl).to_f64().unwrap_or(f64::NAN);
            report.duration += scale * g.item(it.dur).to_f64().unwrap_or(f64::NAN);
        }
        report.check(step)?;

        // discriminator update on real vs detached generated slices
        {
            let mut gd: Graph<T> = Graph::new();
            let mut total: Option<Var> = None;
            for it in &items {
                let yr = gd.constant(g.value(it.y_real).clone());
                let yf = gd.constant(g.value(it.y_hat).clone());
                let dr = self.model.discriminators().forward(&mut gd, store, yr);
                let df = self.model.discriminators().forward(&mut gd, store, yf);
                let l = discriminator_loss(&mut gd, &dr, &df);
                total = Some(match total {
                    Some(t) => gd.add(t, l),
                    None => l,
                });
            }
            let loss_d = gd.scale(total.expect("non-empty batch"), inv_b);
            report.discriminator = gd.item(loss_d).to_f64().unwrap_or(f64::NAN);
            report.check(step)?;
            let grads = gd.backward(loss_d);
            let ids: Vec<ParamId> = self.model.discriminator_params().to_vec();
            self.d_opt.step(self.model.store_mut(), &grads, &ids, lr);
        }

        // generator objective against the updated discriminators
        let store = self.model.store();
        let mut total: Option<Var> = None;
        for it in &items {
            let df = self.model.discriminators().forward(&mut g, store, it.y_hat);
            let dr = self.model.discriminators().forward(&mut g, store, it.y_real);
            let adv = generator_adv_loss(&mut g, &df);
            let fm = feature_match_loss(&mut g, &dr, &df);
            report.adversarial_g += scale * g.item(adv).to_f64().unwrap_or(f64::NAN);
            report.feature_match += scale * g.item(fm).to_f64().unwrap_or(f64::NAN);
            let mut terms = vec![
                g.scale(it.mel, T::lit(w.mel)),
                g.scale(it.kl, T::lit(w.kl)),
                g.scale(it.dur, T::lit(w.duration)),
                g.scale(adv, T::lit(w.adversarial)),
                g.scale(fm, T::lit(w.feature_match)),
            ];
            let first = terms.remove(0);
            let item_total = terms.into_iter().fold(first, |a, b| g.add(a, b));
            total = Some(match total {
                Some(t) => g.add(t, item_total),
                None => item_total,
            });
        }
        let loss_g = g.scale(total.expect("non-empty batch"), inv_b);
        report.total = g.item(loss_g).to_f64().unwrap_or(f64::NAN);
        report.check(step)?;
        let grads = g.backward(loss_g);
        let ids: Vec<ParamId> = self.model.generator_params().to_vec();
        self.g_opt.step(self.model.store_mut(), &grads, &ids, lr);

        self.step += 1;
        Ok(StepReport {
            step,
            lr,
            losses: report,
            speakers: batch.iter().map(|&i| self.data[i].speaker_id.clone()).collect(),
        })
    }

    /// Runs `steps` steps, appending one JSON line per step to the log and
    /// writing checkpoints every `checkpoint_every` steps and at the end.
    pub fn run(&mut self, steps: u64, out: &RunOutputs) -> Result<Vec<StepReport>> {
        let mut log = match &out.log_path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        if let Some(dir) = &out.checkpoint_dir {
            fs::create_dir_all(dir)?;
        }
        let mut reports = Vec::with_capacity(steps as usize);
        for i in 0..steps {
            let r = self.train_step()?;
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&r)?)?;
            }
            reports.push(r);
            let every = self.cfg.checkpoint_every;
            if let Some(dir) = &out.checkpoint_dir {
                if every > 0 && (i + 1) % every == 0 && i + 1 < steps {
                    self.checkpoint().save(checkpoint_path(dir, self.step))?;
                }
            }
        }
        if let Some(dir) = &out.checkpoint_dir {
            let ck = self.checkpoint();
            ck.save(checkpoint_path(dir, self.step))?;
            ck.save(dir.join("latest.ckpt"))?;
        }
        Ok(reports)
    }

    pub fn metadata(&self) -> CheckpointMeta {
        CheckpointMeta {
            vocabulary: self.vocab.chars(),
            languages: self.languages.clone(),
            speakers: self.speakers.clone(),
            training: Some(TrainingState {
                step: self.step,
                stage: self.stage,
                stage_start: self.stage_start,
                generator_opt_steps: self.g_opt.steps(),
                discriminator_opt_steps: self.d_opt.steps(),
                config: self.cfg.clone(),
            }),
        }
    }

    /// Parameters, optimizer moments and loop state.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_value(self.metadata()).expect("metadata serializes");
        let mut ck = self.model.to_checkpoint(meta);
        for (opt, ids, tag) in [
            (&self.g_opt, self.model.generator_params(), "g"),
            (&self.d_opt, self.model.discriminator_params(), "d"),
        ] {
            for &id in ids {
                if let Some((m, v)) = opt.moments(id) {
                    let name = self.model.store().name(id);
                    ck.arrays.push((format!("opt.{tag}.m.{name}"), m.cast()));
                    ck.arrays.push((format!("opt.{tag}.v.{name}"), v.cast()));
                }
            }
        }
        ck
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:07}.ckpt"))
}

#[allow(clippy::type_complexity)]
fn read_moments<T: Real>(
    ck: &Checkpoint,
    model: &VoiceModel<T>,
    ids: &[ParamId],
    tag: &str,
) -> Result<Vec<(ParamId, Tensor<T>, Tensor<T>)>> {
    let mut out = Vec::new();
    for &id in ids {
        let name = model.store().name(id);
        let m = ck.array(&format!("opt.{tag}.m.{name}"));
        let v = ck.array(&format!("opt.{tag}.v.{name}"));
        match (m, v) {
            (Some(m), Some(v)) => {
                let shape = model.store().get(id).shape();
                if m.shape() != shape || v.shape() != shape {
                    return Err(Error::Checkpoint(format!("optimizer state for `{name}` has the wrong shape")));
                }
                out.push((id, m.cast(), v.cast()));
            }
            (None, None) => {}
            _ => return Err(Error::Checkpoint(format!("incomplete optimizer state for `{name}`"))),
        }
    }
    Ok(out)
}

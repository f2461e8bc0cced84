//! Text plus a reference recording in, waveform out. The posterior encoder
//! and alignment search are not involved here.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voxclone_tensor::Tensor;

use crate::audio::{write_wav, Waveform, MODEL_SAMPLE_RATE};
use crate::corpus::{CharacterVocabulary, Manifest};
use crate::nn::{extract_speaker_embedding, Checkpoint, SpeakerEmbedding, SpeakerEncoder, VoiceModel};
use crate::training::{derive_seed, load_model_audio, CheckpointMeta};
use crate::{Error, Real, Result};

pub const DEFAULT_NOISE_SCALE: f64 = 0.667;
pub const DEFAULT_DURATION_NOISE_SCALE: f64 = 0.8;
pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Uniform choice among the speaker's utterances.
    RandomSeeded(u64),
    Explicit(PathBuf),
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        Self::RandomSeeded(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub text: String,
    pub language_id: String,
    pub target_speaker_id: String,
    #[serde(default)]
    pub reference_policy: ReferencePolicy,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default = "default_duration_noise")]
    pub duration_noise_scale: f64,
    #[serde(default = "default_length")]
    pub length_scale: f64,
    /// Seed for the prior and duration noise. Batch runs derive one from the
    /// root seed and the line number when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_SCALE
}

fn default_duration_noise() -> f64 {
    DEFAULT_DURATION_NOISE_SCALE
}

fn default_length() -> f64 {
    DEFAULT_LENGTH_SCALE
}

impl SynthesisRequest {
    pub fn new(text: impl Into<String>, language_id: impl Into<String>, speaker: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            language_id: language_id.into(),
            target_speaker_id: speaker.into(),
            reference_policy: ReferencePolicy::default(),
            noise_scale: DEFAULT_NOISE_SCALE,
            duration_noise_scale: DEFAULT_DURATION_NOISE_SCALE,
            length_scale: DEFAULT_LENGTH_SCALE,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::InvalidArgument("empty text".into()));
        }
        for (name, v) in [("noise_scale", self.noise_scale), ("duration_noise_scale", self.duration_noise_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "length_scale must be > 0, got {}",
                self.length_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub waveform: Waveform<f32>,
    pub durations: Vec<usize>,
    pub reference_used: PathBuf,
}

/// Reference recording for `speaker_id`.
pub fn select_reference(speaker_id: &str, manifest: &Manifest, policy: &ReferencePolicy) -> Result<PathBuf> {
    if let ReferencePolicy::Explicit(p) = policy {
        return Ok(p.clone());
    }
    let utts: Vec<_> = manifest.utterances_of(speaker_id).collect();
    if utts.is_empty() {
        return Err(Error::UnknownSpeaker {
            speaker: speaker_id.to_string(),
            known: manifest.speakers().iter().cloned().collect::<Vec<_>>().join(", "),
        });
    }
    let ReferencePolicy::RandomSeeded(seed) = policy else {
        unreachable!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    Ok(utts[rng.gen_range(0..utts.len())].audio_path.clone())
}

/// A loaded model with everything needed to serve requests. Shared
/// references may be used from several threads at once.
pub struct Synthesizer<T: Real> {
    model: VoiceModel<T>,
    vocab: CharacterVocabulary,
    languages: Vec<String>,
    manifest: Manifest,
    encoder: Box<dyn SpeakerEncoder>,
}

impl<T: Real> Synthesizer<T> {
    pub fn new(
        model: VoiceModel<T>,
        vocab: CharacterVocabulary,
        languages: Vec<String>,
        manifest: Manifest,
        encoder: Box<dyn SpeakerEncoder>,
    ) -> Result<Self> {
        if encoder.dim() != model.config().spk_emb_dim {
            return Err(Error::Config(format!(
                "speaker encoder emits {} dims, model expects {}",
                encoder.dim(),
                model.config().spk_emb_dim
            )));
        }
        Ok(Self {
            model,
            vocab,
            languages,
            manifest,
            encoder,
        })
    }

    /// `manifest` supplies reference recordings for seeded selection.
    pub fn from_checkpoint(ck: &Checkpoint, manifest: Manifest, encoder: Box<dyn SpeakerEncoder>) -> Result<Self> {
        let meta = CheckpointMeta::from_checkpoint(ck)?;
        let model = VoiceModel::from_checkpoint(ck)?;
        Self::new(model, meta.vocabulary()?, meta.languages, manifest, encoder)
    }

    pub fn model(&self) -> &VoiceModel<T> {
        &self.model
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    /// Embedding of a reference file after resampling and peak normalization.
    pub fn reference_embedding(&self, path: &Path) -> Result<SpeakerEmbedding<T>> {
        let w = load_model_audio(path)?;
        extract_speaker_embedding(&w, self.encoder.as_ref())
    }

    /// Synthesizes with an explicitly supplied speaker embedding.
    pub fn synthesize_with_embedding(
        &self,
        req: &SynthesisRequest,
        spk: &SpeakerEmbedding<T>,
        seed: u64,
    ) -> Result<(Waveform<f32>, Vec<usize>)> {
        req.validate()?;
        let language = self
            .languages
            .iter()
            .position(|l| *l == req.language_id)
            .ok_or_else(|| {
                Error::UnknownLanguage(format!("{} (known: {})", req.language_id, self.languages.join(", ")))
            })?;
        let symbols = self.vocab.encode(&req.text);
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("text encodes to no symbols".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = self.model.encode_text(&symbols, language, spk)?;
        let durations =
            self.model
                .predict_durations(&enc, spk, req.duration_noise_scale, req.length_scale, &mut rng)?;
        let states: Vec<usize> = durations
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
            .collect();
        let latent = self.model.config().latent_dim;
        let noise: Tensor<T> = if req.noise_scale == 0.0 {
            Tensor::zeros(latent, states.len())
        } else {
            Tensor::randn(latent, states.len(), req.noise_scale, &mut rng)
        };
        let z_p = Tensor::from_fn(latent, states.len(), |c, t| {
            let s = states[t];
            enc.prior_mean.at(c, s) + noise.at(c, t) * enc.prior_logstd.at(c, s).exp()
        });
        let (z, _) = self.model.flow_inverse(&z_p, spk)?;
        let samples: Vec<f32> = self
            .model
            .vocode(&z, spk)?
            .into_iter()
            .map(|s| s.to_f32().unwrap_or(0.0))
            .collect();
        Ok((Waveform::new(samples, MODEL_SAMPLE_RATE)?, durations))
    }

    /// Full request path with reference selection.
    pub fn synthesize(&self, req: &SynthesisRequest, seed: u64) -> Result<SynthesisResult> {
        req.validate()?;
        let reference = select_reference(&req.target_speaker_id, &self.manifest, &req.reference_policy)?;
        let spk = self.reference_embedding(&reference)?;
        let (waveform, durations) = self.synthesize_with_embedding(req, &spk, req.seed.unwrap_or(seed))?;
        Ok(SynthesisResult {
            waveform,
            durations,
            reference_used: reference,
        })
    }

    /// Runs every line of a JSONL request file. Outputs for line `i` go to
    /// `i.wav` plus `i.json`, failures to `i.error.json`; one bad request
    /// never stops the rest.
    pub fn batch_synthesize(
        &self,
        requests: &Path,
        out_dir: &Path,
        root_seed: u64,
        workers: usize,
    ) -> Result<BatchReport> {
        let text = fs::read_to_string(requests)?;
        fs::create_dir_all(out_dir)?;
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let workers = workers.max(1).min(lines.len().max(1));
        let chunk = lines.len().div_ceil(workers).max(1);
        let mut outcomes: Vec<RequestOutcome> = std::thread::scope(|s| {
            let handles: Vec<_> = lines
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|&(i, line)| self.run_line(i, line, out_dir, root_seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("synthesis worker panicked"))
                .collect()
        });
        outcomes.sort_by_key(|o| o.index);
        Ok(BatchReport { outcomes })
    }

    fn run_line(&self, i: usize, line: &str, out_dir: &Path, root_seed: u64) -> RequestOutcome {
        let stem = format!("{i:04}");
        let result = serde_json::from_str::<SynthesisRequest>(line)
            .map_err(Error::from)
            .and_then(|req| {
                let r = self.synthesize(&req, derive_seed(root_seed, i as u64, 0))?;
                let wav = out_dir.join(format!("{stem}.wav"));
                let json = out_dir.join(format!("{stem}.json"));
                write_wav(&wav, &r.waveform)?;
                let meta = serde_json::json!({
                    "durations": r.durations,
                    "reference_used": r.reference_used,
                    "config_hash": self.model.config().hash(),
                    "samples": r.waveform.len(),
                    "request": req,
                });
                fs::write(&json, serde_json::to_string_pretty(&meta)? + "\n")?;
                Ok(vec![wav, json])
            });
        match result {
            Ok(artifacts) => RequestOutcome {
                index: i,
                artifacts,
                error: None,
            },
            Err(e) => {
                let path = out_dir.join(format!("{stem}.error.json"));
                let body = serde_json::json!({ "line": i + 1, "error": e.to_string() });
                let written = fs::write(&path, body.to_string() + "\n").is_ok();
                RequestOutcome {
                    index: i,
                    artifacts: if written { vec![path] } else { vec![] },
                    error: Some(e.to_string()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutcome {
    /// Zero-based line number in the request file.
    pub index: usize,
    pub artifacts: Vec<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchReport {
    pub outcomes: Vec<RequestOutcome>,
}

impl BatchReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.error.is_some()).count()
    }

    pub fn succeeded(&self) -> usize {
        self.outcomes.len() - self.failed()
    }
}

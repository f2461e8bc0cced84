use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use voxclone_tensor::Tensor;

use crate::audio::{linear_spectrogram, MelFilterbank, StftConfig, Waveform, MODEL_SAMPLE_RATE};
use crate::{Error, Real, Result};

/// Minimum reference length accepted by [`extract_speaker_embedding`].
pub const MIN_REFERENCE_S: f64 = 0.5;

/// Unit-norm speaker identity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding<T> {
    vector: Vec<T>,
}

impl<T: Real> SpeakerEmbedding<T> {
    /// L2-normalizes `raw`.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Model("speaker vector has zero or non-finite norm".into()));
        }
        Ok(Self {
            vector: raw.iter().map(|v| T::lit(v / norm)).collect(),
        })
    }

    pub fn vector(&self) -> &[T] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// `[dim, 1]` column.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::column(&self.vector)
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a.to_f64().unwrap_or(0.0) * b.to_f64().unwrap_or(0.0))
            .sum()
    }

    pub fn cast<U: Real>(&self) -> SpeakerEmbedding<U> {
        SpeakerEmbedding {
            vector: self.vector.iter().map(|v| U::lit(v.to_f64().unwrap_or(0.0))).collect(),
        }
    }
}

/// Maps a 16 kHz waveform to a fixed-length (not necessarily normalized) vector.
pub trait SpeakerEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, w: &Waveform<f32>) -> Result<Vec<f64>>;
}

/// Deterministic stand-in for a pretrained speaker encoder: per-band log-mel
/// mean and standard deviation, each centered across bands, projected by a
/// fixed random matrix.
#[derive(Debug, Clone)]
pub struct StubSpeakerEncoder {
    stft: StftConfig,
    mel: MelFilterbank,
    projection: Tensor<f64>,
}

impl StubSpeakerEncoder {
    pub const N_MELS: usize = 80;
    pub const DEFAULT_SEED: u64 = 0x5eed_5bea;

    pub fn new(dim: usize, seed: u64) -> Self {
        let stft = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_feat = 2 * Self::N_MELS;
        let projection = Tensor::from_fn(dim, n_feat, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v / (n_feat as f64).sqrt()
        });
        Self {
            mel: MelFilterbank::new(stft.sample_rate, stft.fft_size, Self::N_MELS, 0.0, None),
            stft,
            projection,
        }
    }
}

impl SpeakerEncoder for StubSpeakerEncoder {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.projection.rows()
    }

    fn embed(&self, w: &Waveform<f32>) -> Result<Vec<f64>> {
        let spec = linear_spectrogram(&w.cast::<f64>(), &self.stft)?;
        let lm = self.mel.log_mel(&spec);
        let (bands, frames) = lm.shape();
        let mut mean = vec![0.0; bands];
        let mut std = vec![0.0; bands];
        for b in 0..bands {
            let row = lm.row(b);
            let m = row.iter().sum::<f64>() / frames as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / frames as f64;
            mean[b] = m;
            std[b] = v.sqrt();
        }
        for part in [&mut mean, &mut std] {
            let c = part.iter().sum::<f64>() / bands as f64;
            part.iter_mut().for_each(|x| *x -= c);
        }
        let feats: Vec<f64> = mean.into_iter().chain(std).collect();
        let out = self.projection.matmul(false, &Tensor::column(&feats), false)?;
        Ok(out.into_data())
    }
}

/// Runs `encoder` on a 16 kHz reference of at least half a second and
/// L2-normalizes the result.
pub fn extract_speaker_embedding<T: Real>(
    w: &Waveform<f32>,
    encoder: &dyn SpeakerEncoder,
) -> Result<SpeakerEmbedding<T>> {
    if w.sample_rate() != MODEL_SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "speaker encoder expects {MODEL_SAMPLE_RATE} Hz, got {} Hz",
            w.sample_rate()
        )));
    }
    if w.duration_s() < MIN_REFERENCE_S {
        return Err(Error::Audio(format!(
            "reference of {:.3} s is shorter than {MIN_REFERENCE_S} s",
            w.duration_s()
        )));
    }
    let raw = encoder.embed(w)?;
    if raw.len() != encoder.dim() {
        return Err(Error::Model(format!(
            "`{}` returned {} values, expected {}",
            encoder.name(),
            raw.len(),
            encoder.dim()
        )));
    }
    SpeakerEmbedding::from_raw(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Harmonic series at `f0` shaped by two fixed formants.
    fn vowel(f0: f64, seconds: f64) -> Waveform<f32> {
        let n = (seconds * 16_000.0) as usize;
        let formant = |f: f64| (-((f - 700.0) / 150.0).powi(2)).exp() + 0.6 * (-((f - 1200.0) / 200.0).powi(2)).exp() + 0.02;
        let mut s: Vec<f64> = vec![0.0; n];
        let mut h = 1;
        while f0 * h as f64 <= 7000.0 {
            let f = f0 * h as f64;
            let a = formant(f);
            for (i, v) in s.iter_mut().enumerate() {
                *v += a * (2.0 * PI * f * i as f64 / 16_000.0).sin();
            }
            h += 1;
        }
        let peak = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Waveform::new(s.iter().map(|x| (0.9 * x / peak) as f32).collect(), 16_000).unwrap()
    }

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let enc = StubSpeakerEncoder::new(256, StubSpeakerEncoder::DEFAULT_SEED);
        let w = vowel(200.0, 1.0);
        let a: SpeakerEmbedding<f32> = extract_speaker_embedding(&w, &enc).unwrap();
        let b: SpeakerEmbedding<f32> = extract_speaker_embedding(&w, &enc).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.vector().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(a.dim(), 256);
    }

    #[test]
    fn stub_separates_pitches() {
        let enc = StubSpeakerEncoder::new(256, StubSpeakerEncoder::DEFAULT_SEED);
        let a: SpeakerEmbedding<f64> = extract_speaker_embedding(&vowel(200.0, 1.0), &enc).unwrap();
        let b: SpeakerEmbedding<f64> = extract_speaker_embedding(&vowel(400.0, 1.0), &enc).unwrap();
        let cos = a.cosine(&b);
        assert!(cos < 0.99, "cosine {cos}");
    }

    #[test]
    fn rejects_short_or_wrong_rate_reference() {
        let enc = StubSpeakerEncoder::new(16, 1);
        assert!(extract_speaker_embedding::<f32>(&vowel(200.0, 0.3), &enc).is_err());
        let w = Waveform::new(vec![0.1f32; 20_000], 22_050).unwrap();
        assert!(extract_speaker_embedding::<f32>(&w, &enc).is_err());
    }
}

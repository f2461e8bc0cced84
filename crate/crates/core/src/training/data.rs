use std::path::Path;

use voxclone_tensor::Tensor;

use crate::audio::{
    linear_spectrogram, normalize_volume, read_wav, resample, Waveform, DEFAULT_PEAK, MODEL_SAMPLE_RATE,
};
use crate::corpus::{CharacterVocabulary, Utterance};
use crate::nn::{extract_speaker_embedding, ModelConfig, SpeakerEncoder};
use crate::{Error, Real, Result};

/// Reads a WAV and brings it to the model's rate and peak level.
pub fn load_model_audio(path: impl AsRef<Path>) -> Result<Waveform<f32>> {
    let w = read_wav(path)?;
    let w = resample(&w, MODEL_SAMPLE_RATE)?;
    normalize_volume(&w, DEFAULT_PEAK)
}

/// Model-ready tensors for one utterance.
#[derive(Debug, Clone)]
pub struct PreparedUtterance<T> {
    pub speaker_id: String,
    pub symbols: Vec<usize>,
    pub language: usize,
    /// `[spk_emb_dim, 1]`.
    pub speaker: Tensor<T>,
    /// `[F, T_spec]`.
    pub spec: Tensor<T>,
    /// Samples zero-padded to `T_spec · hop`.
    pub wave: Vec<T>,
}

pub fn prepare_utterance<T: Real>(
    u: &Utterance,
    vocab: &CharacterVocabulary,
    languages: &[String],
    cfg: &ModelConfig,
    encoder: &dyn SpeakerEncoder,
) -> Result<PreparedUtterance<T>> {
    let language = languages
        .iter()
        .position(|l| *l == u.language_id)
        .ok_or_else(|| Error::UnknownLanguage(u.language_id.clone()))?;
    let symbols = vocab.encode(&u.text);
    let w = load_model_audio(&u.audio_path)?;
    let spec = linear_spectrogram(&w.cast::<T>(), &cfg.stft)?;
    let t_spec = spec.n_frames();
    if t_spec < symbols.len() {
        return Err(Error::InvalidUtterance(format!(
            "{}: {t_spec} frames for {} characters",
            u.audio_path.display(),
            symbols.len()
        )));
    }
    let spk = extract_speaker_embedding::<T>(&w, encoder)?;
    let mut wave: Vec<T> = w.samples().iter().map(|&s| T::lit(s as f64)).collect();
    wave.resize(t_spec * cfg.hop(), T::zero());
    Ok(PreparedUtterance {
        speaker_id: u.speaker_id.clone(),
        symbols,
        language,
        speaker: spk.to_tensor(),
        spec: spec.magnitudes,
        wave,
    })
}

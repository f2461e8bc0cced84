//! Few-shot multi-speaker, multilingual voice cloning.
//!
//! A conditional-VAE text-to-speech model with a speaker-aware text encoder,
//! a normalizing-flow decoder whose couplings carry transformer blocks, a
//! stochastic duration predictor trained from monotonic alignment search
//! (with decaying Gaussian noise), and a GAN vocoder. Training runs in two
//! stages: pre-training on a base corpus, then fine-tuning on a mix of the
//! base corpus and a few minutes of target-speaker audio under
//! speaker-balanced sampling.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the training precision.

pub mod alignment;
pub mod audio;
pub mod corpus;
mod error;
pub mod inference;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
pub use voxclone_tensor as tensor;
pub use voxclone_tensor::Scalar;

/// Element type for every numeric routine in this crate.
pub trait Real: Scalar + rustfft::FftNum {}
impl<T: Scalar + rustfft::FftNum> Real for T {}

/// Single-precision model, the precision used for training and synthesis.
pub type VoiceModel = nn::VoiceModel<f32>;
/// Double-precision model, used for gradient checks.
pub type VoiceModel64 = nn::VoiceModel<f64>;
pub type Waveform = audio::Waveform<f32>;
pub type LinearSpectrogram = audio::LinearSpectrogram<f32>;
pub type SpeakerEmbedding = nn::SpeakerEmbedding<f32>;
pub type Trainer = training::Trainer<f32>;

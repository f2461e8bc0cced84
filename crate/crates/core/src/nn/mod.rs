//! Neural components. Every sequence tensor is laid out `[channels, time]`.

mod blocks;
mod checkpoint;
mod config;
mod discriminator;
mod duration;
mod flow;
mod model;
mod posterior;
mod speaker;
mod text;
mod vocoder;

pub use blocks::{DilatedConvStack, TransformerBlock, WaveNet};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use discriminator::{DiscOutput, Discriminators};
pub use duration::{durations_from_log, DurationPredictor};
pub use flow::{AffineCoupling, Flow};
pub use model::{LatentSequence, TextEncoding, VoiceModel, DISCRIMINATOR_PREFIX, GENERATOR_PREFIX};
pub use posterior::{LatentVars, PosteriorEncoder, LOGSTD_BOUND};
pub use speaker::{
    extract_speaker_embedding, SpeakerEmbedding, SpeakerEncoder, StubSpeakerEncoder, MIN_REFERENCE_S,
};
pub use text::{TextEncoder, TextVars};
pub use vocoder::Vocoder;

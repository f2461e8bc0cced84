//! Two-stage training: pre-training, then speaker-balanced fine-tuning.

mod config;
mod data;
mod losses;
mod sampler;
mod trainer;

pub use config::{
    lr_at, DecayUnit, LossWeights, OptimizerConfig, SamplerConfig, SamplingStrategy, ScheduleConfig, TrainConfig,
};
pub use data::{load_model_audio, prepare_utterance, PreparedUtterance};
pub use losses::{
    alignment_log_likelihood, discriminator_loss, feature_match_loss, generator_adv_loss, kl_loss, mel_recon_loss,
    LossBreakdown, MelTransform,
};
pub use sampler::{balanced_sampler, mixup_datasets, Sampler};
pub use trainer::{checkpoint_path, CheckpointMeta, RunOutputs, Stage, StepReport, Trainer, TrainingState};
pub(crate) use trainer::derive_seed;

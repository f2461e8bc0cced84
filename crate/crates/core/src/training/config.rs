use serde::{Deserialize, Serialize};

use crate::alignment::NoiseSchedule;
use crate::nn::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    Epoch,
    Step,
}

/// Exponential learning-rate decay: `initial_lr · gamma^index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial_lr: f64,
    pub gamma: f64,
    pub decay_unit: DecayUnit,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl ScheduleConfig {
    pub fn pretrain() -> Self {
        Self {
            initial_lr: 2e-4,
            gamma: 0.999875,
            decay_unit: DecayUnit::Epoch,
        }
    }

    pub fn finetune() -> Self {
        Self {
            initial_lr: 1e-4,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be > 0, got {}", self.initial_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Decay index for a step counted from the start of the stage.
    pub fn index(&self, stage_step: u64, steps_per_epoch: u64) -> u64 {
        match self.decay_unit {
            DecayUnit::Step => stage_step,
            DecayUnit::Epoch => stage_step / steps_per_epoch.max(1),
        }
    }
}

pub fn lr_at(index: u64, sched: &ScheduleConfig) -> f64 {
    sched.initial_lr * sched.gamma.powf(index as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Uniform,
            seed: 0,
            batch_size: 4,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mel: f64,
    pub kl: f64,
    pub feature_match: f64,
    pub adversarial: f64,
    pub duration: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 45.0,
            kl: 1.0,
            feature_match: 2.0,
            adversarial: 1.0,
            duration: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
            weight_decay: 0.0,
        }
    }
}

/// Everything a training run reads from its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `n_symbols` and `n_languages` are overwritten from the data.
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub finetune_schedule: ScheduleConfig,
    /// Strategy here applies to pre-training; fine-tuning always balances speakers.
    pub sampler: SamplerConfig,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub mas_noise: NoiseSchedule,
    /// Frames per vocoder training slice.
    pub segment_frames: usize,
    /// Root seed for initialization, noise and slicing.
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::pretrain(),
            finetune_schedule: ScheduleConfig::finetune(),
            sampler: SamplerConfig::default(),
            losses: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            mas_noise: NoiseSchedule::default(),
            segment_frames: 32,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.finetune_schedule.validate()?;
        self.sampler.validate()?;
        if self.segment_frames == 0 {
            return Err(Error::Config("segment_frames must be at least 1".into()));
        }
        NoiseSchedule::new(self.mas_noise.initial_scale, self.mas_noise.decay_per_step)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_values() {
        let s = ScheduleConfig::pretrain();
        assert_eq!(lr_at(0, &s), 2e-4);
        assert_eq!(lr_at(1, &s), 1.99975e-4);
        assert_eq!(lr_at(0, &ScheduleConfig::finetune()), 1e-4);
        let flat = ScheduleConfig { gamma: 1.0, ..s };
        assert_eq!(lr_at(12345, &flat), 2e-4);
        for i in 0..100 {
            assert!(lr_at(i + 1, &s) < lr_at(i, &s));
        }
    }

    #[test]
    fn decay_index_by_unit() {
        let mut s = ScheduleConfig::pretrain();
        assert_eq!(s.index(9, 5), 1);
        assert_eq!(s.index(10, 5), 2);
        s.decay_unit = DecayUnit::Step;
        assert_eq!(s.index(9, 5), 9);
    }

    #[test]
    fn validation() {
        assert!(ScheduleConfig { gamma: 1.5, ..ScheduleConfig::pretrain() }.validate().is_err());
        assert!(ScheduleConfig { initial_lr: 0.0, ..ScheduleConfig::pretrain() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.sampler.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let c: TrainConfig = serde_json::from_str(r#"{"schedule": {"decay_unit": "step"}}"#).unwrap();
        assert_eq!(c.schedule.decay_unit, DecayUnit::Step);
        assert_eq!(c.schedule.initial_lr, 2e-4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"schedule": {"gama": 1}}"#).is_err());
    }
}

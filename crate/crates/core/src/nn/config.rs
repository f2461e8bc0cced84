use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::StftConfig;
use crate::{Error, Result};

/// Architecture and DSP hyperparameters. Defaults are desk-scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size including reserved symbols.
    pub n_symbols: usize,
    pub n_languages: usize,

    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub ffn_kernel: usize,
    pub n_text_blocks: usize,
    /// 1-based index of the text-encoder block whose input receives the speaker embedding.
    pub speaker_inject_block: usize,
    pub lang_emb_dim: usize,
    pub spk_emb_dim: usize,
    pub latent_dim: usize,

    pub posterior_layers: usize,
    pub posterior_kernel: usize,

    pub n_flow_steps: usize,
    pub flow_wn_layers: usize,
    pub flow_kernel: usize,

    pub dp_channels: usize,
    pub dp_flows: usize,
    pub dp_kernel: usize,
    pub dp_conv_layers: usize,

    pub upsample_factors: Vec<usize>,
    pub vocoder_channels: usize,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<usize>,

    pub stft: StftConfig,
    pub n_mels: usize,

    pub disc_periods: Vec<usize>,
    pub disc_channels: usize,
    pub msd_scales: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_symbols: 2,
            n_languages: 1,
            hidden_dim: 64,
            n_heads: 2,
            ffn_dim: 128,
            ffn_kernel: 3,
            n_text_blocks: 6,
            speaker_inject_block: 6,
            lang_emb_dim: 4,
            spk_emb_dim: 256,
            latent_dim: 64,
            posterior_layers: 4,
            posterior_kernel: 5,
            n_flow_steps: 4,
            flow_wn_layers: 2,
            flow_kernel: 5,
            dp_channels: 32,
            dp_flows: 4,
            dp_kernel: 3,
            dp_conv_layers: 3,
            upsample_factors: vec![8, 8, 4],
            vocoder_channels: 64,
            resblock_kernels: vec![3, 7],
            resblock_dilations: vec![1, 3],
            stft: StftConfig::default(),
            n_mels: 80,
            disc_periods: vec![2, 3, 5, 7, 11],
            disc_channels: 16,
            msd_scales: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.stft.validate()?;
        if self.n_symbols < 2 || self.n_languages < 1 {
            return fail("need at least the reserved symbols and one language".into());
        }
        if self.n_text_blocks == 0
            || self.speaker_inject_block == 0
            || self.speaker_inject_block > self.n_text_blocks
        {
            return fail(format!(
                "speaker_inject_block must lie in [1, {}], got {}",
                self.n_text_blocks, self.speaker_inject_block
            ));
        }
        if self.lang_emb_dim >= self.hidden_dim {
            return fail("lang_emb_dim must be smaller than hidden_dim".into());
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return fail("hidden_dim must be divisible by n_heads".into());
        }
        if self.latent_dim < 2 || !self.latent_dim.is_multiple_of(2) {
            return fail("latent_dim must be even".into());
        }
        let product: usize = self.upsample_factors.iter().product();
        if product != self.stft.hop {
            return fail(format!(
                "vocoder upsample factors multiply to {product}, hop is {}",
                self.stft.hop
            ));
        }
        if self.upsample_factors.iter().any(|&f| f == 0 || f % 2 != 0) {
            return fail("upsample factors must be positive and even".into());
        }
        if self.vocoder_channels >> self.upsample_factors.len() == 0 {
            return fail("vocoder_channels too small for the number of upsampling stages".into());
        }
        if self.resblock_kernels.is_empty() || self.resblock_dilations.is_empty() {
            return fail("vocoder needs at least one residual kernel and dilation".into());
        }
        for k in [self.ffn_kernel, self.posterior_kernel, self.flow_kernel, self.dp_kernel] {
            if k % 2 == 0 {
                return fail("convolution kernels must be odd".into());
            }
        }
        if self.disc_periods.iter().any(|&p| p < 2) {
            return fail("discriminator periods must be at least 2".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn hop(&self) -> usize {
        self.stft.hop
    }

    pub fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }

    /// Dimensions used by small unit tests.
    pub fn tiny() -> Self {
        Self {
            n_symbols: 12,
            n_languages: 2,
            hidden_dim: 16,
            n_heads: 2,
            ffn_dim: 24,
            n_text_blocks: 2,
            speaker_inject_block: 2,
            lang_emb_dim: 4,
            spk_emb_dim: 8,
            latent_dim: 8,
            posterior_layers: 2,
            flow_wn_layers: 1,
            n_flow_steps: 2,
            dp_channels: 8,
            dp_flows: 2,
            dp_conv_layers: 2,
            vocoder_channels: 16,
            disc_channels: 4,
            disc_periods: vec![2, 3],
            msd_scales: 1,
            ..Self::default()
        }
    }
}

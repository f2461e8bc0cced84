use rand::Rng;
use voxclone_tensor::layers::{Conv1d, Init};
use voxclone_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::blocks::TransformerBlock;
use super::ModelConfig;
use crate::{Error, Real, Result};

/// Graph handles for a text encoding, each `[channels, T_text]`.
#[derive(Debug, Clone, Copy)]
pub struct TextVars {
    pub hidden: Var,
    pub prior_mean: Var,
    pub prior_logstd: Var,
}

/// Character plus language embedding, transformer stack with the speaker
/// added at the input of one block, and a linear head for prior statistics.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    symbols: ParamId,
    languages: ParamId,
    blocks: Vec<TransformerBlock>,
    spk_proj: Conv1d,
    head: Conv1d,
    inject_at: usize,
    n_symbols: usize,
    n_languages: usize,
    latent_dim: usize,
}

impl TextEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let sym_dim = cfg.hidden_dim - cfg.lang_emb_dim;
        let symbols = store.register(
            format!("{name}.symbols"),
            Tensor::randn(sym_dim, cfg.n_symbols, 1.0, rng),
        )?;
        let languages = store.register(
            format!("{name}.languages"),
            Tensor::randn(cfg.lang_emb_dim, cfg.n_languages, 1.0, rng),
        )?;
        let blocks = (0..cfg.n_text_blocks)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("{name}.block{i}"),
                    cfg.hidden_dim,
                    cfg.n_heads,
                    cfg.ffn_dim,
                    cfg.ffn_kernel,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let spk_proj = Conv1d::pointwise(
            store,
            &format!("{name}.spk_proj"),
            cfg.spk_emb_dim,
            cfg.hidden_dim,
            Init::FanIn,
            rng,
        )?;
        let head = Conv1d::pointwise(
            store,
            &format!("{name}.head"),
            cfg.hidden_dim,
            2 * cfg.latent_dim,
            Init::FanIn,
            rng,
        )?;
        Ok(Self {
            symbols,
            languages,
            blocks,
            spk_proj,
            head,
            inject_at: cfg.speaker_inject_block - 1,
            n_symbols: cfg.n_symbols,
            n_languages: cfg.n_languages,
            latent_dim: cfg.latent_dim,
        })
    }

    pub fn check_input(&self, symbols: &[usize], language: usize) -> Result<()> {
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("empty symbol sequence".into()));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s >= self.n_symbols) {
            return Err(Error::InvalidArgument(format!(
                "symbol {s} outside vocabulary of {}",
                self.n_symbols
            )));
        }
        if language >= self.n_languages {
            return Err(Error::UnknownLanguage(format!(
                "index {language} (model has {})",
                self.n_languages
            )));
        }
        Ok(())
    }

    /// `spk` is a `[spk_emb_dim, 1]` column.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        symbols: &[usize],
        language: usize,
        spk: Var,
    ) -> Result<TextVars> {
        self.check_input(symbols, language)?;
        let table = g.param(store, self.symbols);
        let chars = g.gather_cols(table, symbols);
        let langs = g.param(store, self.languages);
        let lang = g.gather_cols(langs, &vec![language; symbols.len()]);
        let mut x = g.concat_rows(&[chars, lang]);
        for (i, block) in self.blocks.iter().enumerate() {
            if i == self.inject_at {
                let s = self.spk_proj.forward(g, store, spk);
                x = g.add(x, s);
            }
            x = block.forward(g, store, x);
        }
        let stats = self.head.forward(g, store, x);
        let c = self.latent_dim;
        Ok(TextVars {
            hidden: x,
            prior_mean: g.slice_rows(stats, 0, c),
            prior_logstd: g.slice_rows(stats, c, c),
        })
    }
}

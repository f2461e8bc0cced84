use voxclone_core::corpus::Manifest;
use voxclone_core::inference::Synthesizer;

use crate::{load_checkpoint, load_config, speaker_encoder, usage, CmdResult, Outcome, SynthesizeArgs};

pub fn run(args: &SynthesizeArgs) -> CmdResult {
    let ck = load_checkpoint(&args.checkpoint)?;
    if let Some(p) = &args.config {
        let mut model = load_config(p)?.model;
        model.n_symbols = ck.header.config.n_symbols;
        model.n_languages = ck.header.config.n_languages;
        let hash = model.hash();
        if hash != ck.header.config_hash {
            return Err(usage(format!(
                "{} describes model {hash}, checkpoint holds {}",
                p.display(),
                ck.header.config_hash
            )));
        }
    }
    let manifest = Manifest::load(&args.manifest)?;
    let enc = speaker_encoder(ck.header.config.spk_emb_dim);
    let synth = Synthesizer::<f32>::from_checkpoint(&ck, manifest, Box::new(enc))?;
    let report = synth.batch_synthesize(
        &args.requests,
        &args.out,
        args.common.seed.unwrap_or(0),
        args.common.workers,
    )?;
    for o in &report.outcomes {
        if let Some(e) = &o.error {
            eprintln!("request {}: {e}", o.index + 1);
        }
    }
    Ok(Outcome {
        summary: format!("synthesized {}, failed {}", report.succeeded(), report.failed()),
        artifacts: report.outcomes.iter().flat_map(|o| o.artifacts.clone()).collect(),
        failed: report.failed() > 0,
    })
}

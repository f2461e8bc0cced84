use std::fs;

use voxclone_core::corpus::Manifest;
use voxclone_core::training::{CheckpointMeta, RunOutputs, StepReport, TrainConfig, Trainer};

use crate::{load_checkpoint, load_config, runtime, speaker_encoder, CmdResult, FinetuneArgs, Outcome, PretrainArgs};

fn run_dir(out: &std::path::Path) -> RunOutputs {
    RunOutputs {
        checkpoint_dir: Some(out.join("checkpoints")),
        log_path: Some(out.join("train_log.jsonl")),
    }
}

fn finish(trainer: &mut Trainer<f32>, steps: u64, out: &std::path::Path, label: &str) -> CmdResult {
    fs::create_dir_all(out).map_err(runtime)?;
    let outputs = run_dir(out);
    let reports: Vec<StepReport> = trainer.run(steps, &outputs)?;
    let last = reports
        .last()
        .map(|r| format!(", last total {:.4} at lr {:.3e}", r.losses.total, r.lr))
        .unwrap_or_default();
    let dir = outputs.checkpoint_dir.expect("set above");
    Ok(Outcome {
        summary: format!("{label}: {steps} step(s), now at step {}{last}", trainer.step()),
        artifacts: vec![dir.join("latest.ckpt"), outputs.log_path.expect("set above")],
        failed: false,
    })
}

pub fn pretrain(args: &PretrainArgs) -> CmdResult {
    let manifest = Manifest::load(&args.manifest)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            if args.config.is_some() || args.common.seed.is_some() {
                return Err(crate::usage("--resume continues with the checkpoint's config and seed"));
            }
            let ck = load_checkpoint(path)?;
            let enc = speaker_encoder(ck.header.config.spk_emb_dim);
            Trainer::<f32>::resume(&ck, &manifest, &enc)?
        }
        None => {
            let mut cfg = match &args.config {
                Some(p) => load_config(p)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = args.common.seed {
                cfg.seed = seed;
                cfg.sampler.seed = seed;
            }
            if let Some(k) = args.checkpoint_every {
                cfg.checkpoint_every = k;
            }
            let enc = speaker_encoder(cfg.model.spk_emb_dim);
            Trainer::<f32>::pretrain(&manifest, cfg, &enc)?
        }
    };
    finish(&mut trainer, args.steps, &args.out, "pretrain")
}

pub fn finetune(args: &FinetuneArgs) -> CmdResult {
    let ck = load_checkpoint(&args.pretrained)?;
    let pre = Manifest::load(&args.pretrain_manifest)?;
    let mut few = Manifest::load(&args.fewshot_manifest)?;
    if let Some(p) = &args.speaker_prefix {
        few = few.with_speaker_prefix(p);
    }
    let mut cfg = match &args.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    if args.common.seed.is_some() || args.checkpoint_every.is_some() {
        let mut c = match cfg {
            Some(c) => c,
            None => CheckpointMeta::from_checkpoint(&ck)?
                .training
                .ok_or_else(|| crate::usage("checkpoint carries no training state"))?
                .config,
        };
        if let Some(seed) = args.common.seed {
            c.seed = seed;
            c.sampler.seed = seed;
        }
        if let Some(k) = args.checkpoint_every {
            c.checkpoint_every = k;
        }
        cfg = Some(c);
    }
    let enc = speaker_encoder(ck.header.config.spk_emb_dim);
    let mut trainer = Trainer::<f32>::finetune_with_config(&ck, &pre, &few, &enc, cfg)?;
    finish(&mut trainer, args.steps, &args.out, "finetune")
}

mod common;

use std::collections::BTreeSet;

use voxclone_core::corpus::Manifest;
use voxclone_core::nn::{Checkpoint, StubSpeakerEncoder};
use voxclone_core::training::{
    mixup_datasets, CheckpointMeta, DecayUnit, RunOutputs, Stage, StepReport, TrainConfig, Trainer,
};
use voxclone_core::Error;

fn encoder(cfg: &TrainConfig) -> StubSpeakerEncoder {
    StubSpeakerEncoder::new(cfg.model.spk_emb_dim, 1)
}

fn setup() -> (tempfile::TempDir, Manifest, TrainConfig) {
    let dir = tempfile::tempdir().unwrap();
    let m = common::base_corpus(&dir.path().join("base"));
    (dir, m, common::desk_config())
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let (_dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let mut t = Trainer::<f32>::pretrain(&m, cfg.clone(), &enc).unwrap();
        t.run(3, &RunOutputs::default()).unwrap();
        bytes.push(t.checkpoint().to_bytes().unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let mut straight = Trainer::<f32>::pretrain(&m, cfg.clone(), &enc).unwrap();
    let full = straight.run(200, &RunOutputs::default()).unwrap();

    let ck_dir = dir.path().join("ck");
    let mut first = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    first
        .run(
            100,
            &RunOutputs {
                checkpoint_dir: Some(ck_dir.clone()),
                log_path: None,
            },
        )
        .unwrap();
    let ck = Checkpoint::load(ck_dir.join("latest.ckpt")).unwrap();
    let mut resumed = Trainer::<f32>::resume(&ck, &m, &enc).unwrap();
    assert_eq!(resumed.step(), 100);
    let tail = resumed.run(100, &RunOutputs::default()).unwrap();
    let (a, b) = (&full[199].losses, &tail[99].losses);
    for (x, y) in [(a.total, b.total), (a.discriminator, b.discriminator), (a.mel_recon, b.mel_recon)] {
        assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
    }
    assert_eq!(
        straight.checkpoint().to_bytes().unwrap(),
        resumed.checkpoint().to_bytes().unwrap()
    );
}

#[test]
fn log_has_one_entry_per_step_and_initial_lr() {
    let (dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let log = dir.path().join("train.jsonl");
    let mut t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    t.run(
        5,
        &RunOutputs {
            checkpoint_dir: None,
            log_path: Some(log.clone()),
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let entries: Vec<StepReport> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 5);
    assert_eq!(entries[0].lr, 2e-4);
    let raw: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in [
        "step",
        "lr",
        "mel_recon",
        "kl",
        "adversarial_g",
        "feature_match",
        "duration",
        "total",
        "discriminator",
    ] {
        assert!(raw.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn lr_decays_per_epoch_or_per_step() {
    let (_dir, m, mut cfg) = setup();
    let enc = encoder(&cfg);
    cfg.schedule.gamma = 0.5;
    let mut t = Trainer::<f32>::pretrain(&m, cfg.clone(), &enc).unwrap();
    // 20 clips at batch 2: ten steps per epoch
    let lrs: Vec<f64> = t.run(11, &RunOutputs::default()).unwrap().iter().map(|r| r.lr).collect();
    assert!(lrs[..10].iter().all(|&l| l == 2e-4));
    assert_eq!(lrs[10], 1e-4);

    cfg.schedule.decay_unit = DecayUnit::Step;
    let mut t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    let lrs: Vec<f64> = t.run(3, &RunOutputs::default()).unwrap().iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![2e-4, 1e-4, 5e-5]);
}

#[test]
fn finetune_restarts_lr_and_keeps_step() {
    let (dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let few = common::fewshot_corpus(&dir.path().join("few"));
    let mut t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    t.run(4, &RunOutputs::default()).unwrap();
    let ck = t.checkpoint();

    let ft = Trainer::<f32>::finetune(&ck, &m, &few, &enc).unwrap();
    assert_eq!(ft.stage(), Stage::Finetune);
    assert_eq!(ft.step(), 4);
    assert_eq!(ft.current_lr(), 1e-4);
    assert_eq!(ft.sampler().speakers().count(), 4);

    // zero fine-tune steps leave every array untouched
    let out = ft.checkpoint();
    assert_eq!(out.arrays.len(), ck.arrays.len());
    for ((na, a), (nb, b)) in ck.arrays.iter().zip(&out.arrays) {
        assert_eq!(na, nb);
        assert_eq!(a, b, "{na}");
    }
    let meta = CheckpointMeta::from_checkpoint(&out).unwrap();
    assert!(meta.speakers.contains(&"new_spk".to_string()));
}

#[test]
fn finetune_batches_cover_every_speaker() {
    let (dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let few = common::fewshot_corpus(&dir.path().join("few"));
    let t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    let ft = Trainer::<f32>::finetune(&t.checkpoint(), &m, &few, &enc).unwrap();
    let s = ft.sampler();
    let seen: BTreeSet<&str> = (0..1000)
        .flat_map(|b| s.batch_indices(b))
        .map(|i| s.utterances()[i].speaker_id.as_str())
        .collect();
    let all: BTreeSet<&str> = s.speakers().collect();
    assert_eq!(seen, all);
    assert_eq!(all.len(), 4);
}

#[test]
fn finetune_rejects_new_language_and_colliding_speakers() {
    let (dir, m, cfg) = setup();
    let enc = encoder(&cfg);
    let t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    let ck = t.checkpoint();
    let fr = common::write_corpus(
        &dir.path().join("fr"),
        &[common::SynthSpeaker {
            id: "fr_spk",
            f0: 250.0,
            languages: &["fr"],
        }],
        2,
        3,
    );
    assert!(matches!(
        Trainer::<f32>::finetune(&ck, &m, &fr, &enc),
        Err(Error::UnknownLanguage(_))
    ));
    assert!(matches!(
        Trainer::<f32>::finetune(&ck, &m, &m, &enc),
        Err(Error::SpeakerCollision(_))
    ));
    assert!(mixup_datasets(&m, &m.with_speaker_prefix("few_")).is_ok());
}

#[test]
fn encoder_dimension_must_match() {
    let (_dir, m, cfg) = setup();
    let wrong = StubSpeakerEncoder::new(cfg.model.spk_emb_dim + 1, 1);
    assert!(matches!(
        Trainer::<f32>::pretrain(&m, cfg, &wrong),
        Err(Error::Config(_))
    ));
}

#[test]
fn checkpoint_files_written_on_schedule() {
    let (dir, m, mut cfg) = setup();
    let enc = encoder(&cfg);
    cfg.checkpoint_every = 2;
    let ck_dir = dir.path().join("ck");
    let mut t = Trainer::<f32>::pretrain(&m, cfg, &enc).unwrap();
    t.run(
        5,
        &RunOutputs {
            checkpoint_dir: Some(ck_dir.clone()),
            log_path: None,
        },
    )
    .unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&ck_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["latest.ckpt", "step_0000002.ckpt", "step_0000004.ckpt", "step_0000005.ckpt"]
    );
}

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use voxclone_core::audio::{write_wav, Waveform};

fn voxclone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxclone"))
        .args(args)
        .env_remove("VOXCLONE_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tone(path: &Path, seconds: f64, f0: f64, rate: u32) {
    let n = (seconds * rate as f64) as usize;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            (0.3 * (2.0 * PI * f0 * t).sin() + 0.1 * (2.0 * PI * 3.0 * f0 * t).sin()) as f32
        })
        .collect();
    write_wav(path, &Waveform::new(s, rate).unwrap()).unwrap();
}

/// Writes clips plus a manifest; each row is (file, seconds, speaker, language, text).
fn corpus(dir: &Path, rows: &[(&str, f64, &str, &str, &str)]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut lines = String::new();
    for (i, (file, secs, spk, lang, text)) in rows.iter().enumerate() {
        let f0 = 120.0 + 40.0 * (spk.len() % 4) as f64 + 5.0 * i as f64;
        tone(&dir.join(file), *secs, f0, 16_000);
        lines += &serde_json::json!({
            "audio_path": file, "text": text, "speaker": spk, "language": lang, "duration": secs
        })
        .to_string();
        lines.push('\n');
    }
    let m = dir.join("manifest.jsonl");
    fs::write(&m, lines).unwrap();
    m
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "model": {
            "hidden_dim": 16, "ffn_dim": 24, "n_text_blocks": 2, "speaker_inject_block": 2,
            "spk_emb_dim": 8, "latent_dim": 8, "posterior_layers": 2, "flow_wn_layers": 1,
            "n_flow_steps": 2, "dp_channels": 8, "dp_flows": 2, "dp_conv_layers": 2,
            "vocoder_channels": 16, "disc_channels": 4, "disc_periods": [2, 3], "msd_scales": 1
        },
        "sampler": { "batch_size": 2 },
        "segment_frames": 8
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    config: PathBuf,
    checkpoint: PathBuf,
    run: PathBuf,
}

/// One short pre-training run shared by the tests that need a checkpoint.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let manifest = corpus(
            &root.join("base"),
            &[
                ("a0.wav", 0.7, "alice", "en", "hello"),
                ("a1.wav", 0.8, "alice", "de", "hallo"),
                ("b0.wav", 0.7, "bob", "en", "world"),
                ("b1.wav", 0.6, "bob", "en", "yes"),
            ],
        );
        let config = tiny_config(&root);
        let run = root.join("run");
        let o = voxclone(&[
            "pretrain",
            "--config",
            p(&config),
            "--manifest",
            p(&manifest),
            "--out",
            p(&run),
            "--steps",
            "50",
            "--seed",
            "3",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Trained {
            checkpoint: run.join("checkpoints/latest.ckpt"),
            _dir: dir,
            root,
            manifest,
            config,
            run,
        }
    })
}

fn preprocess_corpus(dir: &Path) -> PathBuf {
    corpus(
        dir,
        &[
            ("c0.wav", 2.5, "s1", "en", "one"),
            ("c1.wav", 1.0, "s1", "en", "two"),
            ("c2.wav", 3.0, "s2", "en", "three"),
            ("c3.wav", 2.0, "s2", "de", "vier"),
            ("c4.wav", 4.0, "s1", "de", "fünf"),
        ],
    )
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn preprocess_filters_by_duration() {
    let dir = tempfile::tempdir().unwrap();
    let m = preprocess_corpus(&dir.path().join("raw"));
    let out = dir.path().join("out");
    let o = voxclone(&["preprocess", p(&m), "--out", p(&out), "--allow-drops"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("kept 4, dropped 1"));
    let kept = fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), 4);
    assert!(!kept.contains("\"two\""));
    assert!(out.join("vocab.txt").exists());
    assert_eq!(fs::read_dir(out.join("cache")).unwrap().count(), 4);

    let strict = voxclone(&["preprocess", p(&m), "--out", p(&dir.path().join("strict"))]);
    assert_eq!(code(&strict), 3);
}

#[test]
fn preprocess_is_idempotent_and_identity_enhancement_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let m = preprocess_corpus(&dir.path().join("raw"));
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["preprocess", p(&m), "--out", p(&out), "--allow-drops", "--workers", "2"];
        args.extend_from_slice(extra);
        assert_eq!(code(&voxclone(&args)), 0);
        read_tree(&out)
    };
    let first = run("a", &[]);
    assert_eq!(first, run("a", &[]));
    assert_eq!(first, run("b", &["--enhance", "identity"]).into_iter().collect::<Vec<_>>());
}

#[test]
fn preprocess_reports_unreadable_audio() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let m = preprocess_corpus(&raw);
    fs::write(raw.join("c2.wav"), b"not a wav").unwrap();
    let out = dir.path().join("out");
    let o = voxclone(&["preprocess", p(&m), "--out", p(&out), "--allow-drops"]);
    assert_eq!(code(&o), 3);
    let errs = fs::read_to_string(out.join("errors.jsonl")).unwrap();
    assert_eq!(errs.lines().count(), 1);
    assert!(errs.contains("c2.wav"));
}

#[test]
fn preprocess_cache_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let m = preprocess_corpus(&dir.path().join("raw"));
    let cache = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_voxclone"))
        .args(["preprocess", p(&m), "--out", p(&dir.path().join("out")), "--allow-drops"])
        .env("VOXCLONE_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 4);
}

#[test]
fn pretrain_writes_checkpoint_and_log() {
    let t = trained();
    assert!(t.checkpoint.exists());
    let log = fs::read_to_string(t.run.join("train_log.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 50);
    assert_eq!(entries[0]["lr"].as_f64().unwrap(), 2e-4);
    assert_eq!(entries[49]["step"].as_u64().unwrap(), 49);
}

#[test]
fn bad_config_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"schedule": {"initial_lr": "fast"}}"#).unwrap();
    let o = voxclone(&[
        "pretrain",
        "--config",
        p(&cfg),
        "--manifest",
        p(&trained().manifest),
        "--out",
        p(&dir.path().join("run")),
        "--steps",
        "1",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedule.initial_lr"));

    fs::write(&cfg, r#"{"schedule": {"gamma": 2.0}}"#).unwrap();
    let o = voxclone(&[
        "pretrain",
        "--config",
        p(&cfg),
        "--manifest",
        p(&trained().manifest),
        "--out",
        p(&dir.path().join("run")),
        "--steps",
        "1",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn finetune_requires_pretrained_and_runs() {
    let t = trained();
    let few = corpus(&t.root.join("few"), &[("n0.wav", 0.7, "newcomer", "en", "hello")]);
    let out = t.root.join("ft");
    let missing = voxclone(&[
        "finetune",
        "--pretrain-manifest",
        p(&t.manifest),
        "--fewshot-manifest",
        p(&few),
        "--out",
        p(&out),
        "--steps",
        "2",
    ]);
    assert_eq!(code(&missing), 2);

    let o = voxclone(&[
        "finetune",
        "--pretrained",
        p(&t.checkpoint),
        "--pretrain-manifest",
        p(&t.manifest),
        "--fewshot-manifest",
        p(&few),
        "--out",
        p(&out),
        "--steps",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["lr"].as_f64().unwrap(), 1e-4);
    assert_eq!(first["step"].as_u64().unwrap(), 50);
}

fn write_requests(path: &Path, lines: &[serde_json::Value]) {
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, body).unwrap();
}

fn request(text: &str, lang: &str, spk: &str) -> serde_json::Value {
    serde_json::json!({
        "text": text, "language_id": lang, "target_speaker_id": spk,
        "noise_scale": 0.0, "duration_noise_scale": 0.0
    })
}

fn synthesize(t: &Trained, requests: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synthesize",
        "--checkpoint",
        p(&t.checkpoint),
        "--requests",
        p(requests),
        "--manifest",
        p(&t.manifest),
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    voxclone(&args)
}

#[test]
fn synthesize_writes_outputs_and_is_reproducible() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.jsonl");
    write_requests(
        &req,
        &[
            request("hello", "en", "alice"),
            request("hallo", "de", "bob"),
            request("yes", "en", "bob"),
        ],
    );
    let a = dir.path().join("a");
    let o = synthesize(t, &req, &a, &["--seed", "7", "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files = read_tree(&a);
    assert_eq!(files.iter().filter(|(f, _)| f.extension().unwrap() == "wav").count(), 3);
    assert_eq!(files.iter().filter(|(f, _)| f.extension().unwrap() == "json").count(), 3);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("0000.json")).unwrap()).unwrap();
    let total: u64 = meta["durations"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).sum();
    assert_eq!(meta["samples"].as_u64().unwrap(), total * 256);

    let b = dir.path().join("b");
    assert_eq!(code(&synthesize(t, &req, &b, &["--seed", "7"])), 0);
    assert_eq!(files, read_tree(&b));
}

#[test]
fn synthesize_isolates_failed_requests() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.jsonl");
    write_requests(
        &req,
        &[
            request("hello", "en", "alice"),
            request("hello", "xx", "alice"),
            request("world", "en", "bob"),
        ],
    );
    let out = dir.path().join("out");
    let o = synthesize(t, &req, &out, &[]);
    assert_eq!(code(&o), 3);
    assert!(out.join("0000.wav").exists() && out.join("0002.wav").exists());
    assert!(!out.join("0001.wav").exists());
    let err = fs::read_to_string(out.join("0001.error.json")).unwrap();
    assert!(err.contains("xx"), "{err}");
}

#[test]
fn synthesize_checks_config_hash() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.jsonl");
    write_requests(&req, &[request("hello", "en", "alice")]);
    let ok = synthesize(t, &req, &dir.path().join("a"), &["--config", p(&t.config)]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));

    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&t.config).unwrap()).unwrap();
    cfg["model"]["hidden_dim"] = 32.into();
    let other = dir.path().join("other.json");
    fs::write(&other, cfg.to_string()).unwrap();
    let bad = synthesize(t, &req, &dir.path().join("b"), &["--config", p(&other)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn inspect_checkpoint_prints_header() {
    let t = trained();
    let o = voxclone(&["inspect-checkpoint", p(&t.checkpoint)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metadata"]["training"]["step"].as_u64().unwrap(), 50);
    assert_eq!(v["config"]["hidden_dim"].as_u64().unwrap(), 16);

    let missing = voxclone(&["inspect-checkpoint", p(&t.root.join("nope.ckpt"))]);
    assert_eq!(code(&missing), 3);
}

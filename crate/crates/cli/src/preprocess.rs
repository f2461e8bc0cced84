use std::fs;
use std::path::{Path, PathBuf};

use voxclone_core::audio::{
    enhance, linear_spectrogram, normalize_volume, read_wav, resample, write_spectrogram, write_wav, IdentityHook,
    StftConfig, DEFAULT_PEAK, MODEL_SAMPLE_RATE,
};
use voxclone_core::corpus::{CharacterVocabulary, Manifest, Utterance};

use crate::{runtime, CmdResult, Enhance, Outcome, PreprocessArgs};

enum FileResult {
    Kept(Utterance),
    Dropped,
    Failed(String),
}

fn process_one(
    i: usize,
    u: &Utterance,
    args: &PreprocessArgs,
    wav_dir: &Path,
    cache_dir: &Path,
) -> voxclone_core::Result<FileResult> {
    let raw = read_wav(&u.audio_path)?;
    let duration = raw.duration_s();
    if duration < args.min_seconds || duration > args.max_seconds {
        return Ok(FileResult::Dropped);
    }
    let stft = StftConfig::default();
    let w = resample(&raw, MODEL_SAMPLE_RATE)?;
    let w = normalize_volume(&w, DEFAULT_PEAK)?;
    let w = match args.enhance {
        Enhance::None => w,
        Enhance::Identity => enhance(&w, &IdentityHook, stft.hop)?,
    };
    let wav = wav_dir.join(format!("{i:05}.wav"));
    write_wav(&wav, &w)?;
    write_spectrogram(cache_dir.join(format!("{i:05}.spec")), &linear_spectrogram(&w, &stft)?)?;
    Ok(FileResult::Kept(Utterance {
        audio_path: wav,
        duration_s: w.duration_s(),
        ..u.clone()
    }))
}

pub fn run(args: &PreprocessArgs) -> CmdResult {
    if !(args.min_seconds > 0.0 && args.min_seconds < args.max_seconds) {
        return Err(crate::usage("need 0 < --min-seconds < --max-seconds"));
    }
    let manifest = Manifest::load(&args.manifest)?;
    let wav_dir = args.out.join("wavs");
    let cache_dir = args.cache_dir.clone().unwrap_or_else(|| args.out.join("cache"));
    fs::create_dir_all(&wav_dir).map_err(runtime)?;
    fs::create_dir_all(&cache_dir).map_err(runtime)?;

    let items: Vec<(usize, &Utterance)> = manifest.utterances().iter().enumerate().collect();
    let workers = args.common.workers.max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    let results: Vec<(usize, FileResult)> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let (wav_dir, cache_dir) = (&wav_dir, &cache_dir);
                s.spawn(move || {
                    part.iter()
                        .map(|&(i, u)| {
                            let r = process_one(i, u, args, wav_dir, cache_dir)
                                .unwrap_or_else(|e| FileResult::Failed(format!("{}: {e}", u.audio_path.display())));
                            (i, r)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("preprocess worker panicked"))
            .collect()
    });

    let mut kept = Vec::new();
    let mut dropped = 0;
    let mut errors = Vec::new();
    for (i, r) in results {
        match r {
            FileResult::Kept(u) => kept.push(u),
            FileResult::Dropped => dropped += 1,
            FileResult::Failed(msg) => errors.push(serde_json::json!({ "row": i + 1, "error": msg })),
        }
    }

    let mut artifacts: Vec<PathBuf> = Vec::new();
    let out_manifest = args.out.join("manifest.jsonl");
    let kept = Manifest::new(kept)?;
    kept.save(&out_manifest)?;
    artifacts.push(out_manifest);
    if !kept.is_empty() {
        let vocab_path = args.out.join("vocab.txt");
        CharacterVocabulary::build([&kept])?.save(&vocab_path)?;
        artifacts.push(vocab_path);
    }
    let err_path = args.out.join("errors.jsonl");
    if errors.is_empty() {
        let _ = fs::remove_file(&err_path);
    } else {
        let body: String = errors.iter().map(|e| format!("{e}\n")).collect();
        fs::write(&err_path, body).map_err(runtime)?;
        artifacts.push(err_path);
    }
    artifacts.push(wav_dir);
    artifacts.push(cache_dir);

    let summary = format!(
        "kept {}, dropped {} outside [{}, {}] s, failed {}",
        kept.len(),
        dropped,
        args.min_seconds,
        args.max_seconds,
        errors.len()
    );
    if dropped > 0 && !args.allow_drops {
        eprintln!("{dropped} clip(s) outside the duration band; pass --allow-drops to accept");
    }
    Ok(Outcome {
        summary,
        artifacts,
        failed: !errors.is_empty() || (dropped > 0 && !args.allow_drops),
    })
}

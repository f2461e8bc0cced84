//! Synthetic voiced corpus: every character maps to a formant position and
//! every speaker to a fundamental, so text, audio and identity are all
//! learnable from a handful of clips.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxclone_core::audio::{write_wav, Waveform};
use voxclone_core::corpus::{Manifest, Utterance};
use voxclone_core::nn::ModelConfig;
use voxclone_core::training::TrainConfig;

pub const RATE: u32 = 16_000;
/// Seconds of audio per character.
pub const CHAR_S: f64 = 0.08;

pub struct SynthSpeaker<'a> {
    pub id: &'a str,
    pub f0: f64,
    pub languages: &'a [&'a str],
}

fn alphabet(language: &str) -> &'static [char] {
    match language {
        "en" => &['a', 'e', 'i', 'o', 'u', 'n', 's', 't'],
        _ => &['a', 'e', 'i', 'o', 'u', 'm', 'r', 'k'],
    }
}

fn formant(c: char) -> f64 {
    400.0 + 180.0 * ((c as u32 * 7) % 13) as f64
}

/// Harmonic tone at `f0` whose spectral peak follows the characters of `text`.
pub fn render(text: &str, f0: f64) -> Vec<f32> {
    let per = (CHAR_S * RATE as f64) as usize;
    let lead = per / 2;
    let mut out = vec![0.0f32; lead];
    let n_harm = (RATE as f64 / 2.0 / f0).floor() as usize - 1;
    let mut t0 = 0usize;
    for c in text.chars() {
        let fc = formant(c);
        for i in 0..per {
            let t = (t0 + i) as f64 / RATE as f64;
            let env = (PI * i as f64 / per as f64).sin().powf(0.3);
            let mut s = 0.0;
            for h in 1..=n_harm {
                let f = h as f64 * f0;
                let gain = (-((f - fc) / 250.0).powi(2)).exp() + 0.3 / h as f64;
                s += gain * (2.0 * PI * f * t).sin();
            }
            out.push((0.25 * env * s) as f32);
        }
        t0 += per;
    }
    out.extend(std::iter::repeat_n(0.0, lead));
    out
}

pub fn random_text(language: &str, len: usize, rng: &mut impl Rng) -> String {
    let a = alphabet(language);
    (0..len).map(|_| a[rng.gen_range(0..a.len())]).collect()
}

/// Writes `per_speaker` clips for each speaker under `dir` and returns the manifest.
pub fn write_corpus(dir: &Path, speakers: &[SynthSpeaker], per_speaker: usize, seed: u64) -> Manifest {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utts = Vec::new();
    for s in speakers {
        for i in 0..per_speaker {
            let lang = s.languages[i % s.languages.len()];
            let text = random_text(lang, rng.gen_range(6..=10), &mut rng);
            let samples = render(&text, s.f0);
            let path = dir.join(format!("{}_{i:02}.wav", s.id));
            let w = Waveform::new(samples, RATE).unwrap();
            write_wav(&path, &w).unwrap();
            utts.push(Utterance::new(path, text, s.id, lang, w.duration_s()).unwrap());
        }
    }
    Manifest::new(utts).unwrap()
}

pub fn base_speakers() -> Vec<SynthSpeaker<'static>> {
    vec![
        SynthSpeaker { id: "spk_low", f0: 110.0, languages: &["en", "de"] },
        SynthSpeaker { id: "spk_mid", f0: 160.0, languages: &["en"] },
        SynthSpeaker { id: "spk_high", f0: 220.0, languages: &["de", "en"] },
    ]
}

pub fn new_speaker() -> SynthSpeaker<'static> {
    SynthSpeaker { id: "new_spk", f0: 300.0, languages: &["en"] }
}

/// 20 clips over the three base speakers and both languages.
pub fn base_corpus(dir: &Path) -> Manifest {
    let m = write_corpus(dir, &base_speakers(), 7, 11);
    let utts = m.utterances()[..20].to_vec();
    Manifest::new(utts).unwrap()
}

/// Four clips of the new speaker, English only.
pub fn fewshot_corpus(dir: &Path) -> Manifest {
    write_corpus(dir, &[new_speaker()], 4, 12)
}

/// Desk-scale model.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        spk_emb_dim: 16,
        ..ModelConfig::tiny()
    }
}

pub fn desk_config() -> TrainConfig {
    let mut c = TrainConfig {
        model: desk_model(),
        segment_frames: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    c.sampler.batch_size = 2;
    c.sampler.seed = 5;
    c
}

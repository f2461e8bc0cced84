//! Dataset manifests, the character vocabulary and symbol encoding.
//!
//! Text is used as a raw character sequence: no normalization and no
//! grapheme-to-phoneme step.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index of the padding symbol.
pub const PAD: usize = 0;
/// Index of the unknown-character symbol.
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// One corpus row.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub audio_path: PathBuf,
    pub text: String,
    pub speaker_id: String,
    pub language_id: String,
    pub duration_s: f64,
}

impl Utterance {
    pub fn new(
        audio_path: impl Into<PathBuf>,
        text: impl Into<String>,
        speaker_id: impl Into<String>,
        language_id: impl Into<String>,
        duration_s: f64,
    ) -> Result<Self> {
        let u = Self {
            audio_path: audio_path.into(),
            text: text.into(),
            speaker_id: speaker_id.into(),
            language_id: language_id.into(),
            duration_s,
        };
        u.validate()?;
        Ok(u)
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidUtterance(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        for (field, value) in [
            ("text", &self.text),
            ("speaker", &self.speaker_id),
            ("language", &self.language_id),
        ] {
            if value.is_empty() {
                return Err(Error::InvalidUtterance(format!("empty `{field}`")));
            }
        }
        Ok(())
    }
}

/// Manifest line schema.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    audio_path: String,
    text: String,
    speaker: String,
    language: String,
    duration: f64,
}

/// Ordered list of utterances with the speaker and language sets they use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    utterances: Vec<Utterance>,
    speakers: BTreeSet<String>,
    languages: BTreeSet<String>,
}

impl Manifest {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        for u in &utterances {
            u.validate()?;
        }
        let speakers = utterances.iter().map(|u| u.speaker_id.clone()).collect();
        let languages = utterances.iter().map(|u| u.language_id.clone()).collect();
        Ok(Self {
            utterances,
            speakers,
            languages,
        })
    }

    /// Reads a JSON-lines manifest. Relative audio paths are resolved against
    /// the manifest's directory; audio files are not opened here.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses manifest text; `origin` labels errors, `base` resolves relative paths.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut utterances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::ManifestParse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let row: ManifestRow = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let audio = PathBuf::from(&row.audio_path);
            let audio = if audio.is_relative() { base.join(audio) } else { audio };
            let u = Utterance::new(audio, row.text, row.speaker, row.language, row.duration)
                .map_err(|e| err(e.to_string()))?;
            utterances.push(u);
        }
        Self::new(utterances)
    }

    /// Serializes as JSON lines; audio paths under `relative_to` are written relative to it.
    pub fn to_jsonl(&self, relative_to: Option<&Path>) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let path = match relative_to.and_then(|b| u.audio_path.strip_prefix(b).ok()) {
                Some(rel) => rel.to_path_buf(),
                None => u.audio_path.clone(),
            };
            let row = ManifestRow {
                audio_path: path.to_string_lossy().into_owned(),
                text: u.text.clone(),
                speaker: u.speaker_id.clone(),
                language: u.language_id.clone(),
                duration: u.duration_s,
            };
            out.push_str(&serde_json::to_string(&row).expect("manifest row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl(path.parent()))?;
        Ok(())
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> &BTreeSet<String> {
        &self.speakers
    }

    pub fn languages(&self) -> &BTreeSet<String> {
        &self.languages
    }

    pub fn utterances_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a Utterance> + 'a {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker)
    }

    /// Keeps utterances with `min_s ≤ duration ≤ max_s`, in order.
    pub fn filter_by_duration(&self, min_s: f64, max_s: f64) -> Result<Self> {
        if !(min_s > 0.0 && min_s < max_s) {
            return Err(Error::InvalidArgument(format!(
                "duration bounds need 0 < min < max, got [{min_s}, {max_s}]"
            )));
        }
        let kept = self
            .utterances
            .iter()
            .filter(|u| u.duration_s >= min_s && u.duration_s <= max_s)
            .cloned()
            .collect();
        Self::new(kept)
    }

    /// Prefixes every speaker id, e.g. to keep few-shot speakers apart from base speakers.
    pub fn with_speaker_prefix(&self, prefix: &str) -> Self {
        let utts = self
            .utterances
            .iter()
            .map(|u| Utterance {
                speaker_id: format!("{prefix}{}", u.speaker_id),
                ..u.clone()
            })
            .collect();
        Self::new(utts).expect("prefixing keeps rows valid")
    }

    /// Re-reads each WAV header and replaces the manifest duration with the
    /// decoded one. Returns the rewritten manifest and the rows whose stated
    /// duration differed by more than `tolerance_s`.
    pub fn verify_durations(&self, tolerance_s: f64) -> Result<(Self, Vec<usize>)> {
        let mut mismatched = Vec::new();
        let mut utts = Vec::with_capacity(self.utterances.len());
        for (i, u) in self.utterances.iter().enumerate() {
            let reader = hound::WavReader::open(&u.audio_path)?;
            let spec = reader.spec();
            let actual = reader.duration() as f64 / spec.sample_rate as f64;
            if (actual - u.duration_s).abs() > tolerance_s {
                mismatched.push(i);
            }
            utts.push(Utterance {
                duration_s: actual,
                ..u.clone()
            });
        }
        Ok((Self::new(utts)?, mismatched))
    }
}

/// Entry of a [`CharacterVocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Pad,
    Unk,
    Char(char),
}

/// Reserved symbols followed by every corpus character in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterVocabulary {
    symbols: Vec<Symbol>,
    index: HashMap<char, usize>,
}

impl CharacterVocabulary {
    /// Builds the vocabulary over all texts of all manifests.
    pub fn build<'a>(manifests: impl IntoIterator<Item = &'a Manifest>) -> Result<Self> {
        let mut chars = BTreeSet::new();
        let mut total = 0usize;
        for m in manifests {
            for u in m.utterances() {
                total += 1;
                chars.extend(u.text.chars());
            }
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self::from_chars(chars))
    }

    fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut symbols = vec![Symbol::Pad, Symbol::Unk];
        symbols.extend(chars.into_iter().map(Symbol::Char));
        let index = symbols
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Symbol::Char(c) => Some((*c, i)),
                _ => None,
            })
            .collect();
        Self { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// One index per character; unknown characters map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.index_of(c).unwrap_or(UNK)).collect()
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary characters.
    /// Reserved symbols are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&i| match self.symbols.get(i) {
                Some(Symbol::Char(c)) => Some(*c),
                _ => None,
            })
            .collect()
    }

    /// One symbol per line, line number = index. Control characters and the
    /// backslash are written as `\u{XXXX}`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            match s {
                Symbol::Pad => out.push_str(PAD_TOKEN),
                Symbol::Unk => out.push_str(UNK_TOKEN),
                Symbol::Char(c) if c.is_control() || *c == '\\' || *c == '<' => {
                    let _ = write!(out, "\\u{{{:x}}}", *c as u32);
                }
                Symbol::Char(c) => out.push(*c),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').collect::<Vec<_>>();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad> and <unk>".into(),
            ));
        }
        let mut chars = Vec::with_capacity(lines.len() - 2);
        for (i, line) in lines[2..].iter().enumerate() {
            let c = parse_symbol(line).ok_or_else(|| {
                Error::InvalidArgument(format!("vocabulary line {}: bad symbol {line:?}", i + 3))
            })?;
            chars.push(c);
        }
        let vocab = Self::from_chars(chars.iter().copied());
        if vocab.index.len() != chars.len() {
            return Err(Error::InvalidArgument("vocabulary has duplicate symbols".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }

    /// Corpus characters only, in index order.
    pub fn chars(&self) -> Vec<char> {
        self.symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Char(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn from_char_list(chars: &[char]) -> Result<Self> {
        let v = Self::from_chars(chars.iter().copied());
        if v.index.len() != chars.len() {
            return Err(Error::InvalidArgument("vocabulary has duplicate symbols".into()));
        }
        Ok(v)
    }
}

fn parse_symbol(line: &str) -> Option<char> {
    if let Some(hex) = line.strip_prefix("\\u{").and_then(|s| s.strip_suffix('}')) {
        return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32);
    }
    let mut it = line.chars();
    let c = it.next()?;
    it.next().is_none().then_some(c)
}

//! Waveform I/O and preprocessing: resampling, peak normalization, the
//! enhancement seam, linear spectrograms and mel projection.

mod mel;
mod resample;
mod stft;

use std::path::Path;

pub use mel::MelFilterbank;
pub use resample::resample;
pub(crate) use stft::reflect as reflect_index;
pub use stft::{linear_spectrogram, read_spectrogram, write_spectrogram, LinearSpectrogram, StftConfig};

use crate::{Error, Real, Result};

/// Sample rate every model-facing waveform is converted to.
pub const MODEL_SAMPLE_RATE: u32 = 16_000;
/// Default peak level for volume normalization.
pub const DEFAULT_PEAK: f64 = 0.95;

/// Mono audio, samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Audio(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |m, &s| if s.abs() > m { s.abs() } else { m })
    }

    pub fn cast<U: Real>(&self) -> Waveform<U> {
        Waveform {
            samples: self
                .samples
                .iter()
                .map(|s| U::lit(s.to_f64().unwrap_or(0.0)))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Scales the waveform by one positive gain so its peak equals `target_peak`.
pub fn normalize_volume<T: Real>(w: &Waveform<T>, target_peak: f64) -> Result<Waveform<T>> {
    if !(target_peak > 0.0 && target_peak <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target peak must lie in (0, 1], got {target_peak}"
        )));
    }
    let peak = w.peak();
    if peak == T::zero() {
        return Err(Error::Audio("cannot normalize silence: gain undefined".into()));
    }
    let gain = T::lit(target_peak) / peak;
    let samples = w.samples.iter().map(|&s| s * gain).collect();
    Waveform::new(samples, w.sample_rate)
}

/// Speech enhancement applied to noisy recordings before the rest of preprocessing.
pub trait EnhancementHook<T: Real> {
    fn name(&self) -> &str;
    fn process(&self, w: &Waveform<T>) -> Result<Waveform<T>>;
}

/// Pass-through enhancement.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl<T: Real> EnhancementHook<T> for IdentityHook {
    fn name(&self) -> &str {
        "identity"
    }

    fn process(&self, w: &Waveform<T>) -> Result<Waveform<T>> {
        Ok(w.clone())
    }
}

/// Constant gain, mostly useful for exercising the hook contract.
#[derive(Debug, Clone, Copy)]
pub struct GainHook(pub f64);

impl<T: Real> EnhancementHook<T> for GainHook {
    fn name(&self) -> &str {
        "gain"
    }

    fn process(&self, w: &Waveform<T>) -> Result<Waveform<T>> {
        let g = T::lit(self.0);
        Waveform::new(w.samples().iter().map(|&s| s * g).collect(), w.sample_rate())
    }
}

/// Runs `hook` and checks its output: same sample rate, length within one
/// `hop` of the input, every sample in `[-1, 1]`.
pub fn enhance<T: Real>(w: &Waveform<T>, hook: &dyn EnhancementHook<T>, hop: usize) -> Result<Waveform<T>> {
    let out = hook.process(w)?;
    if out.sample_rate() != w.sample_rate() {
        return Err(Error::HookContract(format!(
            "`{}` changed the sample rate {} -> {}",
            hook.name(),
            w.sample_rate(),
            out.sample_rate()
        )));
    }
    if out.len().abs_diff(w.len()) > hop {
        return Err(Error::HookContract(format!(
            "`{}` changed the length {} -> {} (allowed ±{hop})",
            hook.name(),
            w.len(),
            out.len()
        )));
    }
    if out.peak() > T::one() {
        return Err(Error::HookContract(format!(
            "`{}` produced samples outside [-1, 1]",
            hook.name()
        )));
    }
    Ok(out)
}

/// Reads a mono WAV (integer PCM or float); multi-channel files are downmixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform<f32>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let mono = interleaved
        .chunks(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM mono; samples are clipped to `[-1, 1]`.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        let v = s.to_f64().unwrap_or(0.0).clamp(-1.0, 1.0);
        writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

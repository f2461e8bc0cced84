use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use voxclone_tensor::Tensor;

use super::Waveform;
use crate::{Error, Real, Result};

const CACHE_MAGIC: &[u8; 4] = b"LSPC";

/// Short-time Fourier transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub win: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: super::MODEL_SAMPLE_RATE,
            fft_size: 1024,
            hop: 256,
            win: 1024,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop >= 1 && self.hop <= self.win && self.win <= self.fft_size) {
            return Err(Error::Config(format!(
                "stft needs 1 <= hop <= win <= fft_size, got hop={} win={} fft={}",
                self.hop, self.win, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for `n` samples: `floor(n / hop) + 1`.
    pub fn n_frames(&self, n: usize) -> usize {
        n / self.hop + 1
    }

    /// Periodic Hann window of length `win`, zero-padded (centered) to `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let offset = (self.fft_size - self.win) / 2;
        let mut w = vec![0.0; self.fft_size];
        for n in 0..self.win {
            w[offset + n] = 0.5 - 0.5 * (2.0 * PI * n as f64 / self.win as f64).cos();
        }
        w
    }
}

/// Reflection index into a signal of length `n` for padded position `j`
/// (padding `pad` on the left); reflects repeatedly for short signals.
pub(crate) fn reflect(j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = j.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// STFT magnitudes `[F, T_spec]` with `F = fft_size/2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpectrogram<T> {
    pub magnitudes: Tensor<T>,
    pub frame_hop_s: f64,
}

impl<T: Real> LinearSpectrogram<T> {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.cols()
    }
}

/// Magnitude STFT, periodic Hann window, reflection padding of `fft_size/2`
/// on both ends so frame `t` is centered on sample `t·hop`.
pub fn linear_spectrogram<T: Real>(w: &Waveform<T>, cfg: &StftConfig) -> Result<LinearSpectrogram<T>> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "spectrogram expects {} Hz audio, got {} Hz",
            cfg.sample_rate,
            w.sample_rate()
        )));
    }
    let n = w.len();
    if n < cfg.win {
        return Err(Error::Audio(format!(
            "waveform of {n} samples is shorter than the {}-sample window",
            cfg.win
        )));
    }
    let window: Vec<T> = cfg.window().into_iter().map(T::lit).collect();
    let pad = (cfg.fft_size / 2) as isize;
    let frames = cfg.n_frames(n);
    let bins = cfg.n_bins();
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    let mut mags = Tensor::zeros(bins, frames);
    let x = w.samples();
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - pad;
        for (k, b) in buf.iter_mut().enumerate() {
            let s = x[reflect(start + k as isize, n)];
            *b = Complex::new(s * window[k], T::zero());
        }
        fft.process(&mut buf);
        for (f, b) in buf.iter().take(bins).enumerate() {
            mags.set(f, t, b.norm());
        }
    }
    Ok(LinearSpectrogram {
        magnitudes: mags,
        frame_hop_s: cfg.hop as f64 / cfg.sample_rate as f64,
    })
}

/// Cache layout: `"LSPC"`, `F: u32`, `T: u32`, `hop_s: f64`, then `F·T`
/// row-major `f32` magnitudes; all little-endian.
pub fn write_spectrogram<T: Real>(path: impl AsRef<Path>, spec: &LinearSpectrogram<T>) -> Result<()> {
    let (f, t) = spec.magnitudes.shape();
    let mut out = Vec::with_capacity(20 + 4 * f * t);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&spec.frame_hop_s.to_le_bytes());
    for &m in spec.magnitudes.data() {
        out.extend_from_slice(&(m.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_spectrogram<T: Real>(path: impl AsRef<Path>) -> Result<LinearSpectrogram<T>> {
    let bytes = fs::read(path.as_ref())?;
    let bad = |m: &str| Error::Audio(format!("{}: {m}", path.as_ref().display()));
    if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("not a spectrogram cache"));
    }
    let f = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let hop_s = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[20..];
    if body.len() != 4 * f * t {
        return Err(bad("truncated payload"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    Ok(LinearSpectrogram {
        magnitudes: Tensor::new(f, t, data)?,
        frame_hop_s: hop_s,
    })
}

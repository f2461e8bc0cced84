use std::f64::consts::PI;

use super::Waveform;
use crate::{Error, Real, Result};

/// Zero crossings of the interpolation kernel on each side, at the lower of
/// the two rates.
const ZERO_CROSSINGS: f64 = 32.0;
/// Low-pass cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.6;

/// Band-limited resampling by Kaiser-windowed sinc interpolation.
///
/// Output length is `round(N · target / source)`. Content above the lower
/// Nyquist frequency is attenuated.
pub fn resample<T: Real>(w: &Waveform<T>, target_rate: u32) -> Result<Waveform<T>> {
    if target_rate < 1000 {
        return Err(Error::InvalidArgument(format!(
            "target rate must be at least 1000 Hz, got {target_rate}"
        )));
    }
    let source_rate = w.sample_rate();
    if source_rate == target_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / source_rate as f64;
    let n_in = w.len();
    let n_out = ((n_in as f64) * ratio).round().max(1.0) as usize;

    // kernel measured in input-sample units
    let scale = ratio.min(1.0);
    let cutoff = ROLLOFF * scale;
    let half_width = ZERO_CROSSINGS / scale;
    let norm = bessel_i0(KAISER_BETA);

    let input: Vec<f64> = w.samples().iter().map(|s| s.to_f64().unwrap_or(0.0)).collect();
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let center = j as f64 / ratio;
        let lo = ((center - half_width).ceil().max(0.0)) as usize;
        let hi = ((center + half_width).floor() as isize).min(n_in as isize - 1);
        let mut acc = 0.0;
        if hi >= lo as isize {
            for (i, &x) in input.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = center - i as f64;
                let r = d / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
                acc += x * cutoff * sinc(cutoff * d) * window;
            }
        }
        out.push(T::lit(acc));
    }
    Waveform::new(out, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order 0 (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

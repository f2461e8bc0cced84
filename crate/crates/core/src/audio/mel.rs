use serde::{Deserialize, Serialize};
use voxclone_tensor::Tensor;

use super::LinearSpectrogram;
use crate::Real;

/// Triangular mel filters on the Slaney mel scale with area normalization
/// (the librosa default), shape `[n_mels, fft_size/2 + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    weights: Vec<f64>,
}

fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, n_mels: usize, fmin: f64, fmax: Option<f64>) -> Self {
        let n_bins = fft_size / 2 + 1;
        let fmax = fmax.unwrap_or(sample_rate as f64 / 2.0);
        let (mmin, mmax) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mmin + (mmax - mmin) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let enorm = 2.0 / (hi - lo);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (mid - lo);
                let down = (hi - f) / (hi - mid);
                weights[m * n_bins + k] = up.min(down).max(0.0) * enorm;
            }
        }
        Self {
            n_mels,
            n_bins,
            weights,
        }
    }

    pub fn matrix<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(self.n_mels, self.n_bins, |r, c| T::lit(self.weights[r * self.n_bins + c]))
    }

    /// `ln(max(mel, 1e-5))` of a linear spectrogram, shape `[n_mels, T]`.
    pub fn log_mel<T: Real>(&self, spec: &LinearSpectrogram<T>) -> Tensor<T> {
        let mel = self
            .matrix::<T>()
            .matmul(false, &spec.magnitudes, false)
            .expect("filterbank width matches spectrogram bins");
        let floor = T::lit(1e-5);
        mel.map(|v| v.max(floor).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 440.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_nonnegative_and_cover_each_band() {
        let fb = MelFilterbank::new(16_000, 1024, 80, 0.0, None);
        let m = fb.matrix::<f64>();
        assert_eq!(m.shape(), (80, 513));
        assert!(m.data().iter().all(|&w| w >= 0.0));
        for r in 0..80 {
            assert!(m.row(r).iter().any(|&w| w > 0.0), "empty band {r}");
        }
    }
}

//! HTK-style mel filterbank and log-mel feature extraction.

use ndarray::Array2;

use super::stft::{power_spectrogram, preemphasize};
use super::{MelParams, MelSpectrogram};
use crate::audio::Waveform;
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, rows = filters, columns = FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
    pub n_fft: usize,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// `n_mels` triangular filters with centers uniformly spaced on the mel scale
/// between `fmin` and `fmax`.
pub fn build_mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(Error::param(format!(
            "mel range [{fmin}, {fmax}] invalid for Nyquist {nyquist}"
        )));
    }
    if n_mels < 2 {
        return Err(Error::param("need at least 2 mel bands".to_string()));
    }
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            weights[[m, k]] = w;
        }
    }
    Ok(MelFilterbank { weights, fmin, fmax, sample_rate, n_fft })
}

/// Pre-emphasis, power spectrogram, filterbank, floored natural log.
pub fn mel_spectrogram(w: &Waveform, fb: &MelFilterbank, p: &MelParams) -> Result<MelSpectrogram> {
    if fb.n_mels() != p.n_mels || fb.n_fft != p.stft.n_fft {
        return Err(Error::shape(format!(
            "filterbank {}x{} does not match params (n_mels {}, n_fft {})",
            fb.n_mels(),
            fb.n_bins(),
            p.n_mels,
            p.stft.n_fft
        )));
    }
    let emphasized = preemphasize(w, p.preemphasis)?;
    let power = power_spectrogram(&emphasized, &p.stft)?;
    let mel = power.dot(&fb.weights.t());
    let data = mel.mapv(|e| e.max(p.log_floor).ln());
    Ok(MelSpectrogram {
        data,
        sample_rate: w.sample_rate,
        hop: p.stft.hop,
        frame_len: p.stft.frame_len,
        log_floor: p.log_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;

    fn default_fb() -> MelFilterbank {
        build_mel_filterbank(1024, 80, 16000, 0.0, 8000.0).unwrap()
    }

    fn default_params() -> MelParams {
        MelParams::from_config(&PipelineConfig::default())
    }

    #[test]
    fn mel_scale_formula() {
        // oracle: 2595*log10(2) evaluated directly
        let oracle = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - oracle).abs() < 1e-9);
        assert!((oracle - 781.17).abs() < 0.01);
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((mel_to_hz(hz_to_mel(3456.0)) - 3456.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_shape() {
        let fb = default_fb();
        assert_eq!(fb.weights.shape(), &[80, 513]);
    }

    #[test]
    fn rows_nonnegative_with_positive_entry() {
        let fb = default_fb();
        for (m, row) in fb.weights.rows().into_iter().enumerate() {
            assert!(row.iter().all(|&w| w >= 0.0), "row {m} has negative weight");
            assert!(row.iter().any(|&w| w > 0.0), "row {m} is all zero");
        }
    }

    #[test]
    fn interior_bins_covered() {
        let fb = default_fb();
        for k in 0..513 {
            let f = k as f64 * 16000.0 / 1024.0;
            if f > fb.fmin && f < fb.fmax {
                let covered = (0..80).any(|m| fb.weights[[m, k]] > 0.0);
                assert!(covered, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn invalid_range_rejected() {
        assert!(build_mel_filterbank(1024, 80, 16000, 4000.0, 2000.0).is_err());
        assert!(build_mel_filterbank(1024, 80, 16000, 0.0, 9000.0).is_err());
        assert!(build_mel_filterbank(1024, 1, 16000, 0.0, 8000.0).is_err());
    }

    #[test]
    fn silence_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 16000], 16000);
        let m = mel_spectrogram(&w, &default_fb(), &default_params()).unwrap();
        let expect = 1e-5f64.ln();
        assert!(m.data.iter().all(|&v| v == expect));
    }

    #[test]
    fn one_second_is_96_by_80() {
        let w = Waveform::new(
            (0..16000).map(|n| 0.3 * (n as f64 * 0.11).sin()).collect(),
            16000,
        );
        let m = mel_spectrogram(&w, &default_fb(), &default_params()).unwrap();
        assert_eq!(m.data.shape(), &[96, 80]);
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let w1 = Waveform::new(
            (0..8000).map(|n| 0.25 * (n as f64 * 0.2).sin() + 0.1 * (n as f64 * 0.7).cos()).collect(),
            16000,
        );
        let w2 = Waveform::new(w1.samples.iter().map(|x| 2.0 * x).collect(), 16000);
        let p = default_params();
        let fb = default_fb();
        let m1 = mel_spectrogram(&w1, &fb, &p).unwrap();
        let m2 = mel_spectrogram(&w2, &fb, &p).unwrap();
        let floor = p.log_floor.ln();
        for (a, b) in m1.data.iter().zip(m2.data.iter()) {
            if *a > floor + 1e-9 && *b > floor + 1e-9 {
                assert!((b - a - 4f64.ln()).abs() < 1e-9, "shift = {}", b - a);
            }
        }
    }

    #[test]
    fn mel_extraction_is_deterministic() {
        let w = Waveform::new(
            (0..9600).map(|n| (n as f64 * 0.31).sin() * 0.4).collect(),
            16000,
        );
        let p = default_params();
        let fb = default_fb();
        let a = mel_spectrogram(&w, &fb, &p).unwrap();
        let b = mel_spectrogram(&w, &fb, &p).unwrap();
        assert_eq!(a, b);
    }
}

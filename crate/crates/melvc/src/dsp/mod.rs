//! Spectral front end: pre-emphasis, STFT power spectra, mel filterbank,
//! log-mel features, and mu-law companding.

mod mel;
mod mulaw;
mod stft;

pub use mel::{build_mel_filterbank, hz_to_mel, mel_to_hz, mel_spectrogram, MelFilterbank};
pub use mulaw::{mulaw_decode, mulaw_encode};
pub use stft::{frame_count, power_spectrogram, preemphasize, StftParams};

use ndarray::Array2;

use crate::config::PipelineConfig;

/// Log-mel features: `data` is frames x mel bands, natural log of floored
/// filterbank energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f64>,
    pub sample_rate: u32,
    /// Analysis hop in samples.
    pub hop: usize,
    /// Analysis frame length in samples.
    pub frame_len: usize,
    /// Floor applied to filterbank energies before the log.
    pub log_floor: f64,
}

/// Scale mapping log-mel values into a unit-ish range for network inputs:
/// norm = (v - ln(log_floor)) / MEL_NORM_SCALE, so silence sits at 0.
pub const MEL_NORM_SCALE: f64 = 8.0;

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.ncols()
    }

    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.log_floor.ln()) / MEL_NORM_SCALE
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        v * MEL_NORM_SCALE + self.log_floor.ln()
    }

    /// Frames mapped through `normalize_value`.
    pub fn normalized(&self) -> Array2<f64> {
        self.data.mapv(|v| self.normalize_value(v))
    }
}

/// Mel analysis parameters, bundled from the pipeline config.
#[derive(Debug, Clone, PartialEq)]
pub struct MelParams {
    pub stft: StftParams,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl MelParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        MelParams {
            stft: StftParams {
                sample_rate: cfg.sample_rate,
                frame_len: cfg.frame_len(),
                hop: cfg.hop(),
                n_fft: cfg.n_fft,
            },
            n_mels: cfg.n_mels,
            fmin: cfg.fmin,
            fmax: cfg.fmax,
            preemphasis: cfg.preemphasis,
            log_floor: cfg.log_floor,
        }
    }
}

//! Waveform carrier type plus WAV file I/O and sample-rate conversion.

mod resample;
mod wav;

pub use resample::resample;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rates accepted on ingestion. Everything is normalized to 16 kHz
/// before feature extraction.
pub const SUPPORTED_RATES: [u32; 3] = [16000, 22050, 24000];

/// The pipeline's working rate.
pub const WORKING_RATE: u32 = 16000;

/// Mono PCM audio in [-1, 1] at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|x| x * x).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    /// Clamps samples into [-1, 1] and rejects non-finite values.
    /// Returns how many samples were clipped; callers are expected to
    /// surface a warning when the count is non-zero.
    pub fn sanitize(&mut self) -> Result<usize> {
        let mut clipped = 0usize;
        for s in &mut self.samples {
            if !s.is_finite() {
                return Err(Error::format("non-finite sample in waveform"));
            }
            if *s > 1.0 {
                *s = 1.0;
                clipped += 1;
            } else if *s < -1.0 {
                *s = -1.0;
                clipped += 1;
            }
        }
        Ok(clipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitize_counts_clipped_samples() {
        let mut w = Waveform::new(vec![0.5, 1.25, -3.0, -0.25], 16000);
        assert_eq!(w.sanitize().unwrap(), 2);
        assert_eq!(w.samples, vec![0.5, 1.0, -1.0, -0.25]);
    }

    #[test]
    fn sanitize_rejects_nan() {
        let mut w = Waveform::new(vec![0.0, f64::NAN], 16000);
        assert!(w.sanitize().is_err());
    }

    #[test]
    fn duration_uses_rate() {
        let w = Waveform::new(vec![0.0; 8000], 16000);
        assert!((w.duration_secs() - 0.5).abs() < 1e-12);
    }
}

//! Mel-cepstral distortion: the objective proxy used to compare converted
//! and reference spectrograms.

use ndarray::Array2;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

/// Lowest and highest cepstral orders entering the distance. Order 0 (the
/// frame mean) is deliberately excluded so overall gain shifts do not count.
pub const CEPSTRAL_ORDERS: std::ops::RangeInclusive<usize> = 1..=13;

/// DCT-II cepstra of each log-mel frame, orders 1..=13.
pub fn mel_cepstra(mel: &MelSpectrogram) -> Array2<f64> {
    let t = mel.n_frames();
    let m = mel.n_mels();
    let n_orders = CEPSTRAL_ORDERS.end() - CEPSTRAL_ORDERS.start() + 1;
    let mut out = Array2::zeros((t, n_orders));
    for ti in 0..t {
        for (oi, i) in CEPSTRAL_ORDERS.enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += mel.data[[ti, j]]
                    * (std::f64::consts::PI * i as f64 * (j as f64 + 0.5) / m as f64).cos();
            }
            out[[ti, oi]] = acc;
        }
    }
    out
}

/// Mean mel-cepstral distortion in dB; frames aligned by truncation to the
/// shorter input.
pub fn mcd(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.n_mels() != b.n_mels() {
        return Err(Error::param(format!(
            "mel band mismatch: {} vs {}",
            a.n_mels(),
            b.n_mels()
        )));
    }
    let t = a.n_frames().min(b.n_frames());
    if t == 0 {
        return Err(Error::param("no frames to compare".to_string()));
    }
    let ca = mel_cepstra(a);
    let cb = mel_cepstra(b);
    let k = 10.0 / std::f64::consts::LN_10 * 2.0f64.sqrt();
    let mut acc = 0.0;
    for ti in 0..t {
        let mut d2 = 0.0;
        for oi in 0..ca.ncols() {
            let d = ca[[ti, oi]] - cb[[ti, oi]];
            d2 += d * d;
        }
        acc += d2.sqrt();
    }
    Ok(k * acc / t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel_from(f: impl Fn(usize, usize) -> f64, t: usize) -> MelSpectrogram {
        MelSpectrogram {
            data: Array2::from_shape_fn((t, 80), |(a, b)| f(a, b)),
            sample_rate: 16000,
            hop: 160,
            frame_len: 800,
            log_floor: 1e-5,
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let a = mel_from(|t, m| -4.0 + (t as f64 * 0.2).sin() + (m as f64 * 0.1).cos(), 20);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn symmetric() {
        let a = mel_from(|t, m| -5.0 + (t as f64 * 0.4).sin() * (m as f64 * 0.07).cos(), 15);
        let b = mel_from(|t, m| -4.0 + (t as f64 * 0.3).cos() * (m as f64 * 0.05).sin(), 15);
        let ab = mcd(&a, &b).unwrap();
        let ba = mcd(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn constant_shift_is_invisible() {
        let a = mel_from(|t, m| -6.0 + (t as f64 * 0.25).sin() + (m as f64 * 0.15).cos(), 12);
        let mut b = a.clone();
        for v in b.data.iter_mut() {
            *v += 4f64.ln();
        }
        assert!(mcd(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn truncates_to_shorter() {
        let a = mel_from(|t, m| (t + m) as f64 * 0.01 - 5.0, 30);
        let b = mel_from(|t, m| (t + m) as f64 * 0.01 - 5.0, 18);
        assert!(mcd(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn zero_frames_rejected() {
        let a = mel_from(|_, _| -3.0, 0);
        let b = mel_from(|_, _| -3.0, 5);
        assert!(mcd(&a, &b).is_err());
    }
}

//! Pitch-preserving speed perturbation via waveform-similarity overlap-add.

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// WSOLA analysis/synthesis frame length in samples.
pub const WSOLA_FRAME: usize = 512;
/// Synthesis hop (50% overlap).
const HOP: usize = WSOLA_FRAME / 2;
/// Search tolerance around the nominal analysis position.
const TOLERANCE: isize = 160;

/// Periodic hann; exact constant-overlap-add at 50% hop.
fn cola_window() -> Vec<f64> {
    (0..WSOLA_FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WSOLA_FRAME as f64).cos())
        .collect()
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let denom = (aa * bb).sqrt();
    if denom > 0.0 {
        ab / denom
    } else {
        0.0
    }
}

/// Changes speed without changing pitch. `speed` > 1 shortens the signal.
/// Output length is exactly round(len/speed); `speed == 1.0` returns the
/// input unchanged.
pub fn time_stretch(w: &Waveform, speed: f64) -> Result<Waveform> {
    if !(0.5..=2.0).contains(&speed) {
        return Err(Error::param(format!("speed {speed} outside [0.5, 2.0]")));
    }
    if speed == 1.0 {
        return Ok(w.clone());
    }
    let x = &w.samples;
    let target_len = (x.len() as f64 / speed).round() as usize;
    if target_len == 0 || x.len() < WSOLA_FRAME {
        // too short for overlap-add; nearest-sample readout keeps duration
        let out = (0..target_len)
            .map(|n| {
                let src = ((n as f64 * speed).round() as usize).min(x.len().saturating_sub(1));
                x[src]
            })
            .collect();
        return Ok(Waveform::new(out, w.sample_rate));
    }

    let window = cola_window();
    let mut out = vec![0.0f64; target_len + WSOLA_FRAME];
    let mut wsum = vec![0.0f64; target_len + WSOLA_FRAME];
    let max_start = x.len() - WSOLA_FRAME;
    let mut prev_start: Option<usize> = None;

    let mut k = 0usize;
    loop {
        let s_k = k * HOP;
        if s_k >= target_len {
            break;
        }
        let nominal = ((s_k as f64 * speed).round() as usize).min(max_start);
        let start = match prev_start {
            Some(prev) if prev + HOP <= max_start => {
                // the natural continuation of what was just written
                let template = &x[prev + HOP..prev + HOP + WSOLA_FRAME];
                let mut best_start = nominal;
                let mut best_score = f64::NEG_INFINITY;
                // candidates ordered by |shift|; ties keep the smaller shift
                for d in 0..=TOLERANCE {
                    for sign in [-1isize, 1] {
                        if d == 0 && sign > 0 {
                            continue;
                        }
                        let cand = nominal as isize + sign * d;
                        if cand < 0 || cand as usize > max_start {
                            continue;
                        }
                        let cand = cand as usize;
                        let score = ncc(template, &x[cand..cand + WSOLA_FRAME]);
                        if score > best_score {
                            best_score = score;
                            best_start = cand;
                        }
                    }
                }
                best_start
            }
            _ => nominal,
        };
        for i in 0..WSOLA_FRAME {
            out[s_k + i] += window[i] * x[start + i];
            wsum[s_k + i] += window[i];
        }
        prev_start = Some(start);
        k += 1;
    }

    out.truncate(target_len);
    for (v, &ws) in out.iter_mut().zip(&wsum) {
        if ws > 1e-9 {
            *v /= ws;
        }
    }
    Ok(Waveform::new(out, w.sample_rate))
}

/// Cross product of utterances and speed factors, utterance-major order.
pub fn augment_corpus(utterances: &[Waveform], speeds: &[f64]) -> Result<Vec<(Waveform, f64)>> {
    let mut out = Vec::with_capacity(utterances.len() * speeds.len());
    for u in utterances {
        for &s in speeds {
            out.push((time_stretch(u, s)?, s));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn harmonic_tone(f0: f64, rate: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                let mut v = 0.0;
                for h in 1..=5 {
                    v += (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64;
                }
                0.4 * v
            })
            .collect();
        Waveform::new(samples, rate)
    }

    /// Dominant pitch period by autocorrelation peak over plausible lags.
    fn pitch_period(x: &[f64], min_lag: usize, max_lag: usize) -> usize {
        let n = x.len();
        let mut best = (min_lag, f64::NEG_INFINITY);
        for lag in min_lag..=max_lag {
            let mut acc = 0.0;
            for i in 0..n - lag {
                acc += x[i] * x[i + lag];
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        best.0
    }

    #[test]
    fn speed_one_is_bitwise_identity() {
        let w = harmonic_tone(150.0, 16000, 8000);
        let y = time_stretch(&w, 1.0).unwrap();
        assert_eq!(y, w);
    }

    #[test]
    fn length_contract() {
        let w = Waveform::new(vec![0.25; 16000], 16000);
        let y = time_stretch(&w, 0.8).unwrap();
        assert!((y.len() as i64 - 20000).abs() <= WSOLA_FRAME as i64, "{}", y.len());
    }

    #[test]
    fn pitch_preserved_at_1_3x() {
        let w = harmonic_tone(150.0, 16000, 16000);
        let y = time_stretch(&w, 1.3).unwrap();
        let body = &y.samples[1024..y.len() - 1024];
        let period = pitch_period(body, 16000 / 300, 16000 / 75);
        let expect = 16000.0 / 150.0;
        let rel = (period as f64 - expect).abs() / expect;
        assert!(rel < 0.05, "period {period}, expected {expect:.1}");
    }

    #[test]
    fn out_of_range_speed_rejected() {
        let w = harmonic_tone(150.0, 16000, 4000);
        assert!(time_stretch(&w, 0.4).is_err());
        assert!(time_stretch(&w, 2.5).is_err());
    }

    #[test]
    fn corpus_order_is_utterance_major() {
        let a = harmonic_tone(150.0, 16000, 3000);
        let b = harmonic_tone(200.0, 16000, 3000);
        let out = augment_corpus(&[a, b], &[0.7, 1.3]).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].1, 0.7);
        assert_eq!(out[1].1, 1.3);
        assert_eq!(out[2].1, 0.7);
        assert_eq!(out[3].1, 1.3);
        let ratio = out[0].0.len() as f64 / out[1].0.len() as f64;
        assert!((ratio - 1.3 / 0.7).abs() / (1.3 / 0.7) < 0.05, "ratio {ratio}");
    }

    #[test]
    fn speeds_of_one_leave_corpus_unchanged() {
        let a = harmonic_tone(120.0, 16000, 2500);
        let out = augment_corpus(std::slice::from_ref(&a), &[1.0]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, a);
    }

    #[test]
    fn rms_preserved_within_3db() {
        // speech-shaped noise: white noise through a gentle two-pole lowpass
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut x = vec![0.0f64; 24000];
        for i in 0..x.len() {
            let e: f64 = rng.random::<f64>() - 0.5;
            x[i] = 0.3 * e
                + 1.3 * if i >= 1 { x[i - 1] } else { 0.0 }
                - 0.4 * if i >= 2 { x[i - 2] } else { 0.0 };
        }
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in &mut x {
            *v *= 0.8 / peak;
        }
        let w = Waveform::new(x, 16000);
        for &speed in &[0.7, 0.8, 0.9, 1.1, 1.2, 1.3] {
            let y = time_stretch(&w, speed).unwrap();
            let db = 20.0 * (y.rms() / w.rms()).log10();
            assert!(db.abs() < 3.0, "speed {speed}: {db:.2} dB");
        }
    }

    #[test]
    fn duration_holds_for_all_factors() {
        let w = harmonic_tone(150.0, 16000, 16000);
        for &speed in &[0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3] {
            let y = time_stretch(&w, speed).unwrap();
            let err = (y.len() as f64 * speed - w.len() as f64).abs();
            assert!(err <= WSOLA_FRAME as f64, "speed {speed}: err {err}");
        }
    }
}

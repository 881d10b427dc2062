//! Polyphase windowed-sinc sample-rate conversion to the 16 kHz working rate.

use super::{Waveform, SUPPORTED_RATES, WORKING_RATE};
use crate::error::{Error, Result};

const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 8.6;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Prototype lowpass: Kaiser-windowed sinc, `l` phases, gain `l`, cutoff in
/// cycles per upsampled sample.
fn design_filter(l: usize, cutoff: f64) -> Vec<f64> {
    let n = TAPS_PER_PHASE * l;
    let center = (n - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(KAISER_BETA);
    (0..n)
        .map(|i| {
            let t = i as f64 - center;
            let sinc = if t == 0.0 {
                1.0
            } else {
                let x = std::f64::consts::PI * 2.0 * cutoff * t;
                x.sin() / x
            };
            let r = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            l as f64 * 2.0 * cutoff * sinc * win
        })
        .collect()
}

/// Resamples to `target_rate` (16 kHz only). 16 kHz input is returned
/// unchanged; 22.05 kHz and 24 kHz are converted with an anti-aliased
/// rational polyphase filter.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate != WORKING_RATE {
        return Err(Error::unsupported(format!(
            "resample target {target_rate} Hz, only {WORKING_RATE} Hz supported"
        )));
    }
    if !SUPPORTED_RATES.contains(&w.sample_rate) {
        return Err(Error::unsupported(format!(
            "resample source {} Hz not in {SUPPORTED_RATES:?}",
            w.sample_rate
        )));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }

    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize; // L
    let down = (w.sample_rate as u64 / g) as usize; // M

    // Cutoff at 0.95 x Nyquist of the lower rate, normalized to the
    // upsampled rate source*L.
    let nyq = 0.5 * w.sample_rate.min(target_rate) as f64;
    let cutoff = 0.95 * nyq / (w.sample_rate as f64 * up as f64);
    let h = design_filter(up, cutoff);
    let delay = h.len() / 2;

    let x = &w.samples;
    let n_out = (x.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let m = n * down + delay;
        let phase = m % up;
        let base = m / up;
        let mut acc = 0.0;
        for j in 0..TAPS_PER_PHASE {
            if j > base {
                break;
            }
            let xi = base - j;
            if xi < x.len() {
                acc += h[phase + j * up] * x[xi];
            }
        }
        out.push(acc);
    }
    Ok(Waveform::new(out, target_rate))
}

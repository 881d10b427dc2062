//! Shared test oracles: central finite differences for gradients and
//! deterministic signal generators.

#![allow(dead_code)]

use melvc::audio::Waveform;
use melvc::nn::{ParamSet, Tensor};
use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_H: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-7;

fn agree(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_ATOL + FD_RTOL * analytic.abs().max(numeric.abs())
}

/// Central finite differences over a random sample of coordinates of every
/// parameter tensor. `f` must be a deterministic pure function of `params`.
pub fn check_param_grads(
    params: &mut ParamSet,
    analytic: &ParamSet,
    mut f: impl FnMut(&ParamSet) -> f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) {
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let n = params.get(&name).numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > per_tensor {
            coords = coords.choose_multiple(rng, per_tensor).cloned().collect();
        }
        for idx in coords {
            let original = params.get(&name).data()[idx];
            let h = FD_H * original.abs().max(1.0);
            params.get_mut(&name).data_mut()[idx] = original + h;
            let up = f(params);
            params.get_mut(&name).data_mut()[idx] = original - h;
            let down = f(params);
            params.get_mut(&name).data_mut()[idx] = original;
            let numeric = (up - down) / (2.0 * h);
            let got = analytic.get(&name).data()[idx];
            assert!(
                agree(got, numeric),
                "{name}[{idx}]: analytic {got:e} vs fd {numeric:e}"
            );
        }
    }
}

/// Finite differences on an input tensor.
pub fn check_input_grad(
    x: &mut Tensor,
    analytic_dx: &Tensor,
    mut f: impl FnMut(&Tensor) -> f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) {
    let n = x.numel();
    let mut coords: Vec<usize> = (0..n).collect();
    if n > per_tensor {
        coords = coords.choose_multiple(rng, per_tensor).cloned().collect();
    }
    for idx in coords {
        let original = x.data()[idx];
        let h = FD_H * original.abs().max(1.0);
        x.data_mut()[idx] = original + h;
        let up = f(x);
        x.data_mut()[idx] = original - h;
        let down = f(x);
        x.data_mut()[idx] = original;
        let numeric = (up - down) / (2.0 * h);
        let got = analytic_dx.data()[idx];
        assert!(
            agree(got, numeric),
            "input[{idx}]: analytic {got:e} vs fd {numeric:e}"
        );
    }
}

/// Fixed random projection for scalarizing a tensor output into a loss.
pub fn scalarize_weights(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd_1234);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dot_loss(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

// --- signal generators ---------------------------------------------------

pub fn harmonic_tone(f0: f64, rate: u32, n: usize, amp: f64) -> Waveform {
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let mut v = 0.0;
            for h in 1..=5 {
                v += (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64;
            }
            amp * v
        })
        .collect();
    Waveform::new(samples, rate)
}

/// White noise through a stable two-pole resonant lowpass, scaled to a 0.8
/// peak: a crude long-term speech spectrum.
pub fn speech_shaped_noise(seed: u64, n: usize, rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0f64; n];
    for i in 0..n {
        let e: f64 = rng.random::<f64>() - 0.5;
        x[i] = 0.3 * e
            + 1.3 * if i >= 1 { x[i - 1] } else { 0.0 }
            - 0.4 * if i >= 2 { x[i - 2] } else { 0.0 };
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for v in &mut x {
        *v *= 0.8 / peak;
    }
    Waveform::new(x, rate)
}

/// Stable random AR(16) process (8 conjugate pole pairs) plus its true
/// predictor coefficients.
pub fn ar16_signal(seed: u64, n: usize) -> (Waveform, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poly = vec![1.0f64];
    for _ in 0..8 {
        let radius = 0.55 + 0.35 * rng.random::<f64>();
        let theta = std::f64::consts::PI * (0.05 + 0.9 * rng.random::<f64>());
        let c1 = -2.0 * radius * theta.cos();
        let c2 = radius * radius;
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &p) in poly.iter().enumerate() {
            next[i] += p;
            next[i + 1] += p * c1;
            next[i + 2] += p * c2;
        }
        poly = next;
    }
    let a: Vec<f64> = poly[1..].iter().map(|c| -c).collect();
    let mut x = vec![0.0f64; n];
    for i in 0..n {
        let mut v = 0.02 * (rng.random::<f64>() - 0.5);
        for (j, &aj) in a.iter().enumerate() {
            if i > j {
                v += aj * x[i - 1 - j];
            }
        }
        x[i] = v;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for v in &mut x {
        *v *= 0.7 / peak;
    }
    (Waveform::new(x, 16000), a)
}

/// A short deterministic "utterance": a few voiced segments with moving
/// formant-ish resonances, distinct per seed.
pub fn synthetic_utterance(seed: u64, n: usize, rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_seg = 3 + (seed as usize % 3);
    let seg = n / n_seg;
    let mut out = Vec::with_capacity(n);
    for s in 0..n_seg {
        let f0 = 90.0 + 140.0 * rng.random::<f64>();
        let formant = 400.0 + 2200.0 * rng.random::<f64>();
        let amp = 0.25 + 0.4 * rng.random::<f64>();
        let len = if s == n_seg - 1 { n - out.len() } else { seg };
        for i in 0..len {
            let t = i as f64 / rate as f64;
            let voiced = (2.0 * std::f64::consts::PI * f0 * t).sin()
                + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * f0 * t).sin();
            let color = (2.0 * std::f64::consts::PI * formant * t).sin();
            let env = (std::f64::consts::PI * i as f64 / len as f64).sin();
            out.push(amp * env * (0.7 * voiced + 0.3 * color * voiced.abs()));
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for v in &mut out {
        *v *= 0.75 / peak;
    }
    Waveform::new(out, rate)
}

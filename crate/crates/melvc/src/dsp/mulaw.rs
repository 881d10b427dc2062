//! 8-bit mu-law companding of amplitudes in [-1, 1].

const MU: f64 = 255.0;

/// code = round(127.5 + 127.5*u), u = sign(x)*ln(1+255|x|)/ln(256).
/// Inputs outside [-1, 1] are clamped.
pub fn mulaw_encode(x: f64) -> u8 {
    let x = x.clamp(-1.0, 1.0);
    let u = x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln();
    (127.5 + 127.5 * u).round().clamp(0.0, 255.0) as u8
}

/// Algebraic inverse of the encoder's level centers.
pub fn mulaw_decode(code: u8) -> f64 {
    let u = (code as f64 - 127.5) / 127.5;
    u.signum() * ((1.0 + MU).powf(u.abs()) - 1.0) / MU
}

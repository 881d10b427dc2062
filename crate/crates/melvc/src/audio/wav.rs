//! RIFF/WAVE reader and writer, PCM 16-bit only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Waveform, SUPPORTED_RATES};
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

fn u16_at(b: &[u8], off: usize) -> Result<u16> {
    let raw = b
        .get(off..off + 2)
        .ok_or_else(|| Error::format("truncated WAV chunk"))?;
    Ok(u16::from_le_bytes([raw[0], raw[1]]))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32> {
    let raw = b
        .get(off..off + 4)
        .ok_or_else(|| Error::format("truncated WAV chunk"))?;
    Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
}

/// Reads a PCM 16-bit RIFF/WAVE file. Stereo input is averaged to mono;
/// samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(&bytes, off + 4)? as usize;
        let body_start = off + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| Error::format("WAV chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(Error::format("WAV chunk extends past end of file"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt chunk too small"));
                }
                fmt = Some((u16_at(body, 0)?, u16_at(body, 2)?, u32_at(body, 4)?, u16_at(body, 14)?));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }

    let (codec, channels, rate, bits) = fmt.ok_or_else(|| Error::format("missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format("missing data chunk"))?;
    if codec != 1 {
        return Err(Error::unsupported(format!("WAV codec {codec}, only PCM supported")));
    }
    if bits != 16 {
        return Err(Error::unsupported(format!("{bits}-bit WAV, only 16-bit supported")));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::unsupported(format!("{channels}-channel WAV, only mono/stereo supported")));
    }
    if !SUPPORTED_RATES.contains(&rate) {
        return Err(Error::unsupported(format!("sample rate {rate} Hz not in {SUPPORTED_RATES:?}")));
    }

    let ch = channels as usize;
    let frame_bytes = 2 * ch;
    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0.0f64;
        for c in 0..ch {
            let o = f * frame_bytes + 2 * c;
            let v = i16::from_le_bytes([data[o], data[o + 1]]);
            acc += v as f64 / SCALE;
        }
        samples.push(acc / ch as f64);
    }
    Ok(Waveform::new(samples, rate))
}

/// Writes a mono PCM 16-bit WAV. Samples are saturated at the 16-bit range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        let q = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

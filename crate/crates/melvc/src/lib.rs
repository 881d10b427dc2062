//! Voice conversion pipeline library: mel front end, speed-perturbation
//! augmentation, content/prosody features, a sequence-to-sequence conversion
//! model, and an LPC excitation vocoder whose prediction coefficients are
//! derived from the mel spectrogram.

pub mod audio;
pub mod augment;
pub mod config;
pub mod content;
pub mod conversion;
pub mod dsp;
pub mod eval;
pub mod error;
pub mod formats;
pub mod mel_lpc;
pub mod nn;
pub mod pipeline;
pub mod prosody;
pub mod vocoder;

pub use error::{Error, Result};

//! Pipeline configuration. Defaults match the model card: 16 kHz audio,
//! 50 ms / 10 ms framing, hann window, pre-emphasis 0.97, 80 mel bands,
//! LPC order 16, seven speed-perturbation factors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Model card widths.
    Full,
    /// All network widths divided by 4; for gradient checks and fast training.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub frame_ms: u32,
    pub hop_ms: u32,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
    pub lpc_order: usize,
    pub bn_dim: usize,
    pub prosody_dim: usize,
    pub speeds: Vec<f64>,
    pub profile: Profile,
    pub seed: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_decoder_steps: usize,
    pub include_augmented_in_medoid: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 16000,
            frame_ms: 50,
            hop_ms: 10,
            n_fft: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            preemphasis: 0.97,
            log_floor: 1e-5,
            lpc_order: 16,
            bn_dim: 256,
            prosody_dim: 128,
            speeds: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3],
            profile: Profile::Full,
            seed: 1,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_decoder_steps: 1000,
            include_augmented_in_medoid: false,
        }
    }
}

impl PipelineConfig {
    /// Frame length in samples (50 ms at 16 kHz = 800).
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as usize * self.frame_ms as usize) / 1000
    }

    /// Hop in samples (10 ms at 16 kHz = 160).
    pub fn hop(&self) -> usize {
        (self.sample_rate as usize * self.hop_ms as usize) / 1000
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Stable hash of the canonical JSON form, recorded in checkpoints so a
    /// load against a different configuration can warn.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.to_json().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

//! End-to-end orchestration: corpus loading, feature extraction, training
//! drivers, conversion, and deterministic copy synthesis. The CLI is a thin
//! wrapper over these entry points, so they are exercised directly by the
//! acceptance suite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, write_wav, Waveform, WORKING_RATE};
use crate::config::{PipelineConfig, Profile};
use crate::content::{surrogate_bottleneck, BottleneckFeatures};
use crate::conversion::{
    convert, train_step, ConversionDims, ConversionModel, TrainStats, TrainingExample,
};
use crate::dsp::{build_mel_filterbank, mel_spectrogram, MelFilterbank, MelParams, MelSpectrogram};
use crate::error::{Error, Result};
use crate::eval::mcd;
use crate::formats::{Checkpoint, CheckpointMeta, TensorRecord};
use crate::mel_lpc::{lpc_residual, mel_to_lpc, MelInverter};
use crate::nn::{Adam, ParamSet, Tensor};
use crate::prosody::{select_medoid, ProsodyEmbedding, ProsodyExtractor};
use crate::vocoder::{
    synthesize, teacher_forced_nll, train_vocoder_step, SynthesisMode, VocoderDims, VocoderExample,
    VocoderModel,
};

pub const CONVERSION_CKPT: &str = "conversion.ckpt";
pub const VOCODER_CKPT: &str = "vocoder.ckpt";
pub const MEDOID_ENTRY: &str = "prosody.medoid";

/// Precomputed analysis machinery shared by every command.
pub struct FeaturePipeline {
    pub cfg: PipelineConfig,
    pub fb: MelFilterbank,
    pub mel_params: MelParams,
    pub inverter: MelInverter,
}

impl FeaturePipeline {
    pub fn new(cfg: &PipelineConfig) -> Result<FeaturePipeline> {
        let fb = build_mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
        let inverter = MelInverter::new(&fb);
        Ok(FeaturePipeline {
            cfg: cfg.clone(),
            mel_params: MelParams::from_config(cfg),
            fb,
            inverter,
        })
    }

    /// Reads a WAV, resamples to 16 kHz, clamps out-of-range samples.
    /// Returns the waveform and the clipped-sample count.
    pub fn ingest(&self, path: impl AsRef<Path>) -> Result<(Waveform, usize)> {
        let raw = read_wav(path)?;
        let mut w = resample(&raw, WORKING_RATE)?;
        let clipped = w.sanitize()?;
        Ok((w, clipped))
    }

    pub fn mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        mel_spectrogram(w, &self.fb, &self.mel_params)
    }

    pub fn bottleneck(&self, mel: &MelSpectrogram) -> Result<BottleneckFeatures> {
        surrogate_bottleneck(mel, self.cfg.seed, self.cfg.bn_dim)
    }

    pub fn prosody_extractor(&self) -> ProsodyExtractor {
        let divisor = match self.cfg.profile {
            Profile::Full => 1,
            Profile::Toy => 4,
        };
        let dim = match self.cfg.profile {
            Profile::Full => self.cfg.prosody_dim,
            Profile::Toy => (self.cfg.prosody_dim / 4).max(1),
        };
        ProsodyExtractor::new(self.cfg.n_mels, dim, divisor, self.cfg.seed)
    }
}

/// One corpus utterance, identified by its file stem.
pub struct CorpusItem {
    pub id: String,
    pub path: PathBuf,
    pub wav: Waveform,
}

/// Loads every `.wav` under `dir` (sorted by name) at the working rate.
pub fn load_corpus(pipe: &FeaturePipeline, dir: impl AsRef<Path>) -> Result<Vec<CorpusItem>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::NotFound(format!(
            "no .wav files under {}",
            dir.as_ref().display()
        )));
    }
    paths
        .into_iter()
        .map(|path| {
            let (wav, _) = pipe.ingest(&path)?;
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("utterance")
                .to_string();
            Ok(CorpusItem { id, path, wav })
        })
        .collect()
}

/// Marks files produced by the `augment` command (`*_sp{speed}` suffix).
pub fn is_augmented_id(id: &str) -> bool {
    if let Some(pos) = id.rfind("_sp") {
        let tail = &id[pos + 3..];
        return !tail.is_empty() && tail.chars().all(|c| c.is_ascii_digit() || c == '.');
    }
    false
}

/// Mel + surrogate bottleneck + prosody embedding for every utterance.
pub fn build_training_examples(
    pipe: &FeaturePipeline,
    corpus: &[CorpusItem],
) -> Result<Vec<TrainingExample>> {
    let extractor = pipe.prosody_extractor();
    corpus
        .iter()
        .map(|item| {
            let mel = pipe.mel(&item.wav)?;
            let bn = pipe.bottleneck(&mel)?;
            let prosody = extractor.encode(&mel, &item.id)?;
            TrainingExample::new(&bn, &mel, &prosody, &item.id)
        })
        .collect()
}

pub struct TrainedConversion {
    pub model: ConversionModel,
    pub params: ParamSet,
    pub steps: u64,
    pub initial: TrainStats,
    pub last: TrainStats,
    /// Set when a non-finite loss halted training; parameters hold the
    /// last finite state so the caller can still checkpoint them.
    pub diverged_at: Option<u64>,
}

/// Teacher-forced training until `steps` or until `stop_when(stats)` says
/// done. Batches are round-robin chunks of at most 8 utterances.
pub fn train_conversion(
    pipe: &FeaturePipeline,
    examples: &[TrainingExample],
    steps: u64,
    init_from: Option<&Path>,
    mut progress: impl FnMut(u64, &TrainStats),
    mut stop_when: impl FnMut(&TrainStats) -> bool,
) -> Result<TrainedConversion> {
    if examples.is_empty() {
        return Err(Error::param("no training examples".to_string()));
    }
    let cfg = &pipe.cfg;
    let dims = ConversionDims::from_config(cfg);
    let (model, mut params) = ConversionModel::new_seeded(dims, cfg.seed);
    if let Some(path) = init_from {
        let ck = Checkpoint::load(path)?;
        params = ck.to_params()?;
    }
    let mut opt = Adam::new(&params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    let chunk = 8usize;
    let n_chunks = examples.len().div_ceil(chunk);
    let mut initial = None;
    let mut last = TrainStats { total: 0.0, l1: 0.0, stop_bce: 0.0, diagonality: 0.0 };
    let mut done_steps = 0;
    let mut diverged_at = None;
    for step in 0..steps {
        let lo = (step as usize % n_chunks) * chunk;
        let hi = (lo + chunk).min(examples.len());
        let stats = match train_step(&model, &mut params, &mut opt, &examples[lo..hi], cfg.seed, step) {
            Ok(stats) => stats,
            Err(Error::Diverged { step, .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        if initial.is_none() {
            initial = Some(stats);
        }
        last = stats;
        done_steps = step + 1;
        progress(step, &stats);
        if stop_when(&stats) {
            break;
        }
    }
    Ok(TrainedConversion {
        model,
        params,
        steps: done_steps,
        initial: initial.unwrap_or(last),
        last,
        diverged_at,
    })
}

pub fn save_conversion_checkpoint(
    path: impl AsRef<Path>,
    pipe: &FeaturePipeline,
    params: &ParamSet,
    steps: u64,
    medoid: Option<(&str, &[f64])>,
) -> Result<()> {
    let mut ck = Checkpoint::from_params(params);
    if let Some((_, emb)) = medoid {
        ck.insert(
            MEDOID_ENTRY,
            TensorRecord::from_tensor_f64(&Tensor::from_vec(&[1, emb.len()], emb.to_vec())?),
        )?;
    }
    ck.set_meta(&CheckpointMeta {
        kind: "conversion".into(),
        config_hash: pipe.cfg.hash(),
        step: steps,
        profile: format!("{:?}", pipe.cfg.profile).to_lowercase(),
        medoid_utterance: medoid.map(|(id, _)| id.to_string()),
    })?;
    ck.save(path)
}

/// Loads a checkpoint, returning (params, meta, warnings). A config-hash
/// mismatch is a warning, not an error.
pub fn load_checkpoint_checked(
    path: impl AsRef<Path>,
    cfg: &PipelineConfig,
) -> Result<(Checkpoint, ParamSet, Vec<String>)> {
    let ck = Checkpoint::load(&path)?;
    let params = ck.to_params_skipping(&[MEDOID_ENTRY])?;
    let mut warnings = Vec::new();
    if let Some(meta) = ck.meta()? {
        if meta.config_hash != cfg.hash() {
            warnings.push(format!(
                "checkpoint {} was written with config hash {}, current is {}",
                path.as_ref().display(),
                meta.config_hash,
                cfg.hash()
            ));
        }
    }
    Ok((ck, params, warnings))
}

pub struct TrainedVocoder {
    pub model: VocoderModel,
    pub params: ParamSet,
    pub steps: u64,
    pub initial_nll: f64,
    pub last_nll: f64,
    pub diverged_at: Option<u64>,
}

/// Truncated-BPTT vocoder training: one window per utterance per step,
/// deterministic window schedule.
pub fn train_vocoder(
    pipe: &FeaturePipeline,
    corpus_pairs: &[(MelSpectrogram, Waveform)],
    steps: u64,
    window: usize,
    mut progress: impl FnMut(u64, f64),
    mut stop_when: impl FnMut(f64) -> bool,
) -> Result<TrainedVocoder> {
    let cfg = &pipe.cfg;
    let dims = VocoderDims::from_config(cfg);
    let (model, mut params) = VocoderModel::new_seeded(dims, cfg.seed);
    let mut opt = Adam::new(&params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    let mut examples = Vec::with_capacity(corpus_pairs.len());
    for (mel, wav) in corpus_pairs {
        let track = mel_to_lpc(mel, &pipe.inverter, cfg.lpc_order)?;
        examples.push(VocoderExample::prepare(mel, &track, wav)?);
    }
    let eval_len = 800usize;
    let initial_nll = mean_nll(&model, &params, &examples, eval_len)?;
    let mut last_nll = initial_nll;
    let mut done = 0;
    let mut diverged_at = None;
    for step in 0..steps {
        let batch: Vec<(&VocoderExample, usize, usize)> = examples
            .iter()
            .map(|ex| {
                let span = ex.len().saturating_sub(window).max(1);
                let start = (step as usize * 149) % span;
                (ex, start, window)
            })
            .collect();
        match train_vocoder_step(&model, &mut params, &mut opt, &batch, step) {
            Ok(_) => {}
            Err(Error::Diverged { step, .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
        done = step + 1;
        if step % 50 == 0 || step + 1 == steps {
            last_nll = mean_nll(&model, &params, &examples, eval_len)?;
            progress(step, last_nll);
            if stop_when(last_nll) {
                break;
            }
        }
    }
    Ok(TrainedVocoder { model, params, steps: done, initial_nll, last_nll, diverged_at })
}

fn mean_nll(
    model: &VocoderModel,
    params: &ParamSet,
    examples: &[VocoderExample],
    len: usize,
) -> Result<f64> {
    let mut acc = 0.0;
    for ex in examples {
        acc += teacher_forced_nll(model, params, ex, 0, len.min(ex.len()))?;
    }
    Ok(acc / examples.len() as f64)
}

pub fn save_vocoder_checkpoint(
    path: impl AsRef<Path>,
    pipe: &FeaturePipeline,
    params: &ParamSet,
    steps: u64,
) -> Result<()> {
    let mut ck = Checkpoint::from_params(params);
    ck.set_meta(&CheckpointMeta {
        kind: "vocoder".into(),
        config_hash: pipe.cfg.hash(),
        step: steps,
        profile: format!("{:?}", pipe.cfg.profile).to_lowercase(),
        medoid_utterance: None,
    })?;
    ck.save(path)
}

/// Computes prosody embeddings over a corpus (originals only unless the
/// config includes augmented copies), selects the medoid utterance, and
/// stores its id + embedding into the conversion checkpoint.
pub fn prosody_select(
    pipe: &FeaturePipeline,
    corpus: &[CorpusItem],
    ckpt_path: impl AsRef<Path>,
) -> Result<String> {
    let extractor = pipe.prosody_extractor();
    let mut embeddings = Vec::new();
    for item in corpus {
        if !pipe.cfg.include_augmented_in_medoid && is_augmented_id(&item.id) {
            continue;
        }
        let mel = pipe.mel(&item.wav)?;
        embeddings.push(extractor.encode(&mel, &item.id)?);
    }
    if embeddings.is_empty() {
        return Err(Error::param("no candidate utterances for medoid selection".to_string()));
    }
    let idx = select_medoid(&embeddings)?;
    let chosen = &embeddings[idx];

    let mut ck = Checkpoint::load(&ckpt_path)?;
    let mut meta = ck.meta()?.unwrap_or_default();
    meta.medoid_utterance = Some(chosen.source_utterance.clone());
    ck.replace(
        MEDOID_ENTRY,
        TensorRecord::from_tensor_f64(&Tensor::from_vec(&[1, chosen.vector.len()], chosen.vector.clone())?),
    );
    ck.set_meta(&meta)?;
    ck.save(&ckpt_path)?;
    Ok(chosen.source_utterance.clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvertReport {
    pub source_duration_s: f64,
    pub output_duration_s: f64,
    pub source_frames: usize,
    pub output_frames: usize,
    pub truncated: bool,
    pub mcd_vs_source_db: f64,
    pub synthesis_samples_per_sec: f64,
    pub clipped_input_samples: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// The full inference chain: WAV in, converted WAV out, sidecar report.
pub fn run_convert(
    cfg: &PipelineConfig,
    source_wav: impl AsRef<Path>,
    model_dir: impl AsRef<Path>,
    out_wav: impl AsRef<Path>,
    seed: u64,
) -> Result<ConvertReport> {
    let pipe = FeaturePipeline::new(cfg)?;
    let (wav, clipped) = pipe.ingest(&source_wav)?;
    let mel = pipe.mel(&wav)?;
    let bn = pipe.bottleneck(&mel)?;

    let conv_path = model_dir.as_ref().join(CONVERSION_CKPT);
    let (conv_ck, conv_params, mut warnings) = load_checkpoint_checked(&conv_path, cfg)?;
    let medoid_rec = conv_ck
        .get(MEDOID_ENTRY)
        .ok_or_else(|| Error::NotFound("medoid prosody embedding in checkpoint".to_string()))?;
    let medoid_vec = medoid_rec.to_tensor()?;
    let medoid_id = conv_ck
        .meta()?
        .and_then(|m| m.medoid_utterance)
        .unwrap_or_else(|| "unknown".to_string());
    let prosody = ProsodyEmbedding {
        vector: medoid_vec.data().to_vec(),
        source_utterance: medoid_id,
    };

    let dims = ConversionDims::from_config(cfg);
    let (conv_model, _) = ConversionModel::new_seeded(dims, cfg.seed);
    let converted = convert(
        &conv_model,
        &conv_params,
        &bn,
        &prosody,
        cfg.max_decoder_steps,
        cfg.hop(),
        cfg.frame_len(),
        cfg.log_floor,
        cfg.sample_rate,
    )?;

    let voc_path = model_dir.as_ref().join(VOCODER_CKPT);
    let (_, voc_params, voc_warnings) = load_checkpoint_checked(&voc_path, cfg)?;
    warnings.extend(voc_warnings);
    let voc_dims = VocoderDims::from_config(cfg);
    let (voc_model, _) = VocoderModel::new_seeded(voc_dims, cfg.seed);

    let track = mel_to_lpc(&converted.mel, &pipe.inverter, cfg.lpc_order)?;
    let synth = synthesize(
        &voc_model,
        &voc_params,
        &converted.mel,
        &track,
        &SynthesisMode::Sample { seed },
    )?;
    let mut out = synth.wav;
    out.sanitize()?;
    write_wav(&out_wav, &out)?;

    let report = ConvertReport {
        source_duration_s: wav.duration_secs(),
        output_duration_s: out.duration_secs(),
        source_frames: mel.n_frames(),
        output_frames: converted.mel.n_frames(),
        truncated: converted.truncated,
        mcd_vs_source_db: mcd(&converted.mel, &mel)?,
        synthesis_samples_per_sec: synth.samples_per_sec,
        clipped_input_samples: clipped,
        seed,
        warnings,
    };
    let sidecar = format!("{}.report.json", out_wav.as_ref().display());
    std::fs::write(sidecar, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopySynthReport {
    pub snr_db: f64,
    pub frames: usize,
    pub samples_per_sec: f64,
}

/// Deterministic copy synthesis: analyze, filter, resynthesize from the
/// exact residual. The output should be indistinguishable from the input;
/// the report carries the measured SNR.
pub fn copy_synth(
    cfg: &PipelineConfig,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
) -> Result<CopySynthReport> {
    let pipe = FeaturePipeline::new(cfg)?;
    let (wav, _) = pipe.ingest(&input)?;
    let mel = pipe.mel(&wav)?;
    let track = mel_to_lpc(&mel, &pipe.inverter, cfg.lpc_order)?;
    let usable = track.n_frames() * cfg.hop();
    let trimmed = Waveform::new(wav.samples[..usable].to_vec(), wav.sample_rate);
    let started = std::time::Instant::now();
    let residual = lpc_residual(&trimmed, &track, cfg.hop())?;
    let resynth = crate::mel_lpc::lpc_synthesize(&residual, &track, cfg.hop(), wav.sample_rate)?;
    let elapsed = started.elapsed().as_secs_f64().max(1e-9);
    write_wav(&output, &resynth)?;

    let sig: f64 = trimmed.samples.iter().map(|v| v * v).sum();
    let noise: f64 = trimmed
        .samples
        .iter()
        .zip(&resynth.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let snr_db = if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sig / noise).log10()
    };
    Ok(CopySynthReport {
        snr_db,
        frames: track.n_frames(),
        samples_per_sec: usable as f64 / elapsed,
    })
}

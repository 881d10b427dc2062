//! Excitation-domain neural vocoder. A frame-rate network turns mel frames
//! into per-frame conditioning vectors; a sample-rate network sees the
//! previous output sample, previous excitation, and the current LPC
//! prediction (all as mu-law codes) plus the conditioning, and emits a
//! 256-way distribution over the next excitation code. The LPC coefficients
//! come from the mel spectrogram, so synthesis needs nothing else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::config::{PipelineConfig, Profile};
use crate::dsp::{mulaw_decode, mulaw_encode, MelSpectrogram};
use crate::error::{Error, Result};
use crate::mel_lpc::{lpc_residual, lpc_synthesize, LpcTrack};
use crate::nn::{
    cross_entropy, softmax, split_cols, Activation, Adam, Conv1d, Conv1dCache, Dense, DenseCache,
    Embedding, GruCell, GruStepCache, Padding, ParamSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocoderDims {
    pub n_mels: usize,
    pub cond: usize,
    pub gru_a: usize,
    pub gru_b: usize,
    pub emb: usize,
}

impl VocoderDims {
    pub fn full(n_mels: usize) -> Self {
        VocoderDims { n_mels, cond: 128, gru_a: 64, gru_b: 16, emb: 64 }
    }

    pub fn toy(n_mels: usize) -> Self {
        VocoderDims { n_mels, cond: 32, gru_a: 16, gru_b: 4, emb: 16 }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Self {
        match cfg.profile {
            Profile::Full => Self::full(cfg.n_mels),
            Profile::Toy => Self::toy(cfg.n_mels),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VocoderModel {
    pub dims: VocoderDims,
    fr_conv1: Conv1d,
    fr_conv2: Conv1d,
    fr_fc1: Dense,
    fr_fc2: Dense,
    embed: Embedding,
    gru_a: GruCell,
    gru_b: GruCell,
    out_fc1: Dense,
    out_fc2: Dense,
}

const SCALE1: &str = "voc.out.scale1";
const SCALE2: &str = "voc.out.scale2";

impl VocoderModel {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, dims: VocoderDims) -> VocoderModel {
        let d = dims;
        let fr_conv1 = Conv1d::init(ps, rng, "voc.fr.conv1", 3, d.n_mels, d.cond, Padding::Same, Activation::Relu);
        let fr_conv2 = Conv1d::init(ps, rng, "voc.fr.conv2", 3, d.cond, d.cond, Padding::Same, Activation::Relu);
        let fr_fc1 = Dense::init(ps, rng, "voc.fr.fc1", d.cond, d.cond, Activation::Relu);
        let fr_fc2 = Dense::init(ps, rng, "voc.fr.fc2", d.cond, d.cond, Activation::Tanh);
        let embed = Embedding::init(ps, rng, "voc.embed", 256, d.emb);
        let gru_a = GruCell::init(ps, rng, "voc.gru_a", 3 * d.emb + d.cond, d.gru_a);
        let gru_b = GruCell::init(ps, rng, "voc.gru_b", d.gru_a, d.gru_b);
        let out_fc1 = Dense::init(ps, rng, "voc.out.fc1", d.gru_b, 256, Activation::Tanh);
        let out_fc2 = Dense::init(ps, rng, "voc.out.fc2", d.gru_b, 256, Activation::Tanh);
        // dual-branch output combiner; 0.5 keeps initial logits small so the
        // starting distribution is near uniform
        ps.insert(SCALE1, Tensor::filled(&[256], 0.5));
        ps.insert(SCALE2, Tensor::filled(&[256], 0.5));
        VocoderModel { dims, fr_conv1, fr_conv2, fr_fc1, fr_fc2, embed, gru_a, gru_b, out_fc1, out_fc2 }
    }

    pub fn new_seeded(dims: VocoderDims, seed: u64) -> (VocoderModel, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x766f63);
        let model = VocoderModel::init(&mut ps, &mut rng, dims);
        (model, ps)
    }
}

pub struct FrameCondCache {
    c1: Conv1dCache,
    c2: Conv1dCache,
    f1: DenseCache,
    f2: DenseCache,
}

impl VocoderModel {
    /// Mel frames (normalized domain, [T, n_mels]) to conditioning [T, cond].
    pub fn frame_condition(&self, ps: &ParamSet, mel_norm: &Tensor) -> (Tensor, FrameCondCache) {
        let (c1, c1c) = self.fr_conv1.forward(ps, mel_norm);
        let (c2, c2c) = self.fr_conv2.forward(ps, &c1);
        let mut h = c1.clone();
        h.add_assign(&c2);
        let (f1, f1c) = self.fr_fc1.forward(ps, &h);
        let (cond, f2c) = self.fr_fc2.forward(ps, &f1);
        (cond, FrameCondCache { c1: c1c, c2: c2c, f1: f1c, f2: f2c })
    }

    pub fn frame_condition_backward(
        &self,
        ps: &ParamSet,
        cache: &FrameCondCache,
        d_cond: &Tensor,
        grads: &mut ParamSet,
    ) -> Tensor {
        let d_f1 = self.fr_fc2.backward(ps, &cache.f2, d_cond, grads);
        let d_h = self.fr_fc1.backward(ps, &cache.f1, &d_f1, grads);
        // h = c1 + conv2(c1)
        let mut d_c1 = self.fr_conv2.backward(ps, &cache.c2, &d_h, grads);
        d_c1.add_assign(&d_h);
        self.fr_conv1.backward(ps, &cache.c1, &d_c1, grads)
    }
}

/// Recurrent state of the sample-rate network.
#[derive(Debug, Clone)]
pub struct SampleState {
    pub h_a: Tensor,
    pub h_b: Tensor,
}

impl SampleState {
    pub fn zero(dims: &VocoderDims) -> SampleState {
        SampleState { h_a: Tensor::zeros(&[1, dims.gru_a]), h_b: Tensor::zeros(&[1, dims.gru_b]) }
    }
}

pub struct SampleStepCache {
    codes: [usize; 3],
    gru_a_c: GruStepCache,
    gru_b_c: GruStepCache,
    fc1_c: DenseCache,
    fc2_c: DenseCache,
    t1: Tensor,
    t2: Tensor,
    pub logits: Tensor,
}

impl VocoderModel {
    /// One sample step: codes are (previous sample, previous excitation,
    /// current prediction). Returns logits over 256 excitation codes.
    pub fn sample_step(
        &self,
        ps: &ParamSet,
        s_prev: u8,
        e_prev: u8,
        p_code: u8,
        cond_row: &[f64],
        state: &SampleState,
    ) -> (Tensor, SampleState, SampleStepCache) {
        let codes = [s_prev as usize, e_prev as usize, p_code as usize];
        let embs = self.embed.lookup(ps, &codes); // [3, emb]
        let mut x = Tensor::zeros(&[1, 3 * self.dims.emb + self.dims.cond]);
        {
            let dst = x.row_mut(0);
            for (i, r) in (0..3).enumerate() {
                dst[i * self.dims.emb..(i + 1) * self.dims.emb].copy_from_slice(embs.row(r));
            }
            dst[3 * self.dims.emb..].copy_from_slice(cond_row);
        }
        let (h_a, gru_a_c) = self.gru_a.step(ps, &x, &state.h_a);
        let (h_b, gru_b_c) = self.gru_b.step(ps, &h_a, &state.h_b);
        let (t1, fc1_c) = self.out_fc1.forward(ps, &h_b);
        let (t2, fc2_c) = self.out_fc2.forward(ps, &h_b);
        let s1 = ps.get(SCALE1);
        let s2 = ps.get(SCALE2);
        let mut logits = Tensor::zeros(&[1, 256]);
        for i in 0..256 {
            logits.data_mut()[i] = s1.data()[i] * t1.data()[i] + s2.data()[i] * t2.data()[i];
        }
        let new_state = SampleState { h_a, h_b };
        let cache = SampleStepCache { codes, gru_a_c, gru_b_c, fc1_c, fc2_c, t1, t2, logits: logits.clone() };
        (logits, new_state, cache)
    }

    /// Backward for one sample step. Returns (d_cond_row, d_state_prev).
    #[allow(clippy::too_many_arguments)]
    pub fn sample_step_backward(
        &self,
        ps: &ParamSet,
        cache: &SampleStepCache,
        d_logits: &Tensor,
        d_state: &SampleState, // gradient w.r.t. this step's output state
        grads: &mut ParamSet,
    ) -> (Tensor, SampleState) {
        let s1 = ps.get(SCALE1).clone();
        let s2 = ps.get(SCALE2).clone();
        let mut d_t1 = Tensor::zeros(&[1, 256]);
        let mut d_t2 = Tensor::zeros(&[1, 256]);
        {
            let g1 = grads.get_mut(SCALE1);
            for i in 0..256 {
                let g = d_logits.data()[i];
                g1.data_mut()[i] += g * cache.t1.data()[i];
                d_t1.data_mut()[i] = g * s1.data()[i];
            }
        }
        {
            let g2 = grads.get_mut(SCALE2);
            for i in 0..256 {
                let g = d_logits.data()[i];
                g2.data_mut()[i] += g * cache.t2.data()[i];
                d_t2.data_mut()[i] = g * s2.data()[i];
            }
        }
        let mut d_h_b = self.out_fc1.backward(ps, &cache.fc1_c, &d_t1, grads);
        d_h_b.add_assign(&self.out_fc2.backward(ps, &cache.fc2_c, &d_t2, grads));
        d_h_b.add_assign(&d_state.h_b);
        let (mut d_h_a, d_h_b_prev) = self.gru_b.backward_step(ps, &cache.gru_b_c, &d_h_b, grads);
        d_h_a.add_assign(&d_state.h_a);
        let (d_x, d_h_a_prev) = self.gru_a.backward_step(ps, &cache.gru_a_c, &d_h_a, grads);
        let parts = split_cols(&d_x, &[3 * self.dims.emb, self.dims.cond]);
        let d_embs = Tensor::from_vec(&[3, self.dims.emb], parts[0].data().to_vec()).unwrap();
        self.embed.backward(&cache.codes, &d_embs, grads);
        (
            parts[1].clone(),
            SampleState { h_a: d_h_a_prev, h_b: d_h_b_prev },
        )
    }
}

/// Per-utterance vocoder training data: conditioning input, the LPC
/// schedule, the waveform, and the teacher-forced codes derived from them.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub mel_norm: Tensor,
    pub samples: Vec<f64>,
    /// mu-law codes of the waveform samples.
    pub sample_codes: Vec<u8>,
    /// mu-law codes of the LPC predictions (true past samples).
    pub pred_codes: Vec<u8>,
    /// mu-law codes of the residual: the training targets.
    pub target_codes: Vec<u8>,
    pub hop: usize,
}

impl VocoderExample {
    /// Builds teacher-forcing material from an analysis pair. The waveform
    /// is truncated to the frames the track covers.
    pub fn prepare(mel: &MelSpectrogram, track: &LpcTrack, wav: &Waveform) -> Result<VocoderExample> {
        let usable = (track.n_frames() * mel.hop).min(wav.len());
        let trimmed = Waveform::new(wav.samples[..usable].to_vec(), wav.sample_rate);
        let residual = lpc_residual(&trimmed, track, mel.hop)?;
        let mut sample_codes = Vec::with_capacity(usable);
        let mut pred_codes = Vec::with_capacity(usable);
        let mut target_codes = Vec::with_capacity(usable);
        for n in 0..usable {
            let x = trimmed.samples[n];
            let e = residual[n];
            let p = x - e;
            sample_codes.push(mulaw_encode(x));
            pred_codes.push(mulaw_encode(p.clamp(-1.0, 1.0)));
            target_codes.push(mulaw_encode(e.clamp(-1.0, 1.0)));
        }
        let norm = mel.normalized();
        let t = mel.n_frames();
        Ok(VocoderExample {
            mel_norm: Tensor::from_vec(&[t, mel.n_mels()], norm.iter().copied().collect())?,
            samples: trimmed.samples,
            sample_codes,
            pred_codes,
            target_codes,
            hop: mel.hop,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Teacher-forced mean cross-entropy of the excitation codes over a window.
/// Pure evaluation, no update.
pub fn teacher_forced_nll(
    model: &VocoderModel,
    ps: &ParamSet,
    ex: &VocoderExample,
    start: usize,
    len: usize,
) -> Result<f64> {
    let end = (start + len).min(ex.len());
    if start >= end {
        return Err(Error::param("empty NLL window".to_string()));
    }
    let (cond, _) = model.frame_condition(ps, &ex.mel_norm);
    let mut state = SampleState::zero(&model.dims);
    let mut nll = 0.0;
    for n in start..end {
        let s_prev = if n == 0 { 128 } else { ex.sample_codes[n - 1] };
        let e_prev = if n == 0 { 128 } else { ex.target_codes[n - 1] };
        let frame = (n / ex.hop).min(cond.rows() - 1);
        let (logits, new_state, _) =
            model.sample_step(ps, s_prev, e_prev, ex.pred_codes[n], cond.row(frame), &state);
        let probs = softmax(&logits);
        nll -= probs.data()[ex.target_codes[n] as usize].max(1e-300).ln();
        state = new_state;
    }
    Ok(nll / (end - start) as f64)
}

/// One truncated-BPTT training step over a window of each example.
/// Returns the mean pre-update cross-entropy per sample.
pub fn train_vocoder_step(
    model: &VocoderModel,
    params: &mut ParamSet,
    opt: &mut Adam,
    batch: &[(&VocoderExample, usize, usize)], // (example, start, len)
    step: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("empty vocoder batch".to_string()));
    }
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let mut total_n = 0usize;
    for &(ex, start, len) in batch {
        let end = (start + len).min(ex.len());
        if start >= end {
            return Err(Error::param("empty vocoder window".to_string()));
        }
        let (cond, fr_cache) = model.frame_condition(params, &ex.mel_norm);
        let mut state = SampleState::zero(&model.dims);
        let mut caches = Vec::with_capacity(end - start);
        let mut frames = Vec::with_capacity(end - start);
        let mut targets = Vec::with_capacity(end - start);
        for n in start..end {
            let s_prev = if n == 0 { 128 } else { ex.sample_codes[n - 1] };
            let e_prev = if n == 0 { 128 } else { ex.target_codes[n - 1] };
            let frame = (n / ex.hop).min(cond.rows() - 1);
            let (_, new_state, cache) =
                model.sample_step(params, s_prev, e_prev, ex.pred_codes[n], cond.row(frame), &state);
            caches.push(cache);
            frames.push(frame);
            targets.push(ex.target_codes[n] as usize);
            state = new_state;
        }
        // loss over the whole window at once
        let n_steps = caches.len();
        let mut logits = Tensor::zeros(&[n_steps, 256]);
        for (i, c) in caches.iter().enumerate() {
            logits.row_mut(i).copy_from_slice(c.logits.row(0));
        }
        let (ce, d_logits) = cross_entropy(&logits, &targets);
        if !ce.is_finite() {
            return Err(Error::Diverged { step, loss: ce });
        }
        total += ce * n_steps as f64;
        total_n += n_steps;

        let mut d_cond = Tensor::zeros(cond.shape());
        let mut d_state = SampleState {
            h_a: Tensor::zeros(&[1, model.dims.gru_a]),
            h_b: Tensor::zeros(&[1, model.dims.gru_b]),
        };
        for i in (0..n_steps).rev() {
            let d_l = Tensor::from_vec(&[1, 256], d_logits.row(i).to_vec()).unwrap();
            let (d_cond_row, d_prev) =
                model.sample_step_backward(params, &caches[i], &d_l, &d_state, &mut grads);
            let dst = d_cond.row_mut(frames[i]);
            for (a, b) in dst.iter_mut().zip(d_cond_row.data()) {
                *a += b;
            }
            d_state = d_prev;
        }
        model.frame_condition_backward(params, &fr_cache, &d_cond, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    opt.step(params, &grads);
    Ok(total / total_n as f64)
}

#[derive(Debug, Clone)]
pub enum SynthesisMode {
    /// Draw excitation codes from the softmax (temperature 1), seeded.
    Sample { seed: u64 },
    /// Deterministic argmax excitation.
    Argmax,
    /// Bypass the network entirely and filter the given excitation.
    Copy(Vec<f64>),
}

pub struct SynthesisResult {
    pub wav: Waveform,
    pub samples_per_sec: f64,
}

/// Synthesizes `track.n_frames() * hop` samples from mel conditioning and
/// the mel-derived LPC schedule.
pub fn synthesize(
    model: &VocoderModel,
    ps: &ParamSet,
    mel: &MelSpectrogram,
    track: &LpcTrack,
    mode: &SynthesisMode,
) -> Result<SynthesisResult> {
    if track.n_frames() != mel.n_frames() {
        return Err(Error::shape(format!(
            "track has {} frames, mel has {}",
            track.n_frames(),
            mel.n_frames()
        )));
    }
    let started = std::time::Instant::now();
    if let SynthesisMode::Copy(excitation) = mode {
        let wav = lpc_synthesize(excitation, track, mel.hop, mel.sample_rate)?;
        let dt = started.elapsed().as_secs_f64().max(1e-9);
        return Ok(SynthesisResult { samples_per_sec: wav.len() as f64 / dt, wav });
    }

    let km = track.max_reflection();
    if km >= 1.0 {
        return Err(Error::Unstable { frame: 0, magnitude: km });
    }
    let norm = mel.normalized();
    let t = mel.n_frames();
    let mel_norm = Tensor::from_vec(&[t, mel.n_mels()], norm.iter().copied().collect())?;
    let (cond, _) = model.frame_condition(ps, &mel_norm);
    let order = track.order();
    let hop = mel.hop;
    let n_out = t * hop;
    let mut rng = match mode {
        SynthesisMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut s = Vec::with_capacity(n_out);
    let mut state = SampleState::zero(&model.dims);
    let mut s_prev_code = 128u8;
    let mut e_prev_code = 128u8;
    for n in 0..n_out {
        let frame = n / hop;
        let mut p = 0.0f64;
        for i in 1..=order.min(n) {
            p += track.coeffs[[frame, i - 1]] * s[n - i];
        }
        let p_code = mulaw_encode(p.clamp(-1.0, 1.0));
        let (logits, new_state, _) =
            model.sample_step(ps, s_prev_code, e_prev_code, p_code, cond.row(frame), &state);
        state = new_state;
        let probs = softmax(&logits);
        let code = match &mut rng {
            Some(r) => {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut chosen = 255usize;
                for (i, &p) in probs.data().iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
            None => {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (i, &p) in probs.data().iter().enumerate() {
                    if p > best.1 {
                        best = (i, p);
                    }
                }
                best.0
            }
        };
        let e = mulaw_decode(code as u8);
        let out = (p + e).clamp(-1.0, 1.0);
        s.push(out);
        s_prev_code = mulaw_encode(out);
        e_prev_code = code as u8;
    }
    let dt = started.elapsed().as_secs_f64().max(1e-9);
    Ok(SynthesisResult {
        samples_per_sec: n_out as f64 / dt,
        wav: Waveform::new(s, mel.sample_rate),
    })
}

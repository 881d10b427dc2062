//! Sequence-to-sequence conversion model: content features in, mel
//! spectrogram out. Encoder pre-net + CBHG over the bottleneck features,
//! utterance-level prosody vector concatenated onto every encoder state,
//! additive-attention decoder with a two-layer residual GRU, one mel frame
//! per step, and a sigmoid stop head for free-running inference.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{PipelineConfig, Profile};
use crate::content::BottleneckFeatures;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    apply_mask, bce_with_logits, concat_cols, dropout_mask, maxpool_w2_same,
    maxpool_w2_same_backward, sigmoid, split_cols, Activation, AdditiveAttention, Adam,
    AttentionCache, Conv1d, Conv1dCache, Dense, DenseCache, GruCell, GruStepCache, Highway,
    HighwayCache, MaxPoolW2Cache, Padding, ParamSet, Tensor,
};
use crate::prosody::ProsodyEmbedding;

/// Attention weight matrix, one row per decoder step, rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub weights: Array2<f64>,
}

impl Alignment {
    /// Mean over decoder steps of the weight sitting on the "diagonal"
    /// encoder index round(t * T_enc / T_dec).
    pub fn diagonality(&self) -> f64 {
        let (t_dec, t_enc) = (self.weights.nrows(), self.weights.ncols());
        if t_dec == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for t in 0..t_dec {
            let j = ((t as f64 * t_enc as f64 / t_dec as f64).round() as usize).min(t_enc - 1);
            acc += self.weights[[t, j]];
        }
        acc / t_dec as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConversionDims {
    pub bn_dim: usize,
    pub prenet: usize,
    pub cbhg: usize,
    pub attn: usize,
    pub dec: usize,
    pub prosody: usize,
    pub n_mels: usize,
    pub bank_k: usize,
}

impl ConversionDims {
    pub fn full(bn_dim: usize, n_mels: usize, prosody: usize) -> Self {
        ConversionDims { bn_dim, prenet: 256, cbhg: 128, attn: 128, dec: 256, prosody, n_mels, bank_k: 16 }
    }

    /// All network widths divided by 4.
    pub fn toy(bn_dim: usize, n_mels: usize, prosody: usize) -> Self {
        ConversionDims { bn_dim, prenet: 64, cbhg: 32, attn: 32, dec: 64, prosody, n_mels, bank_k: 16 }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Self {
        let prosody = match cfg.profile {
            Profile::Full => cfg.prosody_dim,
            Profile::Toy => (cfg.prosody_dim / 4).max(1),
        };
        match cfg.profile {
            Profile::Full => Self::full(cfg.bn_dim, cfg.n_mels, prosody),
            Profile::Toy => Self::toy(cfg.bn_dim, cfg.n_mels, prosody),
        }
    }

    pub fn enc_out(&self) -> usize {
        2 * self.cbhg
    }
}

/// Dropout site tags (pure function of seed/step/site).
const SITE_ENC_PRE1: u64 = 1;
const SITE_ENC_PRE2: u64 = 2;
const SITE_DEC_PRE1: u64 = 3;
const SITE_DEC_PRE2: u64 = 4;
const DROPOUT_P: f64 = 0.5;

/// Training-mode context: enables dropout, keyed deterministically.
#[derive(Debug, Clone, Copy)]
pub struct TrainMode {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct ConversionModel {
    pub dims: ConversionDims,
    enc_pre1: Dense,
    enc_pre2: Dense,
    bank: Vec<Conv1d>,
    proj1: Conv1d,
    proj2: Conv1d,
    res_proj: Dense,
    highways: Vec<Highway>,
    gru_fwd: GruCell,
    gru_bwd: GruCell,
    cond_proj: Dense,
    dec_pre1: Dense,
    dec_pre2: Dense,
    att_rnn: GruCell,
    attention: AdditiveAttention,
    dec_rnn1: GruCell,
    dec_rnn2: GruCell,
    mel_out: Dense,
    stop_out: Dense,
}

impl ConversionModel {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, dims: ConversionDims) -> ConversionModel {
        let d = dims;
        let enc_pre1 = Dense::init(ps, rng, "enc.prenet.fc1", d.bn_dim, d.prenet, Activation::Relu);
        let enc_pre2 = Dense::init(ps, rng, "enc.prenet.fc2", d.prenet, d.prenet, Activation::Relu);
        let bank = (1..=d.bank_k)
            .map(|k| {
                Conv1d::init(ps, rng, &format!("enc.cbhg.bank{k}"), k, d.prenet, d.cbhg, Padding::Same, Activation::Relu)
            })
            .collect();
        let proj1 = Conv1d::init(ps, rng, "enc.cbhg.proj1", 3, d.bank_k * d.cbhg, d.cbhg, Padding::Same, Activation::Relu);
        let proj2 = Conv1d::init(ps, rng, "enc.cbhg.proj2", 3, d.cbhg, d.cbhg, Padding::Same, Activation::Linear);
        let res_proj = Dense::init(ps, rng, "enc.cbhg.resproj", d.prenet, d.cbhg, Activation::Linear);
        let highways = (0..4).map(|i| Highway::init(ps, rng, &format!("enc.cbhg.highway{i}"), d.cbhg)).collect();
        let gru_fwd = GruCell::init(ps, rng, "enc.cbhg.gru_fwd", d.cbhg, d.cbhg);
        let gru_bwd = GruCell::init(ps, rng, "enc.cbhg.gru_bwd", d.cbhg, d.cbhg);
        let cond_proj = Dense::init(ps, rng, "cond.proj", d.enc_out() + d.prosody, d.enc_out(), Activation::Linear);
        let dec_pre1 = Dense::init(ps, rng, "dec.prenet.fc1", d.n_mels, d.dec, Activation::Relu);
        let dec_pre2 = Dense::init(ps, rng, "dec.prenet.fc2", d.dec, d.dec, Activation::Relu);
        let att_rnn = GruCell::init(ps, rng, "dec.att_rnn", d.dec + d.enc_out(), d.dec);
        let attention = AdditiveAttention::init(ps, rng, "attn", d.dec, d.enc_out(), d.attn);
        let dec_rnn1 = GruCell::init(ps, rng, "dec.rnn1", d.dec + d.enc_out(), d.dec);
        let dec_rnn2 = GruCell::init(ps, rng, "dec.rnn2", d.dec, d.dec);
        let mel_out = Dense::init(ps, rng, "dec.mel_out", d.dec, d.n_mels, Activation::Linear);
        let stop_out = Dense::init(ps, rng, "dec.stop", d.dec, 1, Activation::Linear);
        ConversionModel {
            dims,
            enc_pre1,
            enc_pre2,
            bank,
            proj1,
            proj2,
            res_proj,
            highways,
            gru_fwd,
            gru_bwd,
            cond_proj,
            dec_pre1,
            dec_pre2,
            att_rnn,
            attention,
            dec_rnn1,
            dec_rnn2,
            mel_out,
            stop_out,
        }
    }

    pub fn new_seeded(dims: ConversionDims, seed: u64) -> (ConversionModel, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f6e76);
        let model = ConversionModel::init(&mut ps, &mut rng, dims);
        (model, ps)
    }
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        out.row_mut(i).copy_from_slice(t.row(r - 1 - i));
    }
    out
}

pub struct EncoderCache {
    pre1: DenseCache,
    pre2: DenseCache,
    mask1: Option<Vec<f64>>,
    mask2: Option<Vec<f64>>,
    bank_caches: Vec<Conv1dCache>,
    bank_concat: Tensor,
    pool_cache: MaxPoolW2Cache,
    proj1_c: Conv1dCache,
    proj2_c: Conv1dCache,
    res_c: DenseCache,
    highway_caches: Vec<HighwayCache>,
    fwd_caches: Vec<GruStepCache>,
    bwd_caches: Vec<GruStepCache>,
}

impl EncoderCache {
    /// Shape of the concatenated conv-bank output (T x K*channels).
    pub fn bank_concat_shape(&self) -> &[usize] {
        self.bank_concat.shape()
    }
}

impl ConversionModel {
    /// Encoder: pre-net + CBHG. `bn` is [T, bn_dim]; returns [T, 2*cbhg].
    pub fn encode(&self, ps: &ParamSet, bn: &Tensor, mode: Option<TrainMode>) -> (Tensor, EncoderCache) {
        let (p1, pre1) = self.enc_pre1.forward(ps, bn);
        let (p1d, mask1) = match mode {
            Some(m) => {
                let mask = dropout_mask(p1.numel(), DROPOUT_P, m.seed, m.step, SITE_ENC_PRE1);
                (apply_mask(&p1, &mask), Some(mask))
            }
            None => (p1, None),
        };
        let (p2, pre2) = self.enc_pre2.forward(ps, &p1d);
        let (p2d, mask2) = match mode {
            Some(m) => {
                let mask = dropout_mask(p2.numel(), DROPOUT_P, m.seed, m.step, SITE_ENC_PRE2);
                (apply_mask(&p2, &mask), Some(mask))
            }
            None => (p2, None),
        };

        let mut bank_outs = Vec::with_capacity(self.bank.len());
        let mut bank_caches = Vec::with_capacity(self.bank.len());
        for conv in &self.bank {
            let (y, c) = conv.forward(ps, &p2d);
            bank_outs.push(y);
            bank_caches.push(c);
        }
        let refs: Vec<&Tensor> = bank_outs.iter().collect();
        let bank_concat = concat_cols(&refs);
        let (pooled, pool_cache) = maxpool_w2_same(&bank_concat);
        let (pr1, proj1_c) = self.proj1.forward(ps, &pooled);
        let (pr2, proj2_c) = self.proj2.forward(ps, &pr1);
        let (res, res_c) = self.res_proj.forward(ps, &p2d);
        let mut h = pr2;
        h.add_assign(&res);

        let mut highway_caches = Vec::with_capacity(4);
        for hw in &self.highways {
            let (y, c) = hw.forward(ps, &h);
            h = y;
            highway_caches.push(c);
        }

        let (fwd_states, fwd_caches) = self.gru_fwd.run_sequence(ps, &h);
        let h_rev = reverse_rows(&h);
        let (bwd_states_rev, bwd_caches) = self.gru_bwd.run_sequence(ps, &h_rev);
        let bwd_states = reverse_rows(&bwd_states_rev);
        let enc = concat_cols(&[&fwd_states, &bwd_states]);
        (
            enc,
            EncoderCache {
                pre1,
                pre2,
                mask1,
                mask2,
                bank_caches,
                bank_concat,
                pool_cache,
                proj1_c,
                proj2_c,
                res_c,
                highway_caches,
                fwd_caches,
                bwd_caches,
            },
        )
    }

    /// Backward through the encoder; returns d_bn.
    pub fn encode_backward(&self, ps: &ParamSet, cache: &EncoderCache, d_enc: &Tensor, grads: &mut ParamSet) -> Tensor {
        let parts = split_cols(d_enc, &[self.dims.cbhg, self.dims.cbhg]);
        let d_fwd = &parts[0];
        let d_bwd = reverse_rows(&parts[1]);
        let mut dh = self.gru_fwd.backward_sequence(ps, &cache.fwd_caches, d_fwd, grads);
        let dh_rev = self.gru_bwd.backward_sequence(ps, &cache.bwd_caches, &d_bwd, grads);
        dh.add_assign(&reverse_rows(&dh_rev));

        for (hw, c) in self.highways.iter().zip(&cache.highway_caches).rev() {
            dh = hw.backward(ps, c, &dh, grads);
        }

        // residual split: dh flows to both proj2 and res_proj
        let mut d_p2d = self.res_proj.backward(ps, &cache.res_c, &dh, grads);
        let d_pr1 = self.proj2.backward(ps, &cache.proj2_c, &dh, grads);
        let d_pooled = self.proj1.backward(ps, &cache.proj1_c, &d_pr1, grads);
        let d_concat = maxpool_w2_same_backward(&cache.pool_cache, &d_pooled);
        let widths: Vec<usize> = self.bank.iter().map(|_| self.dims.cbhg).collect();
        let d_bank = split_cols(&d_concat, &widths);
        for (conv, (c, dy)) in self.bank.iter().zip(cache.bank_caches.iter().zip(&d_bank)) {
            d_p2d.add_assign(&conv.backward(ps, c, dy, grads));
        }

        let d_p2 = match &cache.mask2 {
            Some(m) => apply_mask(&d_p2d, m),
            None => d_p2d,
        };
        let d_p1d = self.enc_pre2.backward(ps, &cache.pre2, &d_p2, grads);
        let d_p1 = match &cache.mask1 {
            Some(m) => apply_mask(&d_p1d, m),
            None => d_p1d,
        };
        self.enc_pre1.backward(ps, &cache.pre1, &d_p1, grads)
    }

    /// Broadcasts the prosody vector onto every encoder state and projects
    /// back to the encoder width.
    pub fn condition(&self, ps: &ParamSet, enc: &Tensor, prosody: &Tensor) -> (Tensor, DenseCache) {
        let t = enc.rows();
        let mut tiled = Tensor::zeros(&[t, self.dims.prosody]);
        for r in 0..t {
            tiled.row_mut(r).copy_from_slice(prosody.row(0));
        }
        let joint = concat_cols(&[enc, &tiled]);
        self.cond_proj.forward(ps, &joint)
    }

    /// Backward through conditioning; returns (d_enc, d_prosody).
    pub fn condition_backward(
        &self,
        ps: &ParamSet,
        cache: &DenseCache,
        d_cond: &Tensor,
        grads: &mut ParamSet,
    ) -> (Tensor, Tensor) {
        let d_joint = self.cond_proj.backward(ps, cache, d_cond, grads);
        let parts = split_cols(&d_joint, &[self.dims.enc_out(), self.dims.prosody]);
        let mut d_prosody = Tensor::zeros(&[1, self.dims.prosody]);
        for r in 0..parts[1].rows() {
            for (a, b) in d_prosody.data_mut().iter_mut().zip(parts[1].row(r)) {
                *a += b;
            }
        }
        (parts[0].clone(), d_prosody)
    }
}

pub struct DecoderStepCache {
    pre1: DenseCache,
    pre2: DenseCache,
    mask1: Option<Vec<f64>>,
    mask2: Option<Vec<f64>>,
    att_rnn_c: GruStepCache,
    att_c: AttentionCache,
    rnn1_c: GruStepCache,
    rnn2_c: GruStepCache,
    mel_c: DenseCache,
    stop_c: DenseCache,
}

pub struct DecodeOutput {
    /// Normalized-domain mel frames, [T_dec, n_mels].
    pub mel_norm: Tensor,
    pub alignment: Alignment,
    pub stop_logits: Vec<f64>,
    pub truncated: bool,
    pub caches: Vec<DecoderStepCache>,
}

impl ConversionModel {
    /// Decoder. With `teacher` given (training) it runs exactly
    /// teacher.rows() steps; otherwise free-runs until the stop head fires
    /// or `max_steps` is hit (setting `truncated`).
    pub fn decode(
        &self,
        ps: &ParamSet,
        enc_cond: &Tensor,
        teacher: Option<&Tensor>,
        max_steps: usize,
        mode: Option<TrainMode>,
    ) -> DecodeOutput {
        let d = &self.dims;
        let t_enc = enc_cond.rows();
        let keys = self.attention.keys(ps, enc_cond);
        let t_limit = teacher.map(|t| t.rows()).unwrap_or(max_steps);

        let mut mel_rows: Vec<f64> = Vec::new();
        let mut weights_rows: Vec<f64> = Vec::new();
        let mut stop_logits = Vec::new();
        let mut caches = Vec::new();
        let mut truncated = false;

        let mut ctx = Tensor::zeros(&[1, d.enc_out()]);
        let mut att_h = Tensor::zeros(&[1, d.dec]);
        let mut h1 = Tensor::zeros(&[1, d.dec]);
        let mut g2 = Tensor::zeros(&[1, d.dec]);
        let mut prev = Tensor::zeros(&[1, d.n_mels]);

        for t in 0..t_limit {
            if let Some(teach) = teacher {
                if t > 0 {
                    prev = Tensor::from_vec(&[1, d.n_mels], teach.row(t - 1).to_vec()).unwrap();
                }
            }
            let (p1, pre1) = self.dec_pre1.forward(ps, &prev);
            let (p1d, mask1) = match mode {
                Some(m) => {
                    let mask = dropout_mask(
                        p1.numel(),
                        DROPOUT_P,
                        m.seed,
                        m.step.wrapping_add(t as u64) ^ (t as u64+ 1),
                        SITE_DEC_PRE1,
                    );
                    (apply_mask(&p1, &mask), Some(mask))
                }
                None => (p1, None),
            };
            let (p2, pre2) = self.dec_pre2.forward(ps, &p1d);
            let (p2d, mask2) = match mode {
                Some(m) => {
                    let mask = dropout_mask(
                        p2.numel(),
                        DROPOUT_P,
                        m.seed,
                        m.step.wrapping_add(t as u64) ^ (t as u64 + 1),
                        SITE_DEC_PRE2,
                    );
                    (apply_mask(&p2, &mask), Some(mask))
                }
                None => (p2, None),
            };

            let att_in = concat_cols(&[&p2d, &ctx]);
            let (att_h_new, att_rnn_c) = self.att_rnn.step(ps, &att_in, &att_h);
            att_h = att_h_new;
            let (ctx_new, att_c) = self.attention.step(ps, &att_h, &keys, enc_cond);
            ctx = ctx_new;

            let d_in = concat_cols(&[&att_h, &ctx]);
            let (h1_new, rnn1_c) = self.dec_rnn1.step(ps, &d_in, &h1);
            h1 = h1_new;
            let (g2_new, rnn2_c) = self.dec_rnn2.step(ps, &h1, &g2);
            g2 = g2_new;
            let mut d2 = h1.clone();
            d2.add_assign(&g2);

            let (mel_t, mel_c) = self.mel_out.forward(ps, &d2);
            let (stop_t, stop_c) = self.stop_out.forward(ps, &d2);

            mel_rows.extend_from_slice(mel_t.row(0));
            weights_rows.extend_from_slice(&att_c.weights);
            stop_logits.push(stop_t.data()[0]);
            caches.push(DecoderStepCache {
                pre1,
                pre2,
                mask1,
                mask2,
                att_rnn_c,
                att_c,
                rnn1_c,
                rnn2_c,
                mel_c,
                stop_c,
            });

            if teacher.is_none() {
                let stop_p = sigmoid(stop_t.data()[0]);
                if stop_p > 0.5 {
                    break;
                }
                if t + 1 == t_limit {
                    truncated = true;
                }
                prev = mel_t;
            }
        }

        let t_dec = caches.len();
        DecodeOutput {
            mel_norm: Tensor::from_vec(&[t_dec, d.n_mels], mel_rows).unwrap(),
            alignment: Alignment {
                weights: Array2::from_shape_vec((t_dec, t_enc), weights_rows).unwrap(),
            },
            stop_logits,
            truncated,
            caches,
        }
    }

    /// BPTT through a teacher-forced decode. `d_mel` is [T_dec, n_mels],
    /// `d_stop` one value per step. Returns (d_enc_cond).
    pub fn decode_backward(
        &self,
        ps: &ParamSet,
        enc_cond: &Tensor,
        out: &DecodeOutput,
        d_mel: &Tensor,
        d_stop: &[f64],
        grads: &mut ParamSet,
    ) -> Tensor {
        let d = &self.dims;
        let t_dec = out.caches.len();
        let keys = self.attention.keys(ps, enc_cond);
        let mut d_keys = Tensor::zeros(keys.shape());
        let mut d_enc = Tensor::zeros(enc_cond.shape());

        let mut d_ctx_carry = Tensor::zeros(&[1, d.enc_out()]);
        let mut d_att_h_carry = Tensor::zeros(&[1, d.dec]);
        let mut d_h1_carry = Tensor::zeros(&[1, d.dec]);
        let mut d_g2_carry = Tensor::zeros(&[1, d.dec]);

        for t in (0..t_dec).rev() {
            let cache = &out.caches[t];
            let d_mel_t = Tensor::from_vec(&[1, d.n_mels], d_mel.row(t).to_vec()).unwrap();
            let d_stop_t = Tensor::from_vec(&[1, 1], vec![d_stop[t]]).unwrap();

            let mut d_d2 = self.mel_out.backward(ps, &cache.mel_c, &d_mel_t, grads);
            d_d2.add_assign(&self.stop_out.backward(ps, &cache.stop_c, &d_stop_t, grads));

            // d2 = h1 + g2
            let mut d_g2 = d_d2.clone();
            d_g2.add_assign(&d_g2_carry);
            let mut d_h1 = d_d2;
            let (d_h1_from2, d_g2_prev) = self.dec_rnn2.backward_step(ps, &cache.rnn2_c, &d_g2, grads);
            d_h1.add_assign(&d_h1_from2);
            d_h1.add_assign(&d_h1_carry);
            d_g2_carry = d_g2_prev;

            let (d_din, d_h1_prev) = self.dec_rnn1.backward_step(ps, &cache.rnn1_c, &d_h1, grads);
            d_h1_carry = d_h1_prev;
            let parts = split_cols(&d_din, &[d.dec, d.enc_out()]);
            let mut d_att_h = parts[0].clone();
            let mut d_ctx = parts[1].clone();
            d_ctx.add_assign(&d_ctx_carry);

            let dq = self.attention.backward_step(
                ps,
                &cache.att_c,
                enc_cond,
                &d_ctx,
                &mut d_keys,
                &mut d_enc,
                grads,
            );
            d_att_h.add_assign(&dq);
            d_att_h.add_assign(&d_att_h_carry);

            let (d_att_in, d_att_h_prev) = self.att_rnn.backward_step(ps, &cache.att_rnn_c, &d_att_h, grads);
            d_att_h_carry = d_att_h_prev;
            let parts = split_cols(&d_att_in, &[d.dec, d.enc_out()]);
            let d_p2d = parts[0].clone();
            d_ctx_carry = parts[1].clone();

            let d_p2 = match &cache.mask2 {
                Some(m) => apply_mask(&d_p2d, m),
                None => d_p2d,
            };
            let d_p1d = self.dec_pre2.backward(ps, &cache.pre2, &d_p2, grads);
            let d_p1 = match &cache.mask1 {
                Some(m) => apply_mask(&d_p1d, m),
                None => d_p1d,
            };
            // teacher frames are data; their gradient is dropped
            let _ = self.dec_pre1.backward(ps, &cache.pre1, &d_p1, grads);
        }

        self.attention.backward_keys(ps, enc_cond, &d_keys, &mut d_enc, grads);
        d_enc
    }
}

/// One training utterance, already featurized. `mel_norm` rows are in the
/// normalized mel domain.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub bn: Tensor,
    pub mel_norm: Tensor,
    pub prosody: Tensor,
    pub id: String,
}

impl TrainingExample {
    pub fn new(bn: &BottleneckFeatures, mel: &MelSpectrogram, prosody: &ProsodyEmbedding, id: &str) -> Result<Self> {
        if bn.n_frames() != mel.n_frames() {
            return Err(Error::shape(format!(
                "bn has {} frames, mel has {}", bn.n_frames(), mel.n_frames()
            )));
        }
        let t = mel.n_frames();
        let norm = mel.normalized();
        Ok(TrainingExample {
            bn: Tensor::from_vec(&[t, bn.dim()], bn.data.iter().copied().collect())?,
            mel_norm: Tensor::from_vec(&[t, mel.n_mels()], norm.iter().copied().collect())?,
            prosody: Tensor::from_vec(&[1, prosody.vector.len()], prosody.vector.clone())?,
            id: id.to_string(),
        })
    }
}

/// Mean absolute error and its gradient.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape());
    let n = pred.numel().max(1) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for i in 0..pred.numel() {
        let diff = pred.data()[i] - target.data()[i];
        loss += diff.abs();
        grad.data_mut()[i] = if diff == 0.0 { 0.0 } else { diff.signum() / n };
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub total: f64,
    pub l1: f64,
    pub stop_bce: f64,
    pub diagonality: f64,
}

/// Teacher-forced loss + one Adam update over a batch. Returns pre-update
/// statistics.
pub fn train_step(
    model: &ConversionModel,
    params: &mut ParamSet,
    opt: &mut Adam,
    batch: &[TrainingExample],
    seed: u64,
    step: u64,
) -> Result<TrainStats> {
    if batch.is_empty() {
        return Err(Error::param("empty training batch".to_string()));
    }
    let mut grads = params.zeros_like();
    let mut stats = TrainStats { total: 0.0, l1: 0.0, stop_bce: 0.0, diagonality: 0.0 };
    let mode = Some(TrainMode { seed, step });
    for ex in batch {
        let (enc, enc_cache) = model.encode(params, &ex.bn, mode);
        let (enc_cond, cond_cache) = model.condition(params, &enc, &ex.prosody);
        let out = model.decode(params, &enc_cond, Some(&ex.mel_norm), 0, mode);

        let (l1, d_mel) = l1_loss(&out.mel_norm, &ex.mel_norm);
        let t_dec = out.stop_logits.len();
        let mut stop_targets = vec![0.0; t_dec];
        stop_targets[t_dec - 1] = 1.0;
        let (bce, d_stop) = bce_with_logits(&out.stop_logits, &stop_targets);
        let total = l1 + bce;
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        stats.total += total;
        stats.l1 += l1;
        stats.stop_bce += bce;
        stats.diagonality += out.alignment.diagonality();

        let d_enc_cond = model.decode_backward(params, &enc_cond, &out, &d_mel, &d_stop, &mut grads);
        let (d_enc, _d_prosody) = model.condition_backward(params, &cond_cache, &d_enc_cond, &mut grads);
        model.encode_backward(params, &enc_cache, &d_enc, &mut grads);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    stats.total *= inv;
    stats.l1 *= inv;
    stats.stop_bce *= inv;
    stats.diagonality *= inv;
    opt.step(params, &grads);
    Ok(stats)
}

/// Free-running conversion: content features + prosody vector to a mel
/// spectrogram in real (log) units.
pub struct ConvertOutput {
    pub mel: MelSpectrogram,
    pub alignment: Alignment,
    pub truncated: bool,
}

pub fn convert(
    model: &ConversionModel,
    params: &ParamSet,
    bn: &BottleneckFeatures,
    prosody: &ProsodyEmbedding,
    max_steps: usize,
    hop: usize,
    frame_len: usize,
    log_floor: f64,
    sample_rate: u32,
) -> Result<ConvertOutput> {
    let t = bn.n_frames();
    let bn_t = Tensor::from_vec(&[t, bn.dim()], bn.data.iter().copied().collect())?;
    let pro = Tensor::from_vec(&[1, prosody.vector.len()], prosody.vector.clone())?;
    let (enc, _) = model.encode(params, &bn_t, None);
    let (enc_cond, _) = model.condition(params, &enc, &pro);
    let out = model.decode(params, &enc_cond, None, max_steps, None);
    let t_dec = out.mel_norm.rows();
    let floor_log = log_floor.ln();
    let data = Array2::from_shape_fn((t_dec, model.dims.n_mels), |(r, c)| {
        let v = out.mel_norm.at2(r, c) * crate::dsp::MEL_NORM_SCALE + floor_log;
        v.max(floor_log)
    });
    Ok(ConvertOutput {
        mel: MelSpectrogram { data, sample_rate, hop, frame_len, log_floor },
        alignment: out.alignment,
        truncated: out.truncated,
    })
}

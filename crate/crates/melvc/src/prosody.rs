//! Fixed-length prosody reference encoder and cluster-center (medoid)
//! utterance selection. The encoder treats the mel spectrogram as an image:
//! six stride-2 3x3 conv layers, a GRU over what is left of the time axis,
//! and a tanh projection to a fixed-size style vector.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, Conv2dCache, Dense, DenseCache, GruCell, GruStepCache, ParamSet, Tensor};

/// Utterance-level style vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyEmbedding {
    pub vector: Vec<f64>,
    pub source_utterance: String,
}

/// Conv channel progression of the reference encoder at full width.
const FULL_CHANNELS: [usize; 6] = [32, 32, 64, 64, 128, 128];

/// Time padding granularity: six stride-2 layers need a multiple of 2^6.
pub const TIME_MULTIPLE: usize = 64;

#[derive(Debug, Clone)]
pub struct ProsodyEncoder {
    convs: Vec<Conv2d>,
    gru: GruCell,
    out: Dense,
    pub n_mels: usize,
    pub dim: usize,
}

pub struct ProsodyCache {
    conv_caches: Vec<Conv2dCache>,
    gru_caches: Vec<GruStepCache>,
    gru_input: Tensor,
    out_cache: DenseCache,
}

impl ProsodyEncoder {
    /// `width_divisor` is 1 for the full profile, 4 for the toy profile.
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        n_mels: usize,
        dim: usize,
        width_divisor: usize,
    ) -> ProsodyEncoder {
        let mut convs = Vec::new();
        let mut cin = 1usize;
        for (i, full) in FULL_CHANNELS.iter().enumerate() {
            let cout = (full / width_divisor).max(1);
            convs.push(Conv2d::init(
                ps,
                rng,
                &format!("prosody.conv{i}"),
                3,
                3,
                cin,
                cout,
                (2, 2),
                Activation::Relu,
            ));
            cin = cout;
        }
        // frequency axis after six halvings
        let mut f = n_mels;
        for _ in 0..6 {
            f = f.div_ceil(2);
        }
        let gru_in = f * cin;
        let gru = GruCell::init(ps, rng, "prosody.gru", gru_in, dim);
        let out = Dense::init(ps, rng, "prosody.out", dim, dim, Activation::Tanh);
        ProsodyEncoder { convs, gru, out, n_mels, dim }
    }

    /// Builds the padded normalized input image: time padded up to a
    /// multiple of 64 with the floor value (0 after normalization).
    fn prepare(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        if mel.n_frames() == 0 {
            return Err(Error::shape("prosody encoder needs at least one frame".to_string()));
        }
        if mel.n_mels() != self.n_mels {
            return Err(Error::shape(format!(
                "mel has {} bands, encoder built for {}",
                mel.n_mels(),
                self.n_mels
            )));
        }
        let t = mel.n_frames();
        let t_pad = t.div_ceil(TIME_MULTIPLE) * TIME_MULTIPLE;
        let mut x = Tensor::zeros(&[t_pad, self.n_mels]);
        for ti in 0..t {
            let dst = x.row_mut(ti);
            for m in 0..self.n_mels {
                dst[m] = mel.normalize_value(mel.data[[ti, m]]);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, ps: &ParamSet, mel: &MelSpectrogram) -> Result<(Tensor, ProsodyCache)> {
        let padded = self.prepare(mel)?;
        let mut h = padded.rows();
        let mut w = self.n_mels;
        let mut x = padded;
        let mut conv_caches = Vec::new();
        for conv in &self.convs {
            let (y, cache) = conv.forward(ps, &x, h, w);
            let (oh, ow) = conv.out_hw(h, w);
            conv_caches.push(cache);
            x = y;
            h = oh;
            w = ow;
        }
        // x is [h, w*cout]; run the GRU over the reduced time axis
        let (states, gru_caches) = self.gru.run_sequence(ps, &x);
        let final_state = Tensor::from_vec(&[1, self.dim], states.row(states.rows() - 1).to_vec())?;
        let (emb, out_cache) = self.out.forward(ps, &final_state);
        Ok((emb, ProsodyCache { conv_caches, gru_caches, gru_input: x, out_cache }))
    }

    /// Backward to parameter grads (inputs are data, not learned).
    pub fn backward(&self, ps: &ParamSet, cache: &ProsodyCache, d_emb: &Tensor, grads: &mut ParamSet) {
        let d_final = self.out.backward(ps, &cache.out_cache, d_emb, grads);
        // only the last hidden state feeds the output layer
        let t_red = cache.gru_input.rows();
        let mut d_states = Tensor::zeros(&[t_red, self.dim]);
        d_states.row_mut(t_red - 1).copy_from_slice(d_final.row(0));
        let mut dx = self.gru.backward_sequence(ps, &cache.gru_caches, &d_states, grads);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            dx = conv.backward(ps, &cache.conv_caches[i], &dx, grads);
        }
    }
}

/// Convenience wrapper: deterministic embedding with parameters drawn from
/// `seed` (the encoder is used as a fixed featurizer in this pipeline).
pub struct ProsodyExtractor {
    pub encoder: ProsodyEncoder,
    pub params: ParamSet,
}

impl ProsodyExtractor {
    pub fn new(n_mels: usize, dim: usize, width_divisor: usize, seed: u64) -> ProsodyExtractor {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726f736f6479);
        let encoder = ProsodyEncoder::init(&mut ps, &mut rng, n_mels, dim, width_divisor);
        ProsodyExtractor { encoder, params: ps }
    }

    pub fn encode(&self, mel: &MelSpectrogram, source: &str) -> Result<ProsodyEmbedding> {
        let (emb, _) = self.encoder.forward(&self.params, mel)?;
        Ok(ProsodyEmbedding { vector: emb.data().to_vec(), source_utterance: source.to_string() })
    }
}

/// Index of the embedding minimizing the summed Euclidean distance to all
/// others; ties break toward the smallest index.
pub fn select_medoid(embeddings: &[ProsodyEmbedding]) -> Result<usize> {
    if embeddings.is_empty() {
        return Err(Error::param("medoid of an empty set".to_string()));
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, a) in embeddings.iter().enumerate() {
        let total: f64 = embeddings
            .iter()
            .map(|b| {
                a.vector
                    .iter()
                    .zip(&b.vector)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn mel_with(t: usize, f: impl Fn(usize, usize) -> f64) -> MelSpectrogram {
        MelSpectrogram {
            data: Array2::from_shape_fn((t, 80), |(a, b)| f(a, b)),
            sample_rate: 16000,
            hop: 160,
            frame_len: 800,
            log_floor: 1e-5,
        }
    }

    fn emb(v: Vec<f64>) -> ProsodyEmbedding {
        ProsodyEmbedding { vector: v, source_utterance: String::new() }
    }

    #[test]
    fn fixed_length_for_any_input() {
        let ex = ProsodyExtractor::new(80, 128, 1, 42);
        let short = mel_with(50, |t, m| -6.0 + (t as f64 * 0.1).sin() + (m as f64 * 0.05).cos());
        let long = mel_with(500, |t, m| -4.0 + ((t + m) as f64 * 0.01).sin());
        let e1 = ex.encode(&short, "a").unwrap();
        let e2 = ex.encode(&long, "b").unwrap();
        assert_eq!(e1.vector.len(), 128);
        assert_eq!(e2.vector.len(), 128);
        // tanh output
        assert!(e1.vector.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn single_frame_works() {
        let ex = ProsodyExtractor::new(80, 32, 4, 1);
        let m = mel_with(1, |_, m| -8.0 + m as f64 * 0.01);
        assert_eq!(ex.encode(&m, "x").unwrap().vector.len(), 32);
    }

    #[test]
    fn deterministic_in_eval_mode() {
        let ex = ProsodyExtractor::new(80, 64, 2, 9);
        let m = mel_with(75, |t, _| -5.0 + (t as f64 * 0.3).sin());
        let a = ex.encode(&m, "u").unwrap();
        let b = ex.encode(&m, "u").unwrap();
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn time_reversal_changes_embedding() {
        let ex = ProsodyExtractor::new(80, 64, 2, 3);
        let m = mel_with(64, |t, m| -9.0 + 0.08 * t as f64 + (m as f64 * 0.2).sin());
        let rev = mel_with(64, |t, m| -9.0 + 0.08 * (63 - t) as f64 + (m as f64 * 0.2).sin());
        let a = ex.encode(&m, "f").unwrap();
        let b = ex.encode(&rev, "r").unwrap();
        assert_ne!(a.vector, b.vector);
    }

    #[test]
    fn medoid_single_element() {
        assert_eq!(select_medoid(&[emb(vec![1.0])]).unwrap(), 0);
    }

    #[test]
    fn medoid_of_three_points_on_a_line() {
        // brute force over {0, 1, 10}: sums are 11, 10, 19 -> index 1
        let e = vec![emb(vec![0.0]), emb(vec![1.0]), emb(vec![10.0])];
        assert_eq!(select_medoid(&e).unwrap(), 1);
    }

    #[test]
    fn medoid_empty_rejected() {
        assert!(select_medoid(&[]).is_err());
    }

    #[test]
    fn medoid_matches_exhaustive_search_and_permutation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let embs: Vec<ProsodyEmbedding> = (0..64)
            .map(|_| emb((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        // independent exhaustive oracle
        let oracle = {
            let mut best = (usize::MAX, f64::INFINITY);
            for i in 0..embs.len() {
                let mut s = 0.0;
                for j in 0..embs.len() {
                    let d: f64 = embs[i]
                        .vector
                        .iter()
                        .zip(&embs[j].vector)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    s += d.sqrt();
                }
                if s < best.1 {
                    best = (i, s);
                }
            }
            best.0
        };
        let got = select_medoid(&embs).unwrap();
        assert_eq!(got, oracle);

        // permutation equivariance: swap 0 and the medoid
        let mut swapped = embs.clone();
        swapped.swap(0, got);
        assert_eq!(select_medoid(&swapped).unwrap(), 0);
    }
}

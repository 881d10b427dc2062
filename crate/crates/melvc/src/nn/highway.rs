//! Highway layer: y = t.h + (1-t).x with a relu transform and a sigmoid
//! carry gate whose bias starts at -1.

use rand_chacha::ChaCha8Rng;

use super::dense::{Dense, DenseCache};
use super::ops::Activation;
use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Highway {
    h: Dense,
    t: Dense,
}

pub struct HighwayCache {
    x: Tensor,
    h_cache: DenseCache,
    t_cache: DenseCache,
    h_out: Tensor,
    t_out: Tensor,
}

impl Highway {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, dim: usize) -> Highway {
        let h = Dense::init(ps, rng, &format!("{name}.h"), dim, dim, Activation::Relu);
        let t = Dense::init_with_bias(ps, rng, &format!("{name}.t"), dim, dim, Activation::Sigmoid, -1.0);
        Highway { h, t }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, HighwayCache) {
        let (h_out, h_cache) = self.h.forward(ps, x);
        let (t_out, t_cache) = self.t.forward(ps, x);
        let mut y = Tensor::zeros(x.shape());
        for i in 0..y.numel() {
            y.data_mut()[i] =
                t_out.data()[i] * h_out.data()[i] + (1.0 - t_out.data()[i]) * x.data()[i];
        }
        (y, HighwayCache { x: x.clone(), h_cache, t_cache, h_out, t_out })
    }

    pub fn backward(&self, ps: &ParamSet, cache: &HighwayCache, dy: &Tensor, grads: &mut ParamSet) -> Tensor {
        let n = dy.numel();
        let mut dh = Tensor::zeros(dy.shape());
        let mut dt = Tensor::zeros(dy.shape());
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            let g = dy.data()[i];
            dh.data_mut()[i] = g * cache.t_out.data()[i];
            dt.data_mut()[i] = g * (cache.h_out.data()[i] - cache.x.data()[i]);
            dx.data_mut()[i] = g * (1.0 - cache.t_out.data()[i]);
        }
        dx.add_assign(&self.h.backward(ps, &cache.h_cache, &dh, grads));
        dx.add_assign(&self.t.backward(ps, &cache.t_cache, &dt, grads));
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn carry_gate_forced_closed_is_identity() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hw = Highway::init(&mut ps, &mut rng, "hw", 4);
        *ps.get_mut("hw.t.b") = Tensor::filled(&[4], -1e9);
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
        let (y, _) = hw.forward(&ps, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn carry_gate_forced_open_is_dense_relu() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hw = Highway::init(&mut ps, &mut rng, "hw", 4);
        *ps.get_mut("hw.t.b") = Tensor::filled(&[4], 1e9);
        let x = Tensor::from_vec(&[1, 4], vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let (y, _) = hw.forward(&ps, &x);
        let plain = Dense {
            w: "hw.h.w".to_string(),
            b: "hw.h.b".to_string(),
            act: Activation::Relu,
        };
        let (expect, _) = plain.forward(&ps, &x);
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_transform_bias_is_minus_one() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = Highway::init(&mut ps, &mut rng, "hw", 3);
        assert!(ps.get("hw.t.b").data().iter().all(|&v| v == -1.0));
        assert!(ps.get("hw.h.b").data().iter().all(|&v| v == 0.0));
    }
}

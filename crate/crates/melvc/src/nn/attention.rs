//! Additive attention: e_j = v . tanh(Wq q + We h_j), softmax over encoder
//! time, context = weighted sum of encoder states.

use rand_chacha::ChaCha8Rng;

use super::params::{init_matrix, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    pub wq: String, // [dq, da]
    pub we: String, // [de, da]
    pub v: String,  // [da]
    pub da: usize,
}

pub struct AttentionCache {
    query: Tensor, // [1, dq]
    u: Tensor,     // [t, da] tanh terms
    pub weights: Vec<f64>,
}

impl AdditiveAttention {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, dq: usize, de: usize, da: usize) -> Self {
        ps.insert(&format!("{name}.wq"), init_matrix(rng, &[dq, da], dq));
        ps.insert(&format!("{name}.we"), init_matrix(rng, &[de, da], de));
        ps.insert(&format!("{name}.v"), init_matrix(rng, &[da], da));
        AdditiveAttention {
            wq: format!("{name}.wq"),
            we: format!("{name}.we"),
            v: format!("{name}.v"),
            da,
        }
    }

    /// Precomputes We . enc for a whole utterance; reused by every decoder step.
    pub fn keys(&self, ps: &ParamSet, enc: &Tensor) -> Tensor {
        enc.matmul(ps.get(&self.we))
    }

    /// One step: returns (context [1, de], cache with weights).
    pub fn step(&self, ps: &ParamSet, query: &Tensor, keys: &Tensor, enc: &Tensor) -> (Tensor, AttentionCache) {
        let t = keys.rows();
        let q_proj = query.matmul(ps.get(&self.wq)); // [1, da]
        let mut u = Tensor::zeros(&[t, self.da]);
        for j in 0..t {
            let krow = keys.row(j);
            let dst = u.row_mut(j);
            for i in 0..krow.len() {
                dst[i] = (q_proj.data()[i] + krow[i]).tanh();
            }
        }
        let v = ps.get(&self.v);
        let mut energies = Vec::with_capacity(t);
        for j in 0..t {
            let e: f64 = u.row(j).iter().zip(v.data()).map(|(a, b)| a * b).sum();
            energies.push(e);
        }
        let m = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = energies.iter().map(|e| (e - m).exp()).collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        let de = enc.cols();
        let mut ctx = Tensor::zeros(&[1, de]);
        for j in 0..t {
            let row = enc.row(j);
            let w = weights[j];
            for (c, x) in ctx.data_mut().iter_mut().zip(row) {
                *c += w * x;
            }
        }
        ctx.debug_check_finite("attention context");
        (ctx, AttentionCache { query: query.clone(), u, weights })
    }

    /// Backward for one step. Accumulates into d_keys and d_enc (shared
    /// across decoder steps) and parameter grads; returns d_query.
    pub fn backward_step(
        &self,
        ps: &ParamSet,
        cache: &AttentionCache,
        enc: &Tensor,
        d_ctx: &Tensor,
        d_keys: &mut Tensor,
        d_enc: &mut Tensor,
        grads: &mut ParamSet,
    ) -> Tensor {
        let t = cache.u.rows();
        let w = &cache.weights;
        // context = sum_j w_j enc_j
        let mut d_w = vec![0.0; t];
        for j in 0..t {
            let row = enc.row(j);
            d_w[j] = d_ctx.data().iter().zip(row).map(|(a, b)| a * b).sum();
            let dst = d_enc.row_mut(j);
            for (a, b) in dst.iter_mut().zip(d_ctx.data()) {
                *a += w[j] * b;
            }
        }
        // softmax backward
        let dot: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
        let d_e: Vec<f64> = (0..t).map(|j| w[j] * (d_w[j] - dot)).collect();
        // e_j = u_j . v
        let v = ps.get(&self.v);
        let mut d_pre_sum = Tensor::zeros(&[1, self.da]); // sum over j of d(pre_j)
        {
            let dv = grads.get_mut(&self.v);
            for j in 0..t {
                let urow = cache.u.row(j);
                let kdst = d_keys.row_mut(j);
                for i in 0..self.da {
                    let du = d_e[j] * v.data()[i];
                    let dpre = du * (1.0 - urow[i] * urow[i]);
                    kdst[i] += dpre;
                    d_pre_sum.data_mut()[i] += dpre;
                    dv.data_mut()[i] += d_e[j] * urow[i];
                }
            }
        }
        grads.get_mut(&self.wq).add_assign(&cache.query.matmul_ta(&d_pre_sum));
        d_pre_sum.matmul_tb(ps.get(&self.wq))
    }

    /// Backward through the key projection once per utterance.
    pub fn backward_keys(&self, ps: &ParamSet, enc: &Tensor, d_keys: &Tensor, d_enc: &mut Tensor, grads: &mut ParamSet) {
        grads.get_mut(&self.we).add_assign(&enc.matmul_ta(d_keys));
        d_enc.add_assign(&d_keys.matmul_tb(ps.get(&self.we)));
    }
}

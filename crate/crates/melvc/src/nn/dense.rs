//! Fully connected layer with exact backward.

use rand_chacha::ChaCha8Rng;

use super::ops::Activation;
use super::params::{init_matrix, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: String,
    pub b: String,
    pub act: Activation,
}

pub struct DenseCache {
    x: Tensor,
    y: Tensor,
}

impl Dense {
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        din: usize,
        dout: usize,
        act: Activation,
    ) -> Dense {
        ps.insert(&format!("{name}.w"), init_matrix(rng, &[din, dout], din));
        ps.insert(&format!("{name}.b"), Tensor::zeros(&[dout]));
        Dense { w: format!("{name}.w"), b: format!("{name}.b"), act }
    }

    /// Same layer shape but with a caller-chosen bias init (highway gates).
    pub fn init_with_bias(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        din: usize,
        dout: usize,
        act: Activation,
        bias: f64,
    ) -> Dense {
        ps.insert(&format!("{name}.w"), init_matrix(rng, &[din, dout], din));
        ps.insert(&format!("{name}.b"), Tensor::filled(&[dout], bias));
        Dense { w: format!("{name}.w"), b: format!("{name}.b"), act }
    }

    /// y = act(x W + b), x is [n, din].
    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, DenseCache) {
        let mut y = x.matmul(ps.get(&self.w));
        y.add_row_vector(ps.get(&self.b));
        let act = self.act;
        let y = y.map(|v| act.apply(v));
        y.debug_check_finite("dense forward");
        (y.clone(), DenseCache { x: x.clone(), y })
    }

    /// Returns dx; accumulates dW and db into `grads`.
    pub fn backward(&self, ps: &ParamSet, cache: &DenseCache, dy: &Tensor, grads: &mut ParamSet) -> Tensor {
        assert_eq!(dy.shape(), cache.y.shape(), "dense backward shape");
        let act = self.act;
        let mut dz = dy.clone();
        for (g, &y) in dz.data_mut().iter_mut().zip(cache.y.data()) {
            *g *= act.grad_from_output(y);
        }
        grads.get_mut(&self.w).add_assign(&cache.x.matmul_ta(&dz));
        {
            let db = grads.get_mut(&self.b);
            let dout = db.numel();
            for r in 0..dz.rows() {
                let row = dz.row(r);
                for c in 0..dout {
                    db.data_mut()[c] += row[c];
                }
            }
        }
        dz.matmul_tb(ps.get(&self.w))
    }
}

//! Code embedding table with accumulate-on-backward.

use rand_chacha::ChaCha8Rng;

use super::params::{init_matrix, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, vocab: usize, dim: usize) -> Embedding {
        ps.insert(&format!("{name}.table"), init_matrix(rng, &[vocab, dim], dim));
        Embedding { table: format!("{name}.table"), vocab, dim }
    }

    pub fn lookup(&self, ps: &ParamSet, codes: &[usize]) -> Tensor {
        let table = ps.get(&self.table);
        let mut out = Tensor::zeros(&[codes.len(), self.dim]);
        for (r, &c) in codes.iter().enumerate() {
            assert!(c < self.vocab, "code {c} out of range");
            out.row_mut(r).copy_from_slice(table.row(c));
        }
        out
    }

    pub fn backward(&self, codes: &[usize], dy: &Tensor, grads: &mut ParamSet) {
        let g = grads.get_mut(&self.table);
        for (r, &c) in codes.iter().enumerate() {
            let src = dy.row(r);
            let dst = g.row_mut(c);
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lookup_copies_rows_and_backward_accumulates() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = Embedding::init(&mut ps, &mut rng, "e", 4, 2);
        let y = emb.lookup(&ps, &[3, 3, 1]);
        assert_eq!(y.row(0), ps.get("e.table").row(3));
        assert_eq!(y.row(2), ps.get("e.table").row(1));
        let mut grads = ps.zeros_like();
        let dy = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 5.0]).unwrap();
        emb.backward(&[3, 3, 1], &dy, &mut grads);
        assert_eq!(grads.get("e.table").row(3), &[2.0, 0.0]);
        assert_eq!(grads.get("e.table").row(1), &[0.0, 5.0]);
        assert_eq!(grads.get("e.table").row(0), &[0.0, 0.0]);
    }
}

//! GRU cell: z and r gates, candidate state, convex-combination update.

use rand_chacha::ChaCha8Rng;

use super::params::{init_matrix, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GruCell {
    names: [String; 9], // wz uz bz wr ur br wh uh bh
    pub din: usize,
    pub dh: usize,
}

pub struct GruStepCache {
    x: Tensor,
    h_prev: Tensor,
    z: Tensor,
    r: Tensor,
    cand: Tensor,
}

fn sig(x: f64) -> f64 {
    super::ops::sigmoid(x)
}

impl GruCell {
    pub fn init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, din: usize, dh: usize) -> GruCell {
        let names = [
            format!("{name}.wz"),
            format!("{name}.uz"),
            format!("{name}.bz"),
            format!("{name}.wr"),
            format!("{name}.ur"),
            format!("{name}.br"),
            format!("{name}.wh"),
            format!("{name}.uh"),
            format!("{name}.bh"),
        ];
        for (i, n) in names.iter().enumerate() {
            match i % 3 {
                0 => ps.insert(n, init_matrix(rng, &[din, dh], din)),
                1 => ps.insert(n, init_matrix(rng, &[dh, dh], dh)),
                _ => ps.insert(n, Tensor::zeros(&[dh])),
            }
        }
        GruCell { names, din, dh }
    }

    fn p<'a>(&self, ps: &'a ParamSet, i: usize) -> &'a Tensor {
        ps.get(&self.names[i])
    }

    /// One step: z = sig(xWz + hUz + bz), r = sig(xWr + hUr + br),
    /// c = tanh(xWh + (r.h)Uh + bh), h = (1-z).h_prev + z.c.
    pub fn step(&self, ps: &ParamSet, x: &Tensor, h_prev: &Tensor) -> (Tensor, GruStepCache) {
        assert_eq!(x.cols(), self.din, "gru input width");
        assert_eq!(h_prev.cols(), self.dh, "gru state width");
        let mut z = x.matmul(self.p(ps, 0));
        z.add_assign(&h_prev.matmul(self.p(ps, 1)));
        z.add_row_vector(self.p(ps, 2));
        let z = z.map(sig);

        let mut r = x.matmul(self.p(ps, 3));
        r.add_assign(&h_prev.matmul(self.p(ps, 4)));
        r.add_row_vector(self.p(ps, 5));
        let r = r.map(sig);

        let rh = {
            let mut t = h_prev.clone();
            for (a, b) in t.data_mut().iter_mut().zip(r.data()) {
                *a *= b;
            }
            t
        };
        let mut cand = x.matmul(self.p(ps, 6));
        cand.add_assign(&rh.matmul(self.p(ps, 7)));
        cand.add_row_vector(self.p(ps, 8));
        let cand = cand.map(f64::tanh);

        let mut h = Tensor::zeros(h_prev.shape());
        for i in 0..h.numel() {
            h.data_mut()[i] =
                (1.0 - z.data()[i]) * h_prev.data()[i] + z.data()[i] * cand.data()[i];
        }
        h.debug_check_finite("gru step");
        let cache = GruStepCache { x: x.clone(), h_prev: h_prev.clone(), z, r, cand };
        (h, cache)
    }

    /// Backward through one step. Returns (dx, dh_prev).
    pub fn backward_step(
        &self,
        ps: &ParamSet,
        cache: &GruStepCache,
        dh: &Tensor,
        grads: &mut ParamSet,
    ) -> (Tensor, Tensor) {
        let GruStepCache { x, h_prev, z, r, cand } = cache;
        let n = dh.numel();

        let mut dcand = Tensor::zeros(cand.shape());
        let mut dz = Tensor::zeros(z.shape());
        let mut dh_prev = Tensor::zeros(h_prev.shape());
        for i in 0..n {
            let g = dh.data()[i];
            dcand.data_mut()[i] = g * z.data()[i] * (1.0 - cand.data()[i] * cand.data()[i]);
            let s = z.data()[i];
            dz.data_mut()[i] = g * (cand.data()[i] - h_prev.data()[i]) * s * (1.0 - s);
            dh_prev.data_mut()[i] = g * (1.0 - s);
        }

        // candidate path
        grads.get_mut(&self.names[6]).add_assign(&x.matmul_ta(&dcand));
        let rh = {
            let mut t = h_prev.clone();
            for (a, b) in t.data_mut().iter_mut().zip(r.data()) {
                *a *= b;
            }
            t
        };
        grads.get_mut(&self.names[7]).add_assign(&rh.matmul_ta(&dcand));
        add_bias(grads.get_mut(&self.names[8]), &dcand);
        let mut dx = dcand.matmul_tb(self.p(ps, 6));
        let drh = dcand.matmul_tb(self.p(ps, 7));
        let mut dr = Tensor::zeros(r.shape());
        for i in 0..n {
            dh_prev.data_mut()[i] += drh.data()[i] * r.data()[i];
            let s = r.data()[i];
            dr.data_mut()[i] = drh.data()[i] * h_prev.data()[i] * s * (1.0 - s);
        }

        // gates
        grads.get_mut(&self.names[0]).add_assign(&x.matmul_ta(&dz));
        grads.get_mut(&self.names[1]).add_assign(&h_prev.matmul_ta(&dz));
        add_bias(grads.get_mut(&self.names[2]), &dz);
        dx.add_assign(&dz.matmul_tb(self.p(ps, 0)));
        dh_prev.add_assign(&dz.matmul_tb(self.p(ps, 1)));

        grads.get_mut(&self.names[3]).add_assign(&x.matmul_ta(&dr));
        grads.get_mut(&self.names[4]).add_assign(&h_prev.matmul_ta(&dr));
        add_bias(grads.get_mut(&self.names[5]), &dr);
        dx.add_assign(&dr.matmul_tb(self.p(ps, 3)));
        dh_prev.add_assign(&dr.matmul_tb(self.p(ps, 4)));

        (dx, dh_prev)
    }

    /// Unrolls over a [t, din] sequence from a zero state; returns all hidden
    /// states [t, dh] and the per-step caches for BPTT.
    pub fn run_sequence(&self, ps: &ParamSet, xs: &Tensor) -> (Tensor, Vec<GruStepCache>) {
        let t = xs.rows();
        let mut h = Tensor::zeros(&[1, self.dh]);
        let mut out = Tensor::zeros(&[t, self.dh]);
        let mut caches = Vec::with_capacity(t);
        for ti in 0..t {
            let x = Tensor::from_vec(&[1, self.din], xs.row(ti).to_vec()).unwrap();
            let (hn, cache) = self.step(ps, &x, &h);
            out.row_mut(ti).copy_from_slice(hn.row(0));
            caches.push(cache);
            h = hn;
        }
        (out, caches)
    }

    /// BPTT over `run_sequence`. `dout` is [t, dh]; returns dxs [t, din].
    pub fn backward_sequence(
        &self,
        ps: &ParamSet,
        caches: &[GruStepCache],
        dout: &Tensor,
        grads: &mut ParamSet,
    ) -> Tensor {
        let t = caches.len();
        let mut dxs = Tensor::zeros(&[t, self.din]);
        let mut dh = Tensor::zeros(&[1, self.dh]);
        for ti in (0..t).rev() {
            for (i, v) in dout.row(ti).iter().enumerate() {
                dh.data_mut()[i] += v;
            }
            let (dx, dh_prev) = self.backward_step(ps, &caches[ti], &dh, grads);
            dxs.row_mut(ti).copy_from_slice(dx.row(0));
            dh = dh_prev;
        }
        dxs
    }
}

fn add_bias(db: &mut Tensor, d: &Tensor) {
    let cols = d.cols();
    for r in 0..d.rows() {
        let row = d.row(r);
        for c in 0..cols {
            db.data_mut()[c] += row[c];
        }
    }
}

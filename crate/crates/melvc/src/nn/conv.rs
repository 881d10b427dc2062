//! 1-D and 2-D convolutions (cross-correlation) plus the width-2 max pool,
//! all via im2col so the heavy lifting is one matrix product.

use rand_chacha::ChaCha8Rng;

use super::ops::Activation;
use super::params::{init_matrix, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output time length equals input (stride 1).
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: String,
    pub bias: String,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub padding: Padding,
    pub act: Activation,
}

pub struct Conv1dCache {
    cols: Tensor,   // [t_out, k*cin]
    y: Tensor,      // post-activation
    t_in: usize,
}

impl Conv1d {
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        padding: Padding,
        act: Activation,
    ) -> Conv1d {
        ps.insert(&format!("{name}.kernel"), init_matrix(rng, &[k * cin, cout], k * cin));
        ps.insert(&format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv1d {
            kernel: format!("{name}.kernel"),
            bias: format!("{name}.bias"),
            k,
            cin,
            cout,
            padding,
            act,
        }
    }

    fn pad_before(&self) -> usize {
        match self.padding {
            Padding::Same => (self.k - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn t_out(&self, t_in: usize) -> usize {
        match self.padding {
            Padding::Same => t_in,
            Padding::Valid => t_in + 1 - self.k,
        }
    }

    /// x is [t, cin]; output [t_out, cout].
    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, Conv1dCache) {
        assert_eq!(x.cols(), self.cin, "conv1d input channels");
        let t_in = x.rows();
        let t_out = self.t_out(t_in);
        let pad = self.pad_before() as isize;
        let mut cols = Tensor::zeros(&[t_out, self.k * self.cin]);
        for t in 0..t_out {
            let dst = cols.row_mut(t);
            for dk in 0..self.k {
                let src_t = t as isize + dk as isize - pad;
                if src_t >= 0 && (src_t as usize) < t_in {
                    let src = x.row(src_t as usize);
                    dst[dk * self.cin..(dk + 1) * self.cin].copy_from_slice(src);
                }
            }
        }
        let mut y = cols.matmul(ps.get(&self.kernel));
        y.add_row_vector(ps.get(&self.bias));
        let act = self.act;
        let y = y.map(|v| act.apply(v));
        y.debug_check_finite("conv1d forward");
        (y.clone(), Conv1dCache { cols, y, t_in })
    }

    pub fn backward(&self, ps: &ParamSet, cache: &Conv1dCache, dy: &Tensor, grads: &mut ParamSet) -> Tensor {
        let act = self.act;
        let mut dz = dy.clone();
        for (g, &y) in dz.data_mut().iter_mut().zip(cache.y.data()) {
            *g *= act.grad_from_output(y);
        }
        grads.get_mut(&self.kernel).add_assign(&cache.cols.matmul_ta(&dz));
        {
            let db = grads.get_mut(&self.bias);
            for r in 0..dz.rows() {
                for (c, v) in dz.row(r).iter().enumerate() {
                    db.data_mut()[c] += v;
                }
            }
        }
        let dcols = dz.matmul_tb(ps.get(&self.kernel));
        // scatter-add columns back onto the input timeline
        let pad = self.pad_before() as isize;
        let mut dx = Tensor::zeros(&[cache.t_in, self.cin]);
        for t in 0..dcols.rows() {
            let src = dcols.row(t);
            for dk in 0..self.k {
                let src_t = t as isize + dk as isize - pad;
                if src_t >= 0 && (src_t as usize) < cache.t_in {
                    let dst = dx.row_mut(src_t as usize);
                    for c in 0..self.cin {
                        dst[c] += src[dk * self.cin + c];
                    }
                }
            }
        }
        dx
    }
}

/// Max pool over time, width 2, stride 1, same length (right edge passes
/// through).
pub struct MaxPoolW2Cache {
    take_next: Vec<bool>,
    shape: Vec<usize>,
}

pub fn maxpool_w2_same(x: &Tensor) -> (Tensor, MaxPoolW2Cache) {
    let (t, c) = (x.rows(), x.cols());
    let mut y = Tensor::zeros(&[t, c]);
    let mut take_next = vec![false; t * c];
    for ti in 0..t {
        for ci in 0..c {
            let a = x.at2(ti, ci);
            if ti + 1 < t {
                let b = x.at2(ti + 1, ci);
                if b > a {
                    y.set2(ti, ci, b);
                    take_next[ti * c + ci] = true;
                } else {
                    y.set2(ti, ci, a);
                }
            } else {
                y.set2(ti, ci, a);
            }
        }
    }
    (y, MaxPoolW2Cache { take_next, shape: vec![t, c] })
}

pub fn maxpool_w2_same_backward(cache: &MaxPoolW2Cache, dy: &Tensor) -> Tensor {
    let (t, c) = (cache.shape[0], cache.shape[1]);
    let mut dx = Tensor::zeros(&[t, c]);
    for ti in 0..t {
        for ci in 0..c {
            let g = dy.at2(ti, ci);
            if cache.take_next[ti * c + ci] {
                let v = dx.at2(ti + 1, ci) + g;
                dx.set2(ti + 1, ci, v);
            } else {
                let v = dx.at2(ti, ci) + g;
                dx.set2(ti, ci, v);
            }
        }
    }
    dx
}

/// 2-D convolution over [h, w, cin] inputs with TensorFlow-style SAME
/// padding and arbitrary stride; used by the prosody reference encoder.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: String, // [kh*kw*cin, cout]
    pub bias: String,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: (usize, usize),
    pub act: Activation,
}

pub struct Conv2dCache {
    cols: Tensor,
    y: Tensor,
    in_shape: (usize, usize),
}

fn same_pad(n: usize, k: usize, s: usize) -> (usize, usize) {
    let out = n.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(n);
    (total / 2, out)
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: (usize, usize),
        act: Activation,
    ) -> Conv2d {
        let fan_in = kh * kw * cin;
        ps.insert(&format!("{name}.kernel"), init_matrix(rng, &[fan_in, cout], fan_in));
        ps.insert(&format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv2d {
            kernel: format!("{name}.kernel"),
            bias: format!("{name}.bias"),
            kh,
            kw,
            cin,
            cout,
            stride,
            act,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride.0), w.div_ceil(self.stride.1))
    }

    /// x is [h, w*cin] flattened row-major as (w, cin); output likewise.
    pub fn forward(&self, ps: &ParamSet, x: &Tensor, h: usize, w: usize) -> (Tensor, Conv2dCache) {
        assert_eq!(x.rows(), h);
        assert_eq!(x.cols(), w * self.cin);
        let (pad_h, out_h) = same_pad(h, self.kh, self.stride.0);
        let (pad_w, out_w) = same_pad(w, self.kw, self.stride.1);
        let patch = self.kh * self.kw * self.cin;
        let mut cols = Tensor::zeros(&[out_h * out_w, patch]);
        for oh in 0..out_h {
            for ow in 0..out_w {
                let dst = cols.row_mut(oh * out_w + ow);
                for dh in 0..self.kh {
                    let sh = (oh * self.stride.0 + dh) as isize - pad_h as isize;
                    if sh < 0 || sh as usize >= h {
                        continue;
                    }
                    let src = x.row(sh as usize);
                    for dw in 0..self.kw {
                        let sw = (ow * self.stride.1 + dw) as isize - pad_w as isize;
                        if sw < 0 || sw as usize >= w {
                            continue;
                        }
                        let so = sw as usize * self.cin;
                        let doff = (dh * self.kw + dw) * self.cin;
                        dst[doff..doff + self.cin].copy_from_slice(&src[so..so + self.cin]);
                    }
                }
            }
        }
        let mut y = cols.matmul(ps.get(&self.kernel));
        y.add_row_vector(ps.get(&self.bias));
        let act = self.act;
        let y = y.map(|v| act.apply(v));
        y.debug_check_finite("conv2d forward");
        // reshape to [out_h, out_w*cout]
        let y2 = Tensor::from_vec(&[out_h, out_w * self.cout], y.data().to_vec()).unwrap();
        (y2, Conv2dCache { cols, y, in_shape: (h, w) })
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &Conv2dCache,
        dy: &Tensor,
        grads: &mut ParamSet,
    ) -> Tensor {
        let (h, w) = cache.in_shape;
        let (pad_h, out_h) = same_pad(h, self.kh, self.stride.0);
        let (pad_w, out_w) = same_pad(w, self.kw, self.stride.1);
        let mut dz = Tensor::from_vec(&[out_h * out_w, self.cout], dy.data().to_vec()).unwrap();
        let act = self.act;
        for (g, &y) in dz.data_mut().iter_mut().zip(cache.y.data()) {
            *g *= act.grad_from_output(y);
        }
        grads.get_mut(&self.kernel).add_assign(&cache.cols.matmul_ta(&dz));
        {
            let db = grads.get_mut(&self.bias);
            for r in 0..dz.rows() {
                for (c, v) in dz.row(r).iter().enumerate() {
                    db.data_mut()[c] += v;
                }
            }
        }
        let dcols = dz.matmul_tb(ps.get(&self.kernel));
        let mut dx = Tensor::zeros(&[h, w * self.cin]);
        for oh in 0..out_h {
            for ow in 0..out_w {
                let src = dcols.row(oh * out_w + ow);
                for dh in 0..self.kh {
                    let sh = (oh * self.stride.0 + dh) as isize - pad_h as isize;
                    if sh < 0 || sh as usize >= h {
                        continue;
                    }
                    let dst = dx.row_mut(sh as usize);
                    for dw in 0..self.kw {
                        let sw = (ow * self.stride.1 + dw) as isize - pad_w as isize;
                        if sw < 0 || sw as usize >= w {
                            continue;
                        }
                        let so = sw as usize * self.cin;
                        let doff = (dh * self.kw + dw) * self.cin;
                        for c in 0..self.cin {
                            dst[so + c] += src[doff + c];
                        }
                    }
                }
            }
        }
        dx
    }
}

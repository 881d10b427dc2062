//! Dense row-major f64 tensor with the handful of linear-algebra kernels the
//! model code needs. Matrix products go through ndarray's BLAS-style kernel.

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} does not hold {} values",
                shape,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a matrix, got {:?}", self.shape);
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        assert_eq!(self.shape.len(), 2, "view2 needs a matrix, got {:?}", self.shape);
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).unwrap()
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data).unwrap()
    }

    /// self [m,k] . other [k,n]
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols(), other.rows(), "matmul {:?} x {:?}", self.shape, other.shape);
        let out = self.view2().dot(&other.view2());
        let (m, n) = (self.rows(), other.cols());
        Tensor { shape: vec![m, n], data: out.into_raw_vec_and_offset().0 }
    }

    /// self [m,k] . other^T, other [n,k]
    pub fn matmul_tb(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols(), other.cols(), "matmul_tb {:?} x {:?}", self.shape, other.shape);
        let out = self.view2().dot(&other.view2().t());
        let (m, n) = (self.rows(), other.rows());
        Tensor { shape: vec![m, n], data: out.into_raw_vec_and_offset().0 }
    }

    /// self^T . other, self [k,m], other [k,n]
    pub fn matmul_ta(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows(), other.rows(), "matmul_ta {:?} x {:?}", self.shape, other.shape);
        let out = self.view2().t().dot(&other.view2());
        let (m, n) = (self.cols(), other.cols());
        Tensor { shape: vec![m, n], data: out.into_raw_vec_and_offset().0 }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Broadcast-adds a [n]-vector to every row of a [m,n] matrix.
    pub fn add_row_vector(&mut self, v: &Tensor) {
        let n = self.cols();
        assert_eq!(v.numel(), n, "row vector length mismatch");
        for chunk in self.data.chunks_mut(n) {
            for (a, b) in chunk.iter_mut().zip(v.data()) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Debug-mode guard: every op output must stay finite.
    #[inline]
    pub fn debug_check_finite(&self, what: &str) {
        #[cfg(debug_assertions)]
        {
            assert!(self.is_finite(), "non-finite values in {what}");
        }
        #[cfg(not(debug_assertions))]
        {
            let _ = what;
        }
    }
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    assert!(parts.iter().all(|p| p.rows() == rows));
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        let dst = out.row_mut(r);
        let mut off = 0;
        for p in parts {
            let src = p.row(r);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    out
}

/// Splits the gradient of a column concatenation back into parts.
pub fn split_cols(grad: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    assert_eq!(widths.iter().sum::<usize>(), grad.cols());
    let rows = grad.rows();
    let mut out: Vec<Tensor> = widths.iter().map(|&w| Tensor::zeros(&[rows, w])).collect();
    for r in 0..rows {
        let src = grad.row(r);
        let mut off = 0;
        for (t, &w) in out.iter_mut().zip(widths) {
            t.row_mut(r).copy_from_slice(&src[off..off + w]);
            off += w;
        }
    }
    out
}

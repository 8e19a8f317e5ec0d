//! Dense row-major tensors and the small set of numeric kernels the model
//! needs, plus a reverse-mode tape ([`Tape`]) built on the same kernels.
//!
//! The value-level functions in this module ([`matmul`], [`conv1d`],
//! [`softmax`], [`layer_norm`]) and the tape operations share one kernel
//! implementation, so a graph evaluated on a tape produces bit-identical
//! values to the same composition of value-level calls.

mod kernels;
pub mod mac_counter;
mod tape;

pub use tape::{Backward, Gradients, Tape, Var};

use crate::error::{shape_err, Error, Result};

/// Dense row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every dimension is positive and that
    /// `data` holds exactly `product(shape)` values. An empty shape is a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return shape_err(format!("zero-sized dimension in shape {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for kernel outputs whose sizes are correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => shape_err(format!("item() on tensor of shape {:?}", self.shape)),
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let cols = *self.shape.last().unwrap_or(&1);
        self.data.chunks(cols)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let [m, n] = self.shape[..] else {
            return shape_err(format!("transpose needs a matrix, got {:?}", self.shape));
        };
        Ok(Tensor::from_parts(vec![n, m], kernels::transpose(&self.data, 1, m, n)))
    }
}

pub(crate) fn ensure_finite(t: Tensor, what: &str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric(format!("{what} produced a non-finite value")))
    }
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = kernels::matmul_dims(a.shape(), b.shape())?;
    let out = kernels::gemm(a.data(), b.data(), m, k, n);
    ensure_finite(Tensor::from_parts(vec![m, n], out), "matmul")
}

/// 1-D cross-correlation of `x[C_in×L]` with `w[C_out×C_in×K]`.
pub fn conv1d(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let [c_in, len] = x.shape()[..] else {
        return shape_err(format!("conv1d input must be C×L, got {:?}", x.shape()));
    };
    let geom = kernels::ConvGeometry::new(1, c_in, len, w.shape(), stride, padding)?;
    let out = kernels::conv1d_forward(x.data(), w.data(), &geom);
    ensure_finite(
        Tensor::from_parts(vec![geom.c_out, geom.l_out], out),
        "conv1d",
    )
}

/// Softmax along `axis`, computed with per-slice max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return shape_err(format!("softmax axis {axis} out of range for {:?}", x.shape()));
    }
    let out = kernels::softmax(x.data(), x.shape(), axis);
    ensure_finite(Tensor::from_parts(x.shape().to_vec(), out), "softmax")
}

/// Layer normalization over the last axis followed by the affine `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = kernels::layer_norm_dims(x.shape(), gamma.shape(), beta.shape(), eps)?;
    let (out, _, _) = kernels::layer_norm(x.data(), gamma.data(), beta.data(), d, eps);
    ensure_finite(Tensor::from_parts(x.shape().to_vec(), out), "layer_norm")
}

//! Dense rank-4 tensors in `[batch, channels, rows, cols]` layout and the
//! forward kernels the surrogate network is assembled from.
//!
//! Storage is row-major with the column index fastest. Every kernel here is a
//! pure function of its arguments; the batchnorm running statistics are the
//! only mutable state and are passed explicitly.

pub(crate) mod conv;
mod norm;
mod ops;

pub use conv::{
    conv2d, conv2d_input_grad, conv2d_transpose, conv2d_weight_grad, ConvSpec,
};
pub use norm::{batchnorm, batchnorm_eval, batchnorm_train, BatchNormOutput, Mode, RunningStats};
pub use ops::{add, concat_channels, gelu, gelu_grad, gelu_scalar, slice_channels};

use crate::error::{shape_err, Error, Result};

/// BatchNorm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// BatchNorm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0 {
            return shape_err(format!("all dims must be >= 1, got {dims}"));
        }
        if data.len() != dims.len() {
            return shape_err(format!(
                "data length {} does not match dims {dims} ({} elements)",
                data.len(),
                dims.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        assert!(dims.len() > 0, "tensor dims must be >= 1, got {dims}");
        Self { dims, data: vec![value; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// A `[len, 1, 1, 1]` tensor holding a parameter vector (bias, gamma, beta).
    pub fn vector(values: Vec<f64>) -> Self {
        let dims = Dims::new(values.len(), 1, 1, 1);
        assert!(!values.is_empty(), "parameter vector must be non-empty");
        Self { dims, data: values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `H×W` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Sample `n` as its own `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> Tensor4 {
        let per = self.dims.c * self.dims.plane();
        let data = self.data[n * per..(n + 1) * per].to_vec();
        Tensor4 { dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w), data }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?
            .dims;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.dims.c, t.dims.h, t.dims.w) != (first.c, first.h, first.w) {
                return shape_err(format!("stack: {} does not match {}", t.dims, first));
            }
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Tensor4::new(Dims::new(n, first.c, first.h, first.w), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scaled(&self, s: f64) -> Tensor4 {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_dims(&self, other: &Tensor4, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return shape_err(format!("{what}: {} vs {}", self.dims, other.dims));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor4) -> Result<()> {
        self.same_dims(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }
}

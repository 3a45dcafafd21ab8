use super::{Dims, Tensor4};
use crate::error::{shape_err, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh-form GELU of a scalar.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

/// Derivative of [`gelu_scalar`].
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub fn gelu(input: &Tensor4) -> Tensor4 {
    input.map(gelu_scalar)
}

/// Channel concatenation; `a` occupies the leading channels.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return shape_err(format!("concat: {da} and {db} disagree on N/H/W"));
    }
    let per_a = da.c * da.plane();
    let per_b = db.c * db.plane();
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..da.n {
        data.extend_from_slice(&a.data()[n * per_a..(n + 1) * per_a]);
        data.extend_from_slice(&b.data()[n * per_b..(n + 1) * per_b]);
    }
    Tensor4::new(Dims::new(da.n, da.c + db.c, da.h, da.w), data)
}

/// Channels `[start, start + len)` as a new tensor.
pub fn slice_channels(t: &Tensor4, start: usize, len: usize) -> Result<Tensor4> {
    let d = t.dims();
    if len == 0 || start + len > d.c {
        return shape_err(format!("channel slice {start}..{} out of {d}", start + len));
    }
    let p = d.plane();
    let mut data = Vec::with_capacity(d.n * len * p);
    for n in 0..d.n {
        let base = (n * d.c + start) * p;
        data.extend_from_slice(&t.data()[base..base + len * p]);
    }
    Tensor4::new(Dims::new(d.n, len, d.h, d.w), data)
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    a.same_dims(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor4::new(a.dims(), data)
}

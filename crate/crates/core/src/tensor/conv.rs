use super::{Dims, Tensor4};
use crate::error::{shape_err, Result};

/// Geometry of a 2-D convolution.
///
/// Forward weights are `[out, in, kh, kw]`. Transposed convolutions store
/// `[in, out, kh, kw]` and compute the exact adjoint of the stride-2 forward
/// convolution with the same weight, so their output is exactly twice the
/// input extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    /// 3×3, stride 1, pad 1: spatial extent preserved.
    pub const fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: (3, 3), stride: 1, padding: 1, transposed: false }
    }

    /// 1×1 pointwise projection.
    pub const fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: (1, 1), stride: 1, padding: 0, transposed: false }
    }

    /// 3×3, stride 2, pad 1: halves even extents.
    pub const fn down(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: (3, 3), stride: 2, padding: 1, transposed: false }
    }

    /// Adjoint of [`ConvSpec::down`]: doubles the extent.
    pub const fn up(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: (3, 3), stride: 2, padding: 1, transposed: true }
    }

    pub fn weight_dims(&self) -> Dims {
        let (kh, kw) = self.kernel;
        if self.transposed {
            Dims::new(self.in_channels, self.out_channels, kh, kw)
        } else {
            Dims::new(self.out_channels, self.in_channels, kh, kw)
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_dims().len()
    }

    /// Number of input connections feeding one output element.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel, (1, 1) | (3, 3)) {
            return shape_err(format!("unsupported kernel {:?}", self.kernel));
        }
        if !matches!(self.stride, 1 | 2) {
            return shape_err(format!("unsupported stride {}", self.stride));
        }
        if self.padding != self.kernel.0 / 2 {
            return shape_err(format!(
                "padding {} does not match kernel {:?}",
                self.padding, self.kernel
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return shape_err("channel counts must be >= 1");
        }
        Ok(())
    }

    /// Output extent of the forward convolution along one axis.
    fn forward_extent(&self, len: usize, k: usize) -> Result<usize> {
        if self.stride == 2 && len % 2 != 0 {
            return shape_err(format!("stride-2 convolution needs an even extent, got {len}"));
        }
        let padded = len + 2 * self.padding;
        if padded < k {
            return shape_err(format!("extent {len} too small for kernel {k}"));
        }
        Ok((padded - k) / self.stride + 1)
    }
}

/// Range of output indices `o` for which `o*stride + k - pad` lands in `[0, in_len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = in_len + pad;
    if top <= k {
        return (0, 0);
    }
    let hi = ((top - 1 - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_weight(weight: &Tensor4, spec: &ConvSpec) -> Result<()> {
    if weight.dims() != spec.weight_dims() {
        return shape_err(format!(
            "weight dims {} do not match {:?} (expected {})",
            weight.dims(),
            spec,
            spec.weight_dims()
        ));
    }
    Ok(())
}

fn check_bias(bias: &[f64], channels: usize) -> Result<()> {
    if bias.len() != channels {
        return shape_err(format!("bias length {} != {channels}", bias.len()));
    }
    Ok(())
}

/// Stride-1 kernels work on zero-padded planes of width `wp = w + 2p` so
/// that each kernel tap becomes one long contiguous axpy/dot over the
/// flattened plane. Output rows are computed at width `wp`; the trailing
/// `2p` columns of each row are discarded.
struct Padded {
    h: usize,
    w: usize,
    hp: usize,
    wp: usize,
    pad: usize,
}

impl Padded {
    fn new(h: usize, w: usize, pad: usize) -> Self {
        Self { h, w, hp: h + 2 * pad, wp: w + 2 * pad, pad }
    }

    /// Length of the flattened wide output that stays inside the padded input.
    fn span(&self) -> usize {
        (self.h - 1) * self.wp + self.w
    }

    fn pad_plane(&self, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        for y in 0..self.h {
            let d = (y + self.pad) * self.wp + self.pad;
            dst[d..d + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
        }
    }

    fn widen(&self, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        for y in 0..self.h {
            dst[y * self.wp..y * self.wp + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
        }
    }
}

/// `dst[j] += Σ_t taps[t] · src[j + offs[t]]` for `j < dst.len()`.
#[inline]
fn fused_taps(dst: &mut [f64], src: &[f64], taps: &[f64], offs: &[usize]) {
    match taps.len() {
        1 => {
            let (w, s) = (taps[0], &src[offs[0]..offs[0] + dst.len()]);
            for (d, v) in dst.iter_mut().zip(s) {
                *d += w * v;
            }
        }
        9 => {
            let len = dst.len();
            let t: [&[f64]; 9] = std::array::from_fn(|k| &src[offs[k]..offs[k] + len]);
            let w: [f64; 9] = std::array::from_fn(|k| taps[k]);
            for j in 0..len {
                dst[j] += w[0] * t[0][j]
                    + w[1] * t[1][j]
                    + w[2] * t[2][j]
                    + w[3] * t[3][j]
                    + w[4] * t[4][j]
                    + w[5] * t[5][j]
                    + w[6] * t[6][j]
                    + w[7] * t[7][j]
                    + w[8] * t[8][j];
            }
        }
        _ => {
            for (t, &w) in taps.iter().enumerate() {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += w * src[j + offs[t]];
                }
            }
        }
    }
}

/// `acc[t] += Σ_j g[j] · src[j + offs[t]]`, accumulated in four fixed lanes
/// so the reduction order is deterministic.
#[inline]
fn fused_dots(acc: &mut [f64], g: &[f64], src: &[f64], offs: &[usize]) {
    const LANES: usize = 4;
    let len = g.len();
    let body = len - len % LANES;
    for (t, &o) in offs.iter().enumerate() {
        let s = &src[o..o + len];
        let mut lane = [0.0; LANES];
        for (gc, sc) in g[..body].chunks_exact(LANES).zip(s[..body].chunks_exact(LANES)) {
            for l in 0..LANES {
                lane[l] += gc[l] * sc[l];
            }
        }
        let mut tail = 0.0;
        for j in body..len {
            tail += g[j] * s[j];
        }
        acc[t] += (lane[0] + lane[1]) + (lane[2] + lane[3]) + tail;
    }
}

#[allow(clippy::too_many_arguments)]
fn correlate_s1(
    x: &[f64],
    xd: Dims,
    w: &[f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    out: &mut [f64],
    od: Dims,
    k: (usize, usize),
    pad: usize,
) {
    let geo = Padded::new(xd.h, xd.w, pad);
    let span = geo.span();
    let plane = geo.hp * geo.wp;
    let offs: Vec<usize> = (0..k.0).flat_map(|ky| (0..k.1).map(move |kx| ky * geo.wp + kx)).collect();
    let mut taps = vec![0.0; offs.len()];
    let mut padded = vec![0.0; xd.c * plane];
    let mut wide = vec![0.0; geo.h * geo.wp];
    for n in 0..od.n {
        for i in 0..xd.c {
            let src = &x[(n * xd.c + i) * xd.h * xd.w..(n * xd.c + i + 1) * xd.h * xd.w];
            geo.pad_plane(src, &mut padded[i * plane..(i + 1) * plane]);
        }
        for o in 0..od.c {
            wide.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..xd.c {
                for ky in 0..k.0 {
                    for kx in 0..k.1 {
                        taps[ky * k.1 + kx] = w[w_index(o, i, ky, kx)];
                    }
                }
                fused_taps(&mut wide[..span], &padded[i * plane..(i + 1) * plane], &taps, &offs);
            }
            let dst = &mut out[(n * od.c + o) * od.h * od.w..(n * od.c + o + 1) * od.h * od.w];
            for y in 0..geo.h {
                for xx in 0..geo.w {
                    dst[y * geo.w + xx] += wide[y * geo.wp + xx];
                }
            }
        }
    }
}

/// Stride-1 input gradient: a correlation of the output gradient with the
/// spatially flipped kernel, input and output channel roles exchanged.
#[allow(clippy::too_many_arguments)]
fn scatter_s1(
    g: &[f64],
    gd: Dims,
    w: &[f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    gx: &mut [f64],
    xd: Dims,
    k: (usize, usize),
    pad: usize,
) {
    let (kh, kw) = k;
    let flipped = move |i: usize, o: usize, a: usize, b: usize| w_index(o, i, kh - 1 - a, kw - 1 - b);
    correlate_s1(g, gd, w, flipped, gx, xd, k, pad);
}

#[allow(clippy::too_many_arguments)]
fn weight_corr_s1(
    x: &[f64],
    xd: Dims,
    g: &[f64],
    gd: Dims,
    gw: &mut [f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    k: (usize, usize),
    pad: usize,
) {
    let geo = Padded::new(xd.h, xd.w, pad);
    let span = geo.span();
    let plane = geo.hp * geo.wp;
    let wplane = geo.h * geo.wp;
    let taps = k.0 * k.1;
    let offs: Vec<usize> = (0..k.0).flat_map(|ky| (0..k.1).map(move |kx| ky * geo.wp + kx)).collect();
    let mut padded = vec![0.0; xd.c * plane];
    let mut wide = vec![0.0; gd.c * wplane];
    let mut acc = vec![0.0; gd.c * xd.c * taps];
    let gp = gd.h * gd.w;
    for n in 0..gd.n {
        for i in 0..xd.c {
            let src = &x[(n * xd.c + i) * xd.h * xd.w..(n * xd.c + i + 1) * xd.h * xd.w];
            geo.pad_plane(src, &mut padded[i * plane..(i + 1) * plane]);
        }
        for o in 0..gd.c {
            let src = &g[(n * gd.c + o) * gp..(n * gd.c + o + 1) * gp];
            geo.widen(src, &mut wide[o * wplane..(o + 1) * wplane]);
        }
        for o in 0..gd.c {
            let gwide = &wide[o * wplane..o * wplane + span];
            for i in 0..xd.c {
                let a = &mut acc[(o * xd.c + i) * taps..(o * xd.c + i + 1) * taps];
                fused_dots(a, gwide, &padded[i * plane..(i + 1) * plane], &offs);
            }
        }
    }
    for o in 0..gd.c {
        for i in 0..xd.c {
            for ky in 0..k.0 {
                for kx in 0..k.1 {
                    gw[w_index(o, i, ky, kx)] += acc[((o * xd.c + i) * k.0 + ky) * k.1 + kx];
                }
            }
        }
    }
}

/// Correlation core: `out[n,o] += Σ_i w[o,i] ⋆ x[n,i]` with weight laid out
/// `[O, I, kh, kw]` (indexed by `w_index`).
#[allow(clippy::too_many_arguments)]
fn correlate(
    x: &[f64],
    xd: Dims,
    w: &[f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    out: &mut [f64],
    od: Dims,
    k: (usize, usize),
    stride: usize,
    pad: usize,
) {
    if stride == 1 {
        return correlate_s1(x, xd, w, w_index, out, od, k, pad);
    }
    let (kh, kw) = k;
    let (ih, iw) = (xd.h, xd.w);
    let (oh, ow) = (od.h, od.w);
    for n in 0..od.n {
        for o in 0..od.c {
            let obase = (n * od.c + o) * oh * ow;
            for i in 0..xd.c {
                let ibase = (n * xd.c + i) * ih * iw;
                for ky in 0..kh {
                    let (ylo, yhi) = valid_range(ky, pad, stride, ih, oh);
                    for kx in 0..kw {
                        let (xlo, xhi) = valid_range(kx, pad, stride, iw, ow);
                        let wv = w[w_index(o, i, ky, kx)];
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let orow = &mut out[obase + oy * ow..obase + oy * ow + ow];
                            let irow = &x[ibase + iy * iw..ibase + iy * iw + iw];
                            for ox in xlo..xhi {
                                orow[ox] += wv * irow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter core, adjoint of [`correlate`]: `gx[n,i] += Σ_o w[o,i] ⋆ᵀ g[n,o]`.
#[allow(clippy::too_many_arguments)]
fn scatter(
    g: &[f64],
    gd: Dims,
    w: &[f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    gx: &mut [f64],
    xd: Dims,
    k: (usize, usize),
    stride: usize,
    pad: usize,
) {
    if stride == 1 {
        return scatter_s1(g, gd, w, w_index, gx, xd, k, pad);
    }
    let (kh, kw) = k;
    let (ih, iw) = (xd.h, xd.w);
    let (oh, ow) = (gd.h, gd.w);
    for n in 0..gd.n {
        for i in 0..xd.c {
            let ibase = (n * xd.c + i) * ih * iw;
            for o in 0..gd.c {
                let obase = (n * gd.c + o) * oh * ow;
                for ky in 0..kh {
                    let (ylo, yhi) = valid_range(ky, pad, stride, ih, oh);
                    for kx in 0..kw {
                        let (xlo, xhi) = valid_range(kx, pad, stride, iw, ow);
                        let wv = w[w_index(o, i, ky, kx)];
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let grow = &g[obase + oy * ow..obase + oy * ow + ow];
                            let xrow = &mut gx[ibase + iy * iw..ibase + iy * iw + iw];
                            for ox in xlo..xhi {
                                xrow[ox * stride + kx - pad] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `Σ_{n,y,x} g[n,o,y,x] · x[n,i,y*s+ky-p, x*s+kx-p]`, written into a
/// `[O, I, kh, kw]`-indexed buffer.
#[allow(clippy::too_many_arguments)]
fn weight_corr(
    x: &[f64],
    xd: Dims,
    g: &[f64],
    gd: Dims,
    gw: &mut [f64],
    w_index: impl Fn(usize, usize, usize, usize) -> usize,
    k: (usize, usize),
    stride: usize,
    pad: usize,
) {
    if stride == 1 {
        return weight_corr_s1(x, xd, g, gd, gw, w_index, k, pad);
    }
    let (kh, kw) = k;
    let (ih, iw) = (xd.h, xd.w);
    let (oh, ow) = (gd.h, gd.w);
    for o in 0..gd.c {
        for i in 0..xd.c {
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(ky, pad, stride, ih, oh);
                for kx in 0..kw {
                    let (xlo, xhi) = valid_range(kx, pad, stride, iw, ow);
                    let mut acc = 0.0;
                    for n in 0..gd.n {
                        let obase = (n * gd.c + o) * oh * ow;
                        let ibase = (n * xd.c + i) * ih * iw;
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let grow = &g[obase + oy * ow..obase + oy * ow + ow];
                            let xrow = &x[ibase + iy * iw..ibase + iy * iw + iw];
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                    gw[w_index(o, i, ky, kx)] += acc;
                }
            }
        }
    }
}

fn add_bias(out: &mut Tensor4, bias: &[f64]) {
    let d = out.dims();
    for n in 0..d.n {
        for (c, &b) in bias.iter().enumerate() {
            if b != 0.0 {
                out.plane_mut(n, c).iter_mut().for_each(|v| *v += b);
            }
        }
    }
}

fn forward_index(spec: &ConvSpec) -> impl Fn(usize, usize, usize, usize) -> usize {
    let (ci, (kh, kw)) = (spec.in_channels, spec.kernel);
    move |o, i, y, x| ((o * ci + i) * kh + y) * kw + x
}

/// Forward convolution (cross-correlation) with zero padding.
pub fn conv2d(input: &Tensor4, weight: &Tensor4, bias: &[f64], spec: &ConvSpec) -> Result<Tensor4> {
    spec.validate()?;
    if spec.transposed {
        return shape_err("conv2d called with a transposed spec");
    }
    let d = input.dims();
    if d.c != spec.in_channels {
        return shape_err(format!("input has {} channels, conv expects {}", d.c, spec.in_channels));
    }
    check_weight(weight, spec)?;
    check_bias(bias, spec.out_channels)?;
    let oh = spec.forward_extent(d.h, spec.kernel.0)?;
    let ow = spec.forward_extent(d.w, spec.kernel.1)?;
    let od = Dims::new(d.n, spec.out_channels, oh, ow);
    let mut out = Tensor4::zeros(od);
    correlate(
        input.data(),
        d,
        weight.data(),
        forward_index(spec),
        out.data_mut(),
        od,
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradient of a forward convolution with respect to its input.
pub fn conv2d_input_grad(
    grad_out: &Tensor4,
    weight: &Tensor4,
    spec: &ConvSpec,
    input_dims: Dims,
) -> Result<Tensor4> {
    check_weight(weight, spec)?;
    let mut gx = Tensor4::zeros(input_dims);
    scatter(
        grad_out.data(),
        grad_out.dims(),
        weight.data(),
        forward_index(spec),
        gx.data_mut(),
        input_dims,
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    Ok(gx)
}

/// Gradient of a forward convolution with respect to its weight.
pub fn conv2d_weight_grad(input: &Tensor4, grad_out: &Tensor4, spec: &ConvSpec) -> Result<Tensor4> {
    let mut gw = Tensor4::zeros(spec.weight_dims());
    weight_corr(
        input.data(),
        input.dims(),
        grad_out.data(),
        grad_out.dims(),
        gw.data_mut(),
        forward_index(spec),
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    Ok(gw)
}

fn transposed_index(spec: &ConvSpec) -> impl Fn(usize, usize, usize, usize) -> usize {
    // The underlying forward conv maps `out_channels -> in_channels`, so its
    // output index `o` is our input channel and its input index `i` ours out.
    let (co, (kh, kw)) = (spec.out_channels, spec.kernel);
    move |o, i, y, x| ((o * co + i) * kh + y) * kw + x
}

/// Transposed convolution: the adjoint of the stride-2 forward convolution
/// sharing the same weight tensor. Output extent is exactly double.
pub fn conv2d_transpose(
    input: &Tensor4,
    weight: &Tensor4,
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<Tensor4> {
    spec.validate()?;
    if !spec.transposed || spec.stride != 2 {
        return shape_err("conv2d_transpose needs a transposed stride-2 spec");
    }
    let d = input.dims();
    if d.c != spec.in_channels {
        return shape_err(format!(
            "input has {} channels, transposed conv expects {}",
            d.c, spec.in_channels
        ));
    }
    check_weight(weight, spec)?;
    check_bias(bias, spec.out_channels)?;
    let od = Dims::new(d.n, spec.out_channels, 2 * d.h, 2 * d.w);
    let mut out = Tensor4::zeros(od);
    scatter(
        input.data(),
        d,
        weight.data(),
        transposed_index(spec),
        out.data_mut(),
        od,
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`conv2d_transpose`] w.r.t. input and weight.
pub(crate) fn conv2d_transpose_grads(
    input: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
    spec: &ConvSpec,
) -> (Tensor4, Tensor4) {
    let d = input.dims();
    let mut gx = Tensor4::zeros(d);
    correlate(
        grad_out.data(),
        grad_out.dims(),
        weight.data(),
        transposed_index(spec),
        gx.data_mut(),
        d,
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    let mut gw = Tensor4::zeros(spec.weight_dims());
    // Weight gradient of the adjoint: the forward conv's weight-correlation
    // with the roles of input and output gradient swapped.
    weight_corr(
        grad_out.data(),
        grad_out.dims(),
        input.data(),
        d,
        gw.data_mut(),
        transposed_index(spec),
        spec.kernel,
        spec.stride,
        spec.padding,
    );
    (gx, gw)
}

/// Per-channel sum of an output gradient (the bias gradient).
pub(crate) fn bias_grad(grad_out: &Tensor4) -> Tensor4 {
    let d = grad_out.dims();
    let mut out = vec![0.0; d.c];
    for n in 0..d.n {
        for (c, acc) in out.iter_mut().enumerate() {
            *acc += grad_out.plane(n, c).iter().sum::<f64>();
        }
    }
    Tensor4::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(dims, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct quadruple-loop convolution with explicit bounds checks.
    fn direct_conv(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize, pad: usize) -> Tensor4 {
        let d = x.dims();
        let wd = w.dims();
        let oh = (d.h + 2 * pad - wd.h) / stride + 1;
        let ow = (d.w + 2 * pad - wd.w) / stride + 1;
        Tensor4::from_fn(Dims::new(d.n, wd.n, oh, ow), |n, o, y, xx| {
            let mut s = b[o];
            for i in 0..d.c {
                for ky in 0..wd.h {
                    for kx in 0..wd.w {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (xx * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            s += w.at(o, i, ky, kx) * x.at(n, i, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0);
        let w = Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::same3x3(1, 1)).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn pointwise_identity() {
        let x = random(Dims::new(2, 1, 4, 5), 3);
        let w = Tensor4::filled(Dims::new(1, 1, 1, 1), 1.0);
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::pointwise(1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_direct_oracle() {
        let x = random(Dims::new(2, 3, 8, 8), 1);
        let w = random(Dims::new(4, 3, 3, 3), 2);
        let b = [0.1, -0.2, 0.3, 0.0];
        let y = conv2d(&x, &w, &b, &ConvSpec::same3x3(3, 4)).unwrap();
        let r = direct_conv(&x, &w, &b, 1, 1);
        for (a, e) in y.data().iter().zip(r.data()) {
            assert!((a - e).abs() <= 1e-12);
        }
        let y2 = conv2d(&x, &w, &b, &ConvSpec::down(3, 4)).unwrap();
        assert_eq!(y2.dims(), Dims::new(2, 4, 4, 4));
        let r2 = direct_conv(&x, &w, &b, 2, 1);
        for (a, e) in y2.data().iter().zip(r2.data()) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn stride_two_rejects_odd_extent() {
        let x = Tensor4::zeros(Dims::new(1, 1, 5, 4));
        let w = Tensor4::zeros(Dims::new(1, 1, 3, 3));
        assert!(conv2d(&x, &w, &[0.0], &ConvSpec::down(1, 1)).is_err());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor4::zeros(Dims::new(1, 2, 4, 4));
        let w = Tensor4::zeros(Dims::new(1, 3, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, &[0.0], &ConvSpec::same3x3(3, 1)),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn transposed_shape_and_bias() {
        let x = Tensor4::zeros(Dims::new(1, 1, 2, 2));
        let w = random(Dims::new(1, 3, 3, 3), 5);
        let y = conv2d_transpose(&x, &w, &[0.5, 1.5, -2.0], &ConvSpec::up(1, 3)).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 3, 4, 4));
        assert!(y.plane(0, 1).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn transposed_is_adjoint_of_strided_conv() {
        // <down(z), x> == <z, up(x)> for the shared weight.
        let x = random(Dims::new(1, 2, 4, 4), 7);
        let z = random(Dims::new(1, 3, 8, 8), 8);
        let w = random(Dims::new(2, 3, 3, 3), 9);
        let down = direct_conv(&z, &w, &[0.0, 0.0], 2, 1);
        let up = conv2d_transpose(&x, &w, &[0.0; 3], &ConvSpec::up(2, 3)).unwrap();
        let lhs: f64 = down.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = up.data().iter().zip(z.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn valid_range_edges() {
        // pad 1, k 0, stride 1: first output reads index -1.
        assert_eq!(valid_range(0, 1, 1, 4, 4), (1, 4));
        assert_eq!(valid_range(2, 1, 1, 4, 4), (0, 3));
        assert_eq!(valid_range(0, 1, 2, 8, 4), (1, 4));
        assert_eq!(valid_range(2, 1, 2, 8, 4), (0, 4));
    }
}

//! Forward and backward kernels for the layer primitives.
//!
//! Every kernel is a pure function of its inputs. Batch items are processed
//! in parallel, but each output element is produced by exactly one task and
//! cross-batch reductions (weight and bias gradients) are summed in batch
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding::uniform(0);

    pub const fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn vertical(&self) -> usize {
        self.top + self.bottom
    }

    pub fn horizontal(&self) -> usize {
        self.left + self.right
    }
}

/// Geometry of a convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(
                "kernel size, stride and channel counts must be positive".into(),
            ));
        }
        Ok(ConvSpec {
            kernel_h,
            kernel_w,
            stride,
            padding,
            in_channels,
            out_channels,
        })
    }

    /// Stride-1 square convolution that preserves spatial extents (odd kernels).
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: Padding::uniform(kernel / 2),
            in_channels,
            out_channels,
        }
    }

    /// Unpadded square kernel with the given stride.
    pub fn strided(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: Padding::NONE,
            in_channels,
            out_channels,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    /// `floor((in + pad_total - kernel) / stride) + 1` per spatial axis.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, pad: usize, k: usize, name: &str| {
            let padded = n + pad;
            if padded < k {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    msg: format!("padded {name} extent {padded} is smaller than kernel {k}"),
                });
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((
            axis(h, self.padding.vertical(), self.kernel_h, "height")?,
            axis(w, self.padding.horizontal(), self.kernel_w, "width")?,
        ))
    }

    /// `stride·(in − 1) + kernel − pad_total` per spatial axis.
    pub fn transposed_output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, pad: usize, k: usize, name: &str| {
            let full = self.stride * (n - 1) + k;
            if full <= pad {
                return Err(Error::InvalidShape {
                    op: "deconv2d",
                    msg: format!("padding {pad} removes the whole {name} extent {full}"),
                });
            }
            Ok(full - pad)
        };
        Ok((
            axis(h, self.padding.vertical(), self.kernel_h, "height")?,
            axis(w, self.padding.horizontal(), self.kernel_w, "width")?,
        ))
    }
}

const WEIGHT_AXES: [&str; 4] = ["kernel_h", "kernel_w", "in_channels", "out_channels"];

fn check_weights(op: &'static str, w: &Shape, spec: &ConvSpec) -> Result<()> {
    if w.rank() != 4 {
        return Err(Error::InvalidShape {
            op,
            msg: format!("weights must be rank 4 (kh, kw, in, out), got {w}"),
        });
    }
    for ((&actual, expected), axis) in w.dims().iter().zip(spec.weight_dims()).zip(WEIGHT_AXES) {
        if actual != expected {
            return Err(Error::ShapeMismatch {
                op,
                axis,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

fn check_channels(op: &'static str, x: &Shape, expected: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, h, w, c) = x.nhwc_dims(op)?;
    if c != expected {
        return Err(Error::ShapeMismatch {
            op,
            axis: "channels",
            expected,
            actual: c,
        });
    }
    Ok((n, h, w, c))
}

pub fn conv2d_shape(x: &Shape, w: &Shape, b: Option<&Shape>, spec: &ConvSpec) -> Result<Shape> {
    let (n, h, wd, _) = check_channels("conv2d", x, spec.in_channels)?;
    check_weights("conv2d", w, spec)?;
    if let Some(b) = b {
        if b.numel() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: "bias",
                expected: spec.out_channels,
                actual: b.numel(),
            });
        }
    }
    let (oh, ow) = spec.output_extent(h, wd)?;
    Shape::nhwc(n, oh, ow, spec.out_channels)
}

pub fn deconv2d_shape(x: &Shape, w: &Shape, spec: &ConvSpec) -> Result<Shape> {
    let (n, h, wd, _) = check_channels("deconv2d", x, spec.in_channels)?;
    check_weights("deconv2d", w, spec)?;
    let (oh, ow) = spec.transposed_output_extent(h, wd)?;
    Shape::nhwc(n, oh, ow, spec.out_channels)
}

pub fn maxpool2d_shape(x: &Shape, size: usize, stride: usize) -> Result<Shape> {
    let (n, h, w, c) = x.nhwc_dims("maxpool2d")?;
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool size and stride must be positive".into()));
    }
    if h < size || w < size {
        return Err(Error::InvalidShape {
            op: "maxpool2d",
            msg: format!("input {h}x{w} is smaller than the {size}x{size} window"),
        });
    }
    if size == stride && (h % stride != 0 || w % stride != 0) {
        return Err(Error::InvalidShape {
            op: "maxpool2d",
            msg: format!("spatial extents {h}x{w} are not divisible by stride {stride}"),
        });
    }
    Shape::nhwc(n, (h - size) / stride + 1, (w - size) / stride + 1, c)
}

pub fn upsample_shape(x: &Shape, factor: usize) -> Result<Shape> {
    let (n, h, w, c) = x.nhwc_dims("bilinear_upsample")?;
    if factor != 2 && factor != 4 {
        return Err(Error::InvalidArgument(format!(
            "unsupported bilinear upsampling factor {factor} (expected 2 or 4)"
        )));
    }
    Shape::nhwc(n, h * factor, w * factor, c)
}

pub fn batchnorm_shape(x: &Shape, gamma: &Shape, beta: &Shape) -> Result<Shape> {
    let (_, _, _, c) = x.nhwc_dims("batchnorm")?;
    for (p, axis) in [(gamma, "gamma"), (beta, "beta")] {
        if p.numel() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                axis,
                expected: c,
                actual: p.numel(),
            });
        }
    }
    Ok(x.clone())
}

pub fn concat_shape(parts: &[&Shape]) -> Result<Shape> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let (n, h, w, _) = first.nhwc_dims("concat_channels")?;
    let mut channels = 0;
    for p in parts {
        let (pn, ph, pw, pc) = p.nhwc_dims("concat_channels")?;
        for (axis, expected, actual) in [("batch", n, pn), ("height", h, ph), ("width", w, pw)] {
            if expected != actual {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        channels += pc;
    }
    Shape::nhwc(n, h, w, channels)
}

pub fn same_shape(op: &'static str, a: &Shape, b: &Shape) -> Result<()> {
    if a == b {
        return Ok(());
    }
    if a.rank() != b.rank() {
        return Err(Error::InvalidShape {
            op,
            msg: format!("rank mismatch: {a} vs {b}"),
        });
    }
    let axis = a.dims().iter().zip(b.dims()).position(|(x, y)| x != y).unwrap_or(0);
    const NAMES: [&str; 4] = ["batch", "height", "width", "channels"];
    Err(Error::ShapeMismatch {
        op,
        axis: if a.rank() == 4 { NAMES[axis] } else { "extent" },
        expected: a.dims()[axis],
        actual: b.dims()[axis],
    })
}

// ---------------------------------------------------------------------------
// Convolution

fn im2col<T: Element>(x: &[T], h: usize, w: usize, c: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let k = spec.kernel_h * spec.kernel_w * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * k..][..k];
            for ky in 0..spec.kernel_h {
                let iy = (oy * spec.stride + ky) as isize - spec.padding.top as isize;
                for kx in 0..spec.kernel_w {
                    let ix = (ox * spec.stride + kx) as isize - spec.padding.left as isize;
                    let dst = &mut row[(ky * spec.kernel_w + kx) * c..][..c];
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                        dst.copy_from_slice(&x[(iy as usize * w + ix as usize) * c..][..c]);
                    } else {
                        dst.fill(T::ZERO);
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], h: usize, w: usize, c: usize, spec: &ConvSpec, oh: usize, ow: usize, dx: &mut [T]) {
    let k = spec.kernel_h * spec.kernel_w * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * k..][..k];
            for ky in 0..spec.kernel_h {
                let iy = (oy * spec.stride + ky) as isize - spec.padding.top as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for kx in 0..spec.kernel_w {
                    let ix = (ox * spec.stride + kx) as isize - spec.padding.left as isize;
                    if ix < 0 || ix as usize >= w {
                        continue;
                    }
                    let src = &row[(ky * spec.kernel_w + kx) * c..][..c];
                    let dst = &mut dx[(iy as usize * w + ix as usize) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == Padding::NONE
}

/// Cross-correlation of `x` with `w` plus an optional per-channel bias.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = conv2d_shape(x.shape(), w.shape(), b.map(|b| b.shape()), spec)?;
    let (_, h, wd, c) = x.shape().nhwc_dims("conv2d")?;
    let (_, oh, ow, co) = out_shape.nhwc_dims("conv2d")?;
    let p = oh * ow;
    let k = spec.kernel_h * spec.kernel_w * c;
    let mut out = vec![T::ZERO; out_shape.numel()];
    out.par_chunks_mut(p * co)
        .zip(x.data().par_chunks(h * wd * c))
        .for_each(|(out_n, x_n)| {
            let mut cols_buf = Vec::new();
            let cols: &[T] = if is_pointwise(spec) {
                x_n
            } else {
                cols_buf.resize(p * k, T::ZERO);
                im2col(x_n, h, wd, c, spec, oh, ow, &mut cols_buf);
                &cols_buf
            };
            T::gemm(p, k, co, cols, (k as isize, 1), w.data(), (co as isize, 1), out_n, (co as isize, 1), false);
            if let Some(b) = b {
                for px in out_n.chunks_mut(co) {
                    for (o, &bias) in px.iter_mut().zip(b.data()) {
                        *o += bias;
                    }
                }
            }
        });
    Tensor::new(out_shape, out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    spec: &ConvSpec,
    dout: &Tensor<T>,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let (n, h, wd, c) = x.shape().nhwc_dims("conv2d")?;
    let (_, oh, ow, co) = dout.shape().nhwc_dims("conv2d")?;
    let p = oh * ow;
    let k = spec.kernel_h * spec.kernel_w * c;
    let pointwise = is_pointwise(spec);

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_n = &x.data()[i * h * wd * c..][..h * wd * c];
            let d_n = &dout.data()[i * p * co..][..p * co];
            let mut cols_buf = Vec::new();
            let cols: &[T] = if pointwise {
                x_n
            } else {
                cols_buf.resize(p * k, T::ZERO);
                im2col(x_n, h, wd, c, spec, oh, ow, &mut cols_buf);
                &cols_buf
            };
            // dW_n = colsᵀ · dout_n
            let mut dw = vec![T::ZERO; k * co];
            T::gemm(k, p, co, cols, (1, k as isize), d_n, (co as isize, 1), &mut dw, (co as isize, 1), false);
            let mut dx = Vec::new();
            if need_dx {
                // dcols = dout_n · Wᵀ
                let mut dcols = vec![T::ZERO; p * k];
                T::gemm(p, co, k, d_n, (co as isize, 1), w.data(), (1, co as isize), &mut dcols, (k as isize, 1), false);
                if pointwise {
                    dx = dcols;
                } else {
                    dx = vec![T::ZERO; h * wd * c];
                    col2im(&dcols, h, wd, c, spec, oh, ow, &mut dx);
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dw = vec![T::ZERO; k * co];
    let mut dx = Vec::with_capacity(if need_dx { x.len() } else { 0 });
    for (dx_n, dw_n) in per_sample {
        for (a, b) in dw.iter_mut().zip(dw_n) {
            *a += b;
        }
        dx.extend(dx_n);
    }
    let db = with_bias.then(|| {
        let mut db = vec![T::ZERO; co];
        for px in dout.data().chunks(co) {
            for (a, &g) in db.iter_mut().zip(px) {
                *a += g;
            }
        }
        db
    });
    Ok(ConvGrads {
        dx: if need_dx { Some(Tensor::new(x.shape().clone(), dx)?) } else { None },
        dw: Tensor::new(w.shape().clone(), dw)?,
        db: db.map(|db| Tensor::from_vec([co], db)).transpose()?,
    })
}

// ---------------------------------------------------------------------------
// Transposed convolution

/// Transposed convolution: every input pixel spreads `x · w[ky, kx]` into the
/// output window it maps to. This is the adjoint of [`conv2d_forward`].
pub fn deconv2d_forward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = deconv2d_shape(x.shape(), w.shape(), spec)?;
    let (_, h, wd, ci) = x.shape().nhwc_dims("deconv2d")?;
    let (_, oh, ow, co) = out_shape.nhwc_dims("deconv2d")?;
    let p_in = h * wd;
    let mut out = vec![T::ZERO; out_shape.numel()];
    out.par_chunks_mut(oh * ow * co)
        .zip(x.data().par_chunks(p_in * ci))
        .for_each(|(out_n, x_n)| {
            let mut y = vec![T::ZERO; p_in * co];
            for ky in 0..spec.kernel_h {
                for kx in 0..spec.kernel_w {
                    let w_k = &w.data()[(ky * spec.kernel_w + kx) * ci * co..][..ci * co];
                    T::gemm(p_in, ci, co, x_n, (ci as isize, 1), w_k, (co as isize, 1), &mut y, (co as isize, 1), false);
                    for iy in 0..h {
                        let oy = (iy * spec.stride + ky) as isize - spec.padding.top as isize;
                        if oy < 0 || oy as usize >= oh {
                            continue;
                        }
                        for ix in 0..wd {
                            let ox = (ix * spec.stride + kx) as isize - spec.padding.left as isize;
                            if ox < 0 || ox as usize >= ow {
                                continue;
                            }
                            let src = &y[(iy * wd + ix) * co..][..co];
                            let dst = &mut out_n[(oy as usize * ow + ox as usize) * co..][..co];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(out_shape, out)
}

pub fn deconv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    dout: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let (n, h, wd, ci) = x.shape().nhwc_dims("deconv2d")?;
    let (_, oh, ow, co) = dout.shape().nhwc_dims("deconv2d")?;
    let p_in = h * wd;
    let taps = spec.kernel_h * spec.kernel_w;

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_n = &x.data()[i * p_in * ci..][..p_in * ci];
            let d_n = &dout.data()[i * oh * ow * co..][..oh * ow * co];
            let mut dx = if need_dx { vec![T::ZERO; p_in * ci] } else { Vec::new() };
            let mut dw = vec![T::ZERO; taps * ci * co];
            let mut gathered = vec![T::ZERO; p_in * co];
            for ky in 0..spec.kernel_h {
                for kx in 0..spec.kernel_w {
                    for iy in 0..h {
                        let oy = (iy * spec.stride + ky) as isize - spec.padding.top as isize;
                        for ix in 0..wd {
                            let ox = (ix * spec.stride + kx) as isize - spec.padding.left as isize;
                            let dst = &mut gathered[(iy * wd + ix) * co..][..co];
                            if oy >= 0 && (oy as usize) < oh && ox >= 0 && (ox as usize) < ow {
                                dst.copy_from_slice(&d_n[(oy as usize * ow + ox as usize) * co..][..co]);
                            } else {
                                dst.fill(T::ZERO);
                            }
                        }
                    }
                    let tap = ky * spec.kernel_w + kx;
                    let w_k = &w.data()[tap * ci * co..][..ci * co];
                    if need_dx {
                        T::gemm(p_in, co, ci, &gathered, (co as isize, 1), w_k, (1, co as isize), &mut dx, (ci as isize, 1), true);
                    }
                    let dw_k = &mut dw[tap * ci * co..][..ci * co];
                    T::gemm(ci, p_in, co, x_n, (1, ci as isize), &gathered, (co as isize, 1), dw_k, (co as isize, 1), false);
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dw = vec![T::ZERO; w.len()];
    let mut dx = Vec::with_capacity(if need_dx { x.len() } else { 0 });
    for (dx_n, dw_n) in per_sample {
        for (a, b) in dw.iter_mut().zip(dw_n) {
            *a += b;
        }
        dx.extend(dx_n);
    }
    Ok((
        if need_dx { Some(Tensor::new(x.shape().clone(), dx)?) } else { None },
        Tensor::new(w.shape().clone(), dw)?,
    ))
}

// ---------------------------------------------------------------------------
// Pooling

/// Windowed maximum. Also returns, for every output element, the flat input
/// index of the first (row-major) maximal element of its window.
pub fn maxpool2d_forward<T: Element>(x: &Tensor<T>, size: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let out_shape = maxpool2d_shape(x.shape(), size, stride)?;
    let (n, h, w, c) = x.shape().nhwc_dims("maxpool2d")?;
    let (_, oh, ow, _) = out_shape.nhwc_dims("maxpool2d")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if best == usize::MAX || xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, argmax))
}

pub fn maxpool2d_backward<T: Element>(x_shape: &Shape, argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = vec![T::ZERO; x_shape.numel()];
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        dx[idx] += g;
    }
    Tensor {
        shape: x_shape.clone(),
        data: std::sync::Arc::new(dx),
    }
}

// ---------------------------------------------------------------------------
// Bilinear upsampling

/// Source taps `(i0, i1, weight of i1)` for each output index, using
/// half-pixel centres (align-corners = false) with edge clamping.
fn bilinear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_forward<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let out_shape = upsample_shape(x.shape(), factor)?;
    let (_, h, w, c) = x.shape().nhwc_dims("bilinear_upsample")?;
    let (_, oh, ow, _) = out_shape.nhwc_dims("bilinear_upsample")?;
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut out = vec![T::ZERO; out_shape.numel()];
    out.par_chunks_mut(oh * ow * c)
        .zip(x.data().par_chunks(h * w * c))
        .for_each(|(out_n, x_n)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(1.0 - ly), T::from_f64(ly));
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(1.0 - lx), T::from_f64(lx));
                    let a = &x_n[(y0 * w + x0) * c..][..c];
                    let b = &x_n[(y0 * w + x1) * c..][..c];
                    let cc = &x_n[(y1 * w + x0) * c..][..c];
                    let d = &x_n[(y1 * w + x1) * c..][..c];
                    let dst = &mut out_n[(oy * ow + ox) * c..][..c];
                    for ch in 0..c {
                        dst[ch] = wy0 * (wx0 * a[ch] + wx1 * b[ch]) + wy1 * (wx0 * cc[ch] + wx1 * d[ch]);
                    }
                }
            }
        });
    Tensor::new(out_shape, out)
}

pub fn upsample_backward<T: Element>(x_shape: &Shape, factor: usize, dout: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w, c) = x_shape.nhwc_dims("bilinear_upsample")?;
    let (_, oh, ow, _) = dout.shape().nhwc_dims("bilinear_upsample")?;
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut dx = vec![T::ZERO; x_shape.numel()];
    dx.par_chunks_mut(h * w * c)
        .zip(dout.data().par_chunks(oh * ow * c))
        .for_each(|(dx_n, d_n)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(1.0 - ly), T::from_f64(ly));
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(1.0 - lx), T::from_f64(lx));
                    let g = &d_n[(oy * ow + ox) * c..][..c];
                    for (idx, wgt) in [
                        ((y0 * w + x0) * c, wy0 * wx0),
                        ((y0 * w + x1) * c, wy0 * wx1),
                        ((y1 * w + x0) * c, wy1 * wx0),
                        ((y1 * w + x1) * c, wy1 * wx1),
                    ] {
                        for (d, &gv) in dx_n[idx..idx + c].iter_mut().zip(g) {
                            *d += wgt * gv;
                        }
                    }
                }
            }
        });
    Tensor::new(x_shape.clone(), dx)
}

// ---------------------------------------------------------------------------
// Batch normalization

pub struct BatchNormOutput<T> {
    pub y: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and (biased) variance; only set in training mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

/// Per-channel normalization. With `running = None` the batch statistics
/// are used, otherwise the supplied running mean and variance.
pub fn batchnorm_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<BatchNormOutput<T>> {
    let shape = batchnorm_shape(x.shape(), gamma.shape(), beta.shape())?;
    let (_, _, _, c) = shape.nhwc_dims("batchnorm")?;
    let count = x.len() / c;
    let (mean, var, batch_stats) = match running {
        Some((rm, rv)) => {
            if rm.len() != c || rv.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    axis: "running stats",
                    expected: c,
                    actual: rm.len().min(rv.len()),
                });
            }
            (rm.data().to_vec(), rv.data().to_vec(), false)
        }
        None => {
            let mut mean = vec![T::ZERO; c];
            for px in x.data().chunks(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            let inv_count = T::ONE / T::from_f64(count as f64);
            mean.iter_mut().for_each(|m| *m *= inv_count);
            let mut var = vec![T::ZERO; c];
            for px in x.data().chunks(c) {
                for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_count);
            (mean, var, true)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for px in x.data().chunks(c) {
        for ch in 0..c {
            let xh = (px[ch] - mean[ch]) * inv_std[ch];
            xhat.push(xh);
            y.push(gamma.data()[ch] * xh + beta.data()[ch]);
        }
    }
    Ok(BatchNormOutput {
        y: Tensor::new(shape, y)?,
        xhat,
        inv_std,
        batch_stats: batch_stats.then_some((mean, var)),
    })
}

/// Returns `(dx, dgamma, dbeta)`. In training mode the batch statistics
/// depend on `x` and contribute to `dx`.
pub fn batchnorm_backward<T: Element>(
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dout: &[T],
    training: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let count = T::from_f64((dout.len() / c) as f64);
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for (g, xh) in dout.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += g[ch] * xh[ch];
            dbeta[ch] += g[ch];
        }
    }
    let mut dx = Vec::with_capacity(dout.len());
    for (g, xh) in dout.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            let v = if training {
                // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                gamma[ch] * inv_std[ch] * (count * g[ch] - dbeta[ch] - xh[ch] * dgamma[ch]) / count
            } else {
                gamma[ch] * inv_std[ch] * g[ch]
            };
            dx.push(v);
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = t(&[1, 3, 3, 1], (0..9).map(|v| v as f64 * 0.5 - 1.0).collect());
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        let b = t(&[1], vec![0.0]);
        let y = conv2d_forward(&x, &w, Some(&b), &ConvSpec::same(1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_window_overlap() {
        let x = t(&[1, 3, 3, 1], vec![1.0; 9]);
        let w = t(&[3, 3, 1, 1], vec![1.0; 9]);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::same(3, 1, 1)).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn conv_names_offending_axis() {
        let x = t(&[1, 4, 4, 2], vec![0.0; 32]);
        let w = t(&[3, 3, 3, 1], vec![0.0; 27]);
        let err = conv2d_forward(&x, &w, None, &ConvSpec::same(3, 3, 1)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "channels", expected: 3, actual: 2, .. }), "{err}");
        let err = conv2d_forward(&x, &w, None, &ConvSpec::same(3, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "in_channels", .. }), "{err}");
        let b = t(&[2], vec![0.0; 2]);
        let w = t(&[3, 3, 2, 1], vec![0.0; 18]);
        let err = conv2d_forward(&x, &w, Some(&b), &ConvSpec::same(3, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "bias", .. }), "{err}");
    }

    #[test]
    fn strided_conv_extent() {
        let spec = ConvSpec::new(3, 3, 2, Padding::uniform(1), 1, 1).unwrap();
        assert_eq!(spec.output_extent(7, 8).unwrap(), (4, 4));
        assert!(ConvSpec::strided(5, 1, 1, 1).output_extent(3, 3).is_err());
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = t(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, arg) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let x = t(&[1, 2, 2, 1], vec![7.0; 4]);
        let (_, arg) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
        let g = maxpool2d_backward(x.shape(), &arg, &t(&[1, 1, 1, 1], vec![1.0]));
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_indivisible_extent() {
        let x = t(&[1, 3, 4, 1], vec![0.0; 12]);
        assert!(maxpool2d_forward(&x, 2, 2).is_err());
    }

    #[test]
    fn deconv_spreads_single_pixel() {
        let x = t(&[1, 1, 1, 1], vec![2.5]);
        let w = t(&[2, 2, 1, 1], vec![1.0; 4]);
        let y = deconv2d_forward(&x, &w, &ConvSpec::strided(2, 2, 1, 1)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[2.5; 4]);
    }

    #[test]
    fn bilinear_half_pixel_weights() {
        let x = t(&[1, 2, 1, 1], vec![0.0, 1.0]);
        let y = upsample_forward(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 4, 2, 1]);
        let column: Vec<f64> = y.data().chunks(2).map(|r| r[0]).collect();
        assert_eq!(column, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_keeps_constants() {
        let x = t(&[1, 3, 2, 2], vec![5.0; 12]);
        let y = upsample_forward(&x, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        assert!(upsample_forward(&x, 3).is_err());
    }

    #[test]
    fn batchnorm_affine_on_standardized_input() {
        // per-channel zero mean, unit (biased) variance
        let x = t(&[1, 2, 2, 1], vec![-1.0, 1.0, -1.0, 1.0]);
        let gamma = t(&[1], vec![2.0]);
        let beta = t(&[1], vec![3.0]);
        let out = batchnorm_forward(&x, &gamma, &beta, 0.0, None).unwrap();
        assert_eq!(out.y.data(), &[1.0, 5.0, 1.0, 5.0]);
    }
}

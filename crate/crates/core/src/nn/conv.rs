//! Strided 2-D convolution and its transpose, lowered onto GEMM via im2col.
//!
//! Weights are laid out `[out_ch, in_ch, k, k]` for `conv2d`. For
//! `conv_transpose2d` the same tensor is read as `[in_ch, out_ch, k, k]`,
//! so that the transposed convolution with weight `W` is exactly the
//! input-gradient of `conv2d` with weight `W`.

use super::gemm::{sgemm, Op};
use crate::error::{Error, Result};
use crate::tensor::{Backward, BackwardCtx, Graph, Tensor, Var};

/// Stride and zero padding of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// `floor((in + 2p - k) / s) + 1`, or `None` if the window does not fit.
    pub fn conv_out(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || input + 2 * self.padding < kernel {
            return None;
        }
        Some((input + 2 * self.padding - kernel) / self.stride + 1)
    }

    /// `(in - 1) * s - 2p + k`, or `None` if that is below one.
    pub fn transpose_out(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || input == 0 {
            return None;
        }
        let full = (input - 1) * self.stride + kernel;
        (full > 2 * self.padding).then(|| full - 2 * self.padding)
    }
}

/// Geometry of the im2col lowering: a `[c, h, w]` image convolved with a
/// `k x k` window yields an `oh x ow` grid.
#[derive(Debug, Clone, Copy)]
struct Lowering {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn cols(&self) -> usize {
        self.batch * self.positions()
    }

    /// `[c*k*k, batch*oh*ow]` patch matrix of `image` (`[batch, c, h, w]`).
    fn im2col(&self, image: &[f32]) -> Vec<f32> {
        let (l, ncols) = (self.positions(), self.cols());
        let mut out = vec![0.0f32; self.rows() * ncols];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst_row = &mut out[row * ncols..(row + 1) * ncols];
                    for b in 0..self.batch {
                        let plane = &image[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        let dst = &mut dst_row[b * l..(b + 1) * l];
                        for oh in 0..self.oh {
                            let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                            if ih < 0 || ih >= self.h as isize {
                                continue;
                            }
                            let src = &plane[ih as usize * self.w..][..self.w];
                            for ow in 0..self.ow {
                                let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                                if iw >= 0 && iw < self.w as isize {
                                    dst[oh * self.ow + ow] = src[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Scatter-add adjoint of [`Lowering::im2col`].
    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let (l, ncols) = (self.positions(), self.cols());
        let mut out = vec![0.0f32; self.batch * self.c * self.h * self.w];
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for b in 0..self.batch {
                        let plane =
                            &mut out[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        let src = &src_row[b * l..(b + 1) * l];
                        for oh in 0..self.oh {
                            let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                            if ih < 0 || ih >= self.h as isize {
                                continue;
                            }
                            let dst = &mut plane[ih as usize * self.w..][..self.w];
                            for ow in 0..self.ow {
                                let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                                if iw >= 0 && iw < self.w as isize {
                                    dst[iw as usize] += src[oh * self.ow + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// `[n, c, l]` to `[c, n*l]`.
fn to_channel_major(data: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * l + b * l..][..l].copy_from_slice(&data[(b * c + ch) * l..][..l]);
        }
    }
    out
}

/// `[c, n*l]` to `[n, c, l]`.
fn from_channel_major(data: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * l..][..l].copy_from_slice(&data[ch * n * l + b * l..][..l]);
        }
    }
    out
}

fn add_bias(data: &mut [f32], bias: &[f32], n: usize, l: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut data[(b * c + ch) * l..][..l] {
                *v += bv;
            }
        }
    }
}

fn bias_grad(grad: &[f32], n: usize, c: usize, l: usize) -> Tensor {
    let mut out = vec![0.0f64; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            *acc += grad[(b * c + ch) * l..][..l]
                .iter()
                .map(|&v| f64::from(v))
                .sum::<f64>();
        }
    }
    Tensor::from_vec(out.into_iter().map(|v| v as f32).collect())
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Dimension(format!(
            "{what} must be rank 4, got shape {:?}",
            t.shape()
        ))),
    }
}

fn check_bias(g: &Graph, bias: Option<Var>, channels: usize) -> Result<Option<Vec<f32>>> {
    let Some(b) = bias else { return Ok(None) };
    let t = g.value(b)?;
    if t.shape() != [channels] {
        return Err(Error::Dimension(format!(
            "bias shape {:?} does not match {channels} output channels",
            t.shape()
        )));
    }
    Ok(Some(t.data().to_vec()))
}

fn square_kernel(w: [usize; 4]) -> Result<usize> {
    if w[2] != w[3] {
        return Err(Error::Dimension(format!(
            "only square kernels are supported, got {}x{}",
            w[2], w[3]
        )));
    }
    Ok(w[2])
}

/// Cross-correlation of `x` (`[N, C, H, W]`) with `weight` (`[O, C, k, k]`).
pub fn conv2d(
    g: &mut Graph,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
) -> Result<Var> {
    let [n, c, h, w] = dims4(g.value(x)?, "conv2d input")?;
    let wd = dims4(g.value(weight)?, "conv2d weight")?;
    let k = square_kernel(wd)?;
    if wd[1] != c {
        return Err(Error::Dimension(format!(
            "conv2d: input has {c} channels but weight {wd:?} expects {}",
            wd[1]
        )));
    }
    let (oh, ow) = match (geom.conv_out(h, k), geom.conv_out(w, k)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Dimension(format!(
                "conv2d: {h}x{w} input with kernel {k}, {geom:?} has no valid output"
            )))
        }
    };
    let out_ch = wd[0];
    let bias_vals = check_bias(g, bias, out_ch)?;
    let low = Lowering {
        batch: n,
        c,
        h,
        w,
        k,
        stride: geom.stride,
        pad: geom.padding,
        oh,
        ow,
    };
    let cols = low.im2col(g.value(x)?.data());
    let mut out_mat = vec![0.0f32; out_ch * low.cols()];
    sgemm(
        out_ch,
        low.rows(),
        low.cols(),
        1.0,
        g.value(weight)?.data(),
        Op::N,
        &cols,
        Op::N,
        0.0,
        &mut out_mat,
    );
    let mut out = from_channel_major(&out_mat, n, out_ch, low.positions());
    if let Some(b) = &bias_vals {
        add_bias(&mut out, b, n, low.positions());
    }
    let out = Tensor::new(&[n, out_ch, oh, ow], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    g.record(out, inputs, Box::new(Conv2dRule { low, out_ch }))
}

struct Conv2dRule {
    low: Lowering,
    out_ch: usize,
}

impl Backward for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let low = &self.low;
        let (x, weight) = (ctx.inputs[0], ctx.inputs[1]);
        let l = low.positions();
        let dout = to_channel_major(grad.data(), low.batch, self.out_ch, l);
        let mut grads = vec![None, None];

        if ctx.needs[0] {
            let mut dcols = vec![0.0f32; low.rows() * low.cols()];
            sgemm(
                low.rows(),
                self.out_ch,
                low.cols(),
                1.0,
                weight.data(),
                Op::T,
                &dout,
                Op::N,
                0.0,
                &mut dcols,
            );
            grads[0] = Some(Tensor::new(x.shape(), low.col2im(&dcols))?);
        }
        if ctx.needs[1] {
            let cols = low.im2col(x.data());
            let mut dw = vec![0.0f32; weight.numel()];
            sgemm(
                self.out_ch,
                low.cols(),
                low.rows(),
                1.0,
                &dout,
                Op::N,
                &cols,
                Op::T,
                0.0,
                &mut dw,
            );
            grads[1] = Some(Tensor::new(weight.shape(), dw)?);
        }
        if ctx.inputs.len() == 3 {
            grads.push(ctx.needs[2].then(|| bias_grad(grad.data(), low.batch, self.out_ch, l)));
        }
        Ok(grads)
    }
}

/// Transposed convolution of `z` (`[N, I, H, W]`) with `weight` (`[I, O, k, k]`).
///
/// Output extent is `(H - 1) * stride - 2 * padding + k`.
pub fn conv_transpose2d(
    g: &mut Graph,
    z: Var,
    weight: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
) -> Result<Var> {
    let [n, in_ch, h, w] = dims4(g.value(z)?, "conv_transpose2d input")?;
    let wd = dims4(g.value(weight)?, "conv_transpose2d weight")?;
    let k = square_kernel(wd)?;
    if wd[0] != in_ch {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input has {in_ch} channels but weight {wd:?} expects {}",
            wd[0]
        )));
    }
    let (oh, ow) = match (geom.transpose_out(h, k), geom.transpose_out(w, k)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: {h}x{w} input with kernel {k}, {geom:?} has no valid output"
            )))
        }
    };
    let out_ch = wd[1];
    let bias_vals = check_bias(g, bias, out_ch)?;
    // The lowering describes the forward convolution this op is the adjoint of:
    // it maps the (oh x ow) output image back onto the (h x w) input grid.
    let low = Lowering {
        batch: n,
        c: out_ch,
        h: oh,
        w: ow,
        k,
        stride: geom.stride,
        pad: geom.padding,
        oh: h,
        ow: w,
    };
    let z_mat = to_channel_major(g.value(z)?.data(), n, in_ch, h * w);
    let mut dcols = vec![0.0f32; low.rows() * low.cols()];
    sgemm(
        low.rows(),
        in_ch,
        low.cols(),
        1.0,
        g.value(weight)?.data(),
        Op::T,
        &z_mat,
        Op::N,
        0.0,
        &mut dcols,
    );
    let mut out = low.col2im(&dcols);
    if let Some(b) = &bias_vals {
        add_bias(&mut out, b, n, oh * ow);
    }
    let out = Tensor::new(&[n, out_ch, oh, ow], out)?;
    let mut inputs = vec![z, weight];
    inputs.extend(bias);
    g.record(out, inputs, Box::new(ConvTranspose2dRule { low, in_ch }))
}

struct ConvTranspose2dRule {
    low: Lowering,
    in_ch: usize,
}

impl Backward for ConvTranspose2dRule {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let low = &self.low;
        let (z, weight) = (ctx.inputs[0], ctx.inputs[1]);
        let cols = low.im2col(grad.data());
        let mut grads = vec![None, None];

        if ctx.needs[0] {
            let mut dz = vec![0.0f32; self.in_ch * low.cols()];
            sgemm(
                self.in_ch,
                low.rows(),
                low.cols(),
                1.0,
                weight.data(),
                Op::N,
                &cols,
                Op::N,
                0.0,
                &mut dz,
            );
            let dz = from_channel_major(&dz, low.batch, self.in_ch, low.positions());
            grads[0] = Some(Tensor::new(z.shape(), dz)?);
        }
        if ctx.needs[1] {
            let z_mat = to_channel_major(z.data(), low.batch, self.in_ch, low.positions());
            let mut dw = vec![0.0f32; weight.numel()];
            sgemm(
                self.in_ch,
                low.cols(),
                low.rows(),
                1.0,
                &z_mat,
                Op::N,
                &cols,
                Op::T,
                0.0,
                &mut dw,
            );
            grads[1] = Some(Tensor::new(weight.shape(), dw)?);
        }
        if ctx.inputs.len() == 3 {
            grads.push(
                ctx.needs[2].then(|| bias_grad(grad.data(), low.batch, low.c, low.h * low.w)),
            );
        }
        Ok(grads)
    }
}

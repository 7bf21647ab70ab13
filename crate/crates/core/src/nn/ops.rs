//! Per-sample kernels and their tensor-level wrappers.
//!
//! Kernels compute pre-activations. Weight layouts:
//! dense `[out, in]`, conv1d `[c_out, c_in, k]`, transposed conv1d
//! `[c_in, c_out, k]`.

use crate::error::{Error, Result};
use crate::nn::layer::Activation;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_in: usize,
    pub t_out: usize,
}

pub fn dense_sample(x: &[f32], w: &[f32], b: &[f32], y: &mut [f32]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo = acc;
    }
}

/// Accumulates weight/bias gradients and writes the input gradient.
pub fn dense_sample_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    gx: &mut [f32],
) {
    let n_in = x.len();
    gx.iter_mut().for_each(|g| *g = 0.0);
    for (o, &g) in gy.iter().enumerate() {
        gb[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            gx[i] += row[i] * g;
        }
    }
}

#[inline]
fn source_pos(t: usize, k: usize, g: &ConvGeometry) -> Option<usize> {
    let pos = (t * g.stride + k) as isize - g.padding as isize;
    (pos >= 0 && (pos as usize) < g.t_in).then_some(pos as usize)
}

pub fn conv1d_sample(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeometry, y: &mut [f32]) {
    for co in 0..g.c_out {
        for t in 0..g.t_out {
            let mut acc = b[co];
            for ci in 0..g.c_in {
                let wrow = &w[(co * g.c_in + ci) * g.kernel..][..g.kernel];
                let xrow = &x[ci * g.t_in..][..g.t_in];
                for (k, wk) in wrow.iter().enumerate() {
                    if let Some(p) = source_pos(t, k, g) {
                        acc += wk * xrow[p];
                    }
                }
            }
            y[co * g.t_out + t] = acc;
        }
    }
}

pub fn conv1d_sample_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    g: &ConvGeometry,
    gw: &mut [f32],
    gb: &mut [f32],
    gx: &mut [f32],
) {
    gx.iter_mut().for_each(|v| *v = 0.0);
    for co in 0..g.c_out {
        let gyrow = &gy[co * g.t_out..][..g.t_out];
        gb[co] += gyrow.iter().sum::<f32>();
        for ci in 0..g.c_in {
            let base = (co * g.c_in + ci) * g.kernel;
            for k in 0..g.kernel {
                let wk = w[base + k];
                let mut acc = 0.0;
                for (t, &gyt) in gyrow.iter().enumerate() {
                    if let Some(p) = source_pos(t, k, g) {
                        acc += gyt * x[ci * g.t_in + p];
                        gx[ci * g.t_in + p] += wk * gyt;
                    }
                }
                gw[base + k] += acc;
            }
        }
    }
}

#[inline]
fn target_pos(j: usize, k: usize, g: &ConvGeometry) -> Option<usize> {
    let pos = (j * g.stride + k) as isize - g.padding as isize;
    (pos >= 0 && (pos as usize) < g.t_out).then_some(pos as usize)
}

/// Transposed convolution: the adjoint of [`conv1d_sample`] with the roles of
/// input and output swapped.
pub fn conv1d_transposed_sample(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeometry, y: &mut [f32]) {
    for co in 0..g.c_out {
        y[co * g.t_out..][..g.t_out].iter_mut().for_each(|v| *v = b[co]);
    }
    for ci in 0..g.c_in {
        for j in 0..g.t_in {
            let xv = x[ci * g.t_in + j];
            for co in 0..g.c_out {
                let wrow = &w[(ci * g.c_out + co) * g.kernel..][..g.kernel];
                for (k, wk) in wrow.iter().enumerate() {
                    if let Some(t) = target_pos(j, k, g) {
                        y[co * g.t_out + t] += xv * wk;
                    }
                }
            }
        }
    }
}

pub fn conv1d_transposed_sample_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    g: &ConvGeometry,
    gw: &mut [f32],
    gb: &mut [f32],
    gx: &mut [f32],
) {
    for co in 0..g.c_out {
        gb[co] += gy[co * g.t_out..][..g.t_out].iter().sum::<f32>();
    }
    for ci in 0..g.c_in {
        for j in 0..g.t_in {
            let xv = x[ci * g.t_in + j];
            let mut gxv = 0.0;
            for co in 0..g.c_out {
                let base = (ci * g.c_out + co) * g.kernel;
                for k in 0..g.kernel {
                    if let Some(t) = target_pos(j, k, g) {
                        let gyt = gy[co * g.t_out + t];
                        gw[base + k] += xv * gyt;
                        gxv += w[base + k] * gyt;
                    }
                }
            }
            gx[ci * g.t_in + j] = gxv;
        }
    }
}

fn batch_of(x: &Tensor, rank: usize, context: &str) -> Result<usize> {
    if x.shape().len() != rank {
        return Err(Error::dim(
            context,
            format!("expected rank-{rank} input, got shape {:?}", x.shape()),
        ));
    }
    Ok(x.shape()[0])
}

/// `y[n, o] = act(sum_i W[o, i] x[n, i] + b[o])`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor> {
    let batch = batch_of(x, 2, "dense")?;
    let (n_out, n_in) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::dim("dense", format!("weight must be rank 2, got {s:?}"))),
    };
    if x.shape()[1] != n_in || b.len() != n_out {
        return Err(Error::dim(
            "dense",
            format!(
                "input {:?}, weight {:?}, bias {:?} do not conform",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let mut out = vec![0.0; batch * n_out];
    for (xs, ys) in x.data().chunks(n_in).zip(out.chunks_mut(n_out)) {
        dense_sample(xs, w.data(), b.data(), ys);
        act.apply(ys);
    }
    Tensor::new(vec![batch, n_out], out)
}

/// Output length of a strided, zero-padded cross-correlation.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("conv stride must be >= 1".into()));
    }
    let padded = t + 2 * padding;
    if kernel == 0 || padded < kernel {
        return Err(Error::Config(format!(
            "conv with kernel {kernel} does not fit input length {t} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv1d_forward(
    x: &Tensor,
    kernels: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    act: Activation,
) -> Result<Tensor> {
    let batch = batch_of(x, 3, "conv1d")?;
    let (c_out, c_in, kernel) = match kernels.shape() {
        [o, i, k] => (*o, *i, *k),
        s => return Err(Error::dim("conv1d", format!("kernel must be rank 3, got {s:?}"))),
    };
    if x.shape()[1] != c_in || b.len() != c_out {
        return Err(Error::dim(
            "conv1d",
            format!("input {:?} vs kernel {:?}", x.shape(), kernels.shape()),
        ));
    }
    let t_in = x.shape()[2];
    let t_out = conv_output_len(t_in, kernel, stride, padding)?;
    let g = ConvGeometry {
        c_in,
        c_out,
        kernel,
        stride,
        padding,
        t_in,
        t_out,
    };
    let mut out = vec![0.0; batch * c_out * t_out];
    for (xs, ys) in x.data().chunks(c_in * t_in).zip(out.chunks_mut(c_out * t_out)) {
        conv1d_sample(xs, kernels.data(), b.data(), &g, ys);
        act.apply(ys);
    }
    Tensor::new(vec![batch, c_out, t_out], out)
}

pub fn conv1d_transposed_output_len(
    t: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Config("transposed conv needs stride and kernel >= 1".into()));
    }
    if output_padding >= stride {
        return Err(Error::Config(format!(
            "output_padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    let full = (t - 1) * stride + kernel + output_padding;
    if full <= 2 * padding {
        return Err(Error::Config(format!(
            "transposed conv output length is empty (input {t}, padding {padding})"
        )));
    }
    Ok(full - 2 * padding)
}

pub fn conv1d_transposed_forward(
    x: &Tensor,
    kernels: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
    act: Activation,
) -> Result<Tensor> {
    let batch = batch_of(x, 3, "conv1d_transposed")?;
    let (c_in, c_out, kernel) = match kernels.shape() {
        [i, o, k] => (*i, *o, *k),
        s => {
            return Err(Error::dim(
                "conv1d_transposed",
                format!("kernel must be rank 3, got {s:?}"),
            ))
        }
    };
    if x.shape()[1] != c_in || b.len() != c_out {
        return Err(Error::dim(
            "conv1d_transposed",
            format!("input {:?} vs kernel {:?}", x.shape(), kernels.shape()),
        ));
    }
    let t_in = x.shape()[2];
    let t_out = conv1d_transposed_output_len(t_in, kernel, stride, padding, output_padding)?;
    let g = ConvGeometry {
        c_in,
        c_out,
        kernel,
        stride,
        padding,
        t_in,
        t_out,
    };
    let mut out = vec![0.0; batch * c_out * t_out];
    for (xs, ys) in x.data().chunks(c_in * t_in).zip(out.chunks_mut(c_out * t_out)) {
        conv1d_transposed_sample(xs, kernels.data(), b.data(), &g, ys);
        act.apply(ys);
    }
    Tensor::new(vec![batch, c_out, t_out], out)
}

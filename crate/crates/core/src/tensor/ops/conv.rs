//! Real 2-D convolutions over `[batch, channel, time, freq]` maps.
//!
//! Both kernels are "valid" along time: causal context is supplied by the
//! caller as extra leading frames (zeros, or the tail of the previous
//! chunk when streaming), so frame `t` of the output only reads input
//! frames `t ..= t + kt - 1` of the padded input.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Var};

struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    t_in: usize,
    f_in: usize,
    kt: usize,
    kf: usize,
    stride: usize,
    t_out: usize,
    f_out: usize,
}

fn im2col(x: &[f64], g: &ConvGeom, b: usize, col: &mut [f64]) {
    let n = g.t_out * g.f_out;
    for ci in 0..g.c_in {
        for kt in 0..g.kt {
            for kf in 0..g.kf {
                let row = (ci * g.kt + kt) * g.kf + kf;
                let dst = &mut col[row * n..(row + 1) * n];
                for t in 0..g.t_out {
                    let src = ((b * g.c_in + ci) * g.t_in + t + kt) * g.f_in + kf;
                    let d = &mut dst[t * g.f_out..(t + 1) * g.f_out];
                    for (fo, v) in d.iter_mut().enumerate() {
                        *v = x[src + fo * g.stride];
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeom, b: usize, dx: &mut [f64]) {
    let n = g.t_out * g.f_out;
    for ci in 0..g.c_in {
        for kt in 0..g.kt {
            for kf in 0..g.kf {
                let row = (ci * g.kt + kt) * g.kf + kf;
                let src = &col[row * n..(row + 1) * n];
                for t in 0..g.t_out {
                    let dst = ((b * g.c_in + ci) * g.t_in + t + kt) * g.f_in + kf;
                    for (fo, v) in src[t * g.f_out..(t + 1) * g.f_out].iter().enumerate() {
                        dx[dst + fo * g.stride] += v;
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Cross-correlation of `[b, c_in, t, f]` with `[c_out, c_in, kt, kf]`,
    /// stride 1 along time and `stride` along frequency, no padding.
    /// Output is `[b, c_out, t - kt + 1, (f - kf) / stride + 1]`.
    pub fn conv2d(self, weight: Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        if x.rank() != 4 || w.rank() != 4 || x.shape()[1] != w.shape()[1] || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d: input {:?}, weight {:?}, stride {}",
                x.shape(),
                w.shape(),
                stride
            )));
        }
        let (kt, kf) = (w.shape()[2], w.shape()[3]);
        let (t_in, f_in) = (x.shape()[2], x.shape()[3]);
        if t_in < kt || f_in < kf {
            return Err(Error::shape(format!(
                "conv2d: input {}x{} smaller than kernel {}x{}",
                t_in, f_in, kt, kf
            )));
        }
        let g = ConvGeom {
            batch: x.shape()[0],
            c_in: x.shape()[1],
            c_out: w.shape()[0],
            t_in,
            f_in,
            kt,
            kf,
            stride,
            t_out: t_in - kt + 1,
            f_out: (f_in - kf) / stride + 1,
        };
        let k = g.c_in * g.kt * g.kf;
        let n = g.t_out * g.f_out;
        let mut out = vec![0.0; g.batch * g.c_out * n];
        let mut col = vec![0.0; k * n];
        for b in 0..g.batch {
            im2col(x.data(), &g, b, &mut col);
            let o = &mut out[b * g.c_out * n..(b + 1) * g.c_out * n];
            gemm(g.c_out, k, n, w.data(), false, &col, false, o, false);
        }
        let out = Tensor::new(&[g.batch, g.c_out, g.t_out, g.f_out], out)?;
        Ok(self.tape.push_op(out, &[self, weight], move |grad, need| {
            let mut col = vec![0.0; k * n];
            let mut dcol = vec![0.0; k * n];
            let mut dx = need[0].then(|| vec![0.0; x.numel()]);
            let mut dw = need[1].then(|| vec![0.0; w.numel()]);
            for b in 0..g.batch {
                let gb = &grad.data()[b * g.c_out * n..(b + 1) * g.c_out * n];
                if let Some(dw) = dw.as_mut() {
                    im2col(x.data(), &g, b, &mut col);
                    gemm(g.c_out, n, k, gb, false, &col, true, dw, true);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(k, g.c_out, n, w.data(), true, gb, false, &mut dcol, false);
                    col2im_add(&dcol, &g, b, dx);
                }
            }
            vec![
                dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
                dw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
            ]
        }))
    }

    /// Transposed filtering along frequency combined with an ordinary valid
    /// correlation along time. Input `[b, c_in, t, f]`, weight
    /// `[c_in, c_out, kt, kf]`; output `[b, c_out, t - kt + 1, (f - 1) * stride + kf]`
    /// where `out[.., t, g * stride + j] += w[.., kt, j] * in[.., t + kt, g]`.
    pub fn conv_transpose_freq(self, weight: Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        if x.rank() != 4 || w.rank() != 4 || x.shape()[1] != w.shape()[0] || stride == 0 {
            return Err(Error::shape(format!(
                "conv_transpose_freq: input {:?}, weight {:?}, stride {}",
                x.shape(),
                w.shape(),
                stride
            )));
        }
        let (batch, c_in, t_in, f_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (c_out, kt, kf) = (w.shape()[1], w.shape()[2], w.shape()[3]);
        if t_in < kt || f_in == 0 {
            return Err(Error::shape(format!(
                "conv_transpose_freq: {} frames for a {}-frame kernel",
                t_in, kt
            )));
        }
        let t_out = t_in - kt + 1;
        let f_out = (f_in - 1) * stride + kf;
        let k2 = c_out * kt * kf;
        let n_in = t_in * f_in;
        let mut out = vec![0.0; batch * c_out * t_out * f_out];
        let mut cols = vec![0.0; k2 * n_in];
        for b in 0..batch {
            let xb = &x.data()[b * c_in * n_in..(b + 1) * c_in * n_in];
            gemm(k2, c_in, n_in, w.data(), true, xb, false, &mut cols, false);
            for co in 0..c_out {
                for dt in 0..kt {
                    for j in 0..kf {
                        let row = (co * kt + dt) * kf + j;
                        for t in 0..t_out {
                            let src = &cols[row * n_in + (t + dt) * f_in..][..f_in];
                            let dst = ((b * c_out + co) * t_out + t) * f_out + j;
                            for (gi, v) in src.iter().enumerate() {
                                out[dst + gi * stride] += v;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[batch, c_out, t_out, f_out], out)?;
        Ok(self.tape.push_op(out, &[self, weight], move |grad, need| {
            let mut dcols = vec![0.0; k2 * n_in];
            let mut dx = need[0].then(|| vec![0.0; x.numel()]);
            let mut dw = need[1].then(|| vec![0.0; w.numel()]);
            for b in 0..batch {
                dcols.fill(0.0);
                for co in 0..c_out {
                    for dt in 0..kt {
                        for j in 0..kf {
                            let row = (co * kt + dt) * kf + j;
                            for t in 0..t_out {
                                let src = ((b * c_out + co) * t_out + t) * f_out + j;
                                let dst = &mut dcols[row * n_in + (t + dt) * f_in..][..f_in];
                                for (gi, v) in dst.iter_mut().enumerate() {
                                    *v = grad.data()[src + gi * stride];
                                }
                            }
                        }
                    }
                }
                let xb = &x.data()[b * c_in * n_in..(b + 1) * c_in * n_in];
                if let Some(dx) = dx.as_mut() {
                    let d = &mut dx[b * c_in * n_in..(b + 1) * c_in * n_in];
                    gemm(c_in, k2, n_in, w.data(), false, &dcols, false, d, false);
                }
                if let Some(dw) = dw.as_mut() {
                    gemm(c_in, n_in, k2, xb, false, &dcols, true, dw, true);
                }
            }
            vec![
                dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
                dw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
            ]
        }))
    }
}

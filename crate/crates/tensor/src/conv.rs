//! Grouped 2D cross-correlation over `[C, H, W]` feature maps.

use rayon::prelude::*;

use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2d {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2d {
    /// Stride 1 with "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cg_in: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn geometry(input: &[usize], kernel: &[usize], bias: Option<&[usize]>, p: Conv2d) -> Result<Geometry> {
    if input.len() != 3 {
        return Err(invalid("conv2d", format!("input must be [C,H,W], got {input:?}")));
    }
    if kernel.len() != 4 {
        return Err(invalid("conv2d", format!("kernel must be [O,C/g,kh,kw], got {kernel:?}")));
    }
    if p.groups == 0 || p.stride == 0 {
        return Err(invalid("conv2d", "groups and stride must be positive"));
    }
    let (c_in, h, w) = (input[0], input[1], input[2]);
    let (c_out, cg_in, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
    if c_in % p.groups != 0 || c_out % p.groups != 0 {
        return Err(invalid(
            "conv2d",
            format!("groups {} must divide C_in {} and C_out {}", p.groups, c_in, c_out),
        ));
    }
    if cg_in != c_in / p.groups {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![c_out, c_in / p.groups, kh, kw],
            got: kernel.to_vec(),
        });
    }
    if let Some(b) = bias {
        if b != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                expected: vec![c_out],
                got: b.to_vec(),
            });
        }
    }
    if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
        return Err(invalid("conv2d", "kernel larger than padded input"));
    }
    Ok(Geometry {
        c_in,
        h,
        w,
        c_out,
        cg_in,
        cg_out: c_out / p.groups,
        kh,
        kw,
        oh: (h + 2 * p.padding - kh) / p.stride + 1,
        ow: (w + 2 * p.padding - kw) / p.stride + 1,
        stride: p.stride,
        pad: p.padding,
    })
}

/// Valid output column range `[lo, hi)` for kernel offset `k` along one axis.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < in_len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn forward_raw(x: &[f64], k: &[f64], b: Option<&[f64]>, g: Geometry) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, out_plane)| {
        if let Some(b) = b {
            out_plane.iter_mut().for_each(|v| *v = b[o]);
        }
        let group = o / g.cg_out;
        for cl in 0..g.cg_in {
            let c = group * g.cg_in + cl;
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = k[((o * g.cg_in + cl) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut out_plane[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            for (ov, xv) in orow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..]) {
                                *ov += wv * xv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn grad_input_raw(gout: &[f64], k: &[f64], g: Geometry) -> Vec<f64> {
    let plane = g.h * g.w;
    let mut gx = vec![0.0; g.c_in * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(c, gplane)| {
        let group = c / g.cg_in;
        let cl = c % g.cg_in;
        for ol in 0..g.cg_out {
            let o = group * g.cg_out + ol;
            let go = &gout[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = k[((o * g.cg_in + cl) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &mut gplane[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            for (xv, gv) in xrow[ix0..].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                *xv += wv * gv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                xrow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

fn grad_kernel_raw(gout: &[f64], x: &[f64], g: Geometry) -> Vec<f64> {
    let per_out = g.cg_in * g.kh * g.kw;
    let mut gk = vec![0.0; g.c_out * per_out];
    gk.par_chunks_mut(per_out).enumerate().for_each(|(o, gko)| {
        let group = o / g.cg_out;
        let go = &gout[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
        for cl in 0..g.cg_in {
            let c = group * g.cg_in + cl;
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            acc += dot(&grow[ox_lo..ox_hi], &xrow[ix0..ix0 + ox_hi - ox_lo]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                acc += grow[ox] * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    gko[(cl * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });
    gk
}

/// Plain (non-recorded) convolution.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, p: Conv2d) -> Result<Tensor> {
    let g = geometry(input.shape(), kernel.shape(), bias.map(|b| b.shape()), p)?;
    let out = forward_raw(input.data(), kernel.data(), bias.map(|b| b.data()), g);
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

impl<'t> Var<'t> {
    pub fn try_conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, p: Conv2d) -> Result<Var<'t>> {
        let g = geometry(
            &self.shape(),
            &kernel.shape(),
            bias.map(|b| b.shape()).as_deref(),
            p,
        )?;
        let value = self.with_value(|x| {
            kernel.with_value(|k| match bias {
                Some(b) => b.with_value(|b| forward_raw(x.data(), k.data(), Some(b.data()), g)),
                None => forward_raw(x.data(), k.data(), None, g),
            })
        });
        let value = Tensor::new(vec![g.c_out, g.oh, g.ow], value)?;
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().custom(
            &parents,
            value,
            Box::new(move |gout, p, _| {
                let gx = grad_input_raw(gout.data(), p[1].data(), g);
                let gk = grad_kernel_raw(gout.data(), p[0].data(), g);
                let mut grads = vec![
                    Some(Tensor::new(p[0].shape(), gx).unwrap()),
                    Some(Tensor::new(p[1].shape(), gk).unwrap()),
                ];
                if has_bias {
                    let plane = g.oh * g.ow;
                    let gb = gout.data().chunks(plane).map(|c| c.iter().sum()).collect();
                    grads.push(Some(Tensor::from_vec(gb)));
                }
                grads
            }),
        ))
    }

    /// Panics on invalid shapes; see [`Var::try_conv2d`].
    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, p: Conv2d) -> Var<'t> {
        self.try_conv2d(kernel, bias, p).unwrap_or_else(|e| panic!("{e}"))
    }
}

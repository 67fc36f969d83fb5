//! Differentiable spectral operations. Complex multichannel spectra are
//! stored as `[2M, T, F]` tensors: real parts in channels `0..M`, imaginary
//! parts in `M..2M`.

use std::ops::Range;

use num_complex::Complex64;
use vmbeam_core::beamformer::{block_ranges, needs_loading, Backend, LOADING};
use vmbeam_core::fft::RealFft;
use vmbeam_core::{istft, sqrt_hann, Spectrogram, StftConfig};
use vmbeam_tensor::{Tensor, Var};

use crate::error::{shape, ModelError, Result};

pub fn spec_to_tensor(s: &Spectrogram) -> Tensor {
    let mut data = Vec::with_capacity(2 * s.re.len());
    data.extend_from_slice(&s.re);
    data.extend_from_slice(&s.im);
    Tensor::new(vec![2 * s.channels, s.frames, s.bins], data).expect("spectrogram planes are consistent")
}

pub fn tensor_to_spec(t: &Tensor, cfg: StftConfig) -> Result<Spectrogram> {
    let sh = t.shape();
    if sh.len() != 3 || sh[0] % 2 != 0 || sh[2] != cfg.bins() {
        return Err(shape("tensor_to_spec", format!("{sh:?} is not [2M, T, {}]", cfg.bins())));
    }
    let half = t.len() / 2;
    let mut s = Spectrogram::zeros(sh[0] / 2, sh[1], cfg);
    s.re.copy_from_slice(&t.data()[..half]);
    s.im.copy_from_slice(&t.data()[half..]);
    Ok(s)
}

/// Number of complex channels of a `[2M, T, F]` tensor.
pub fn complex_channels(v: Var<'_>) -> usize {
    v.shape()[0] / 2
}

pub fn re<'t>(v: Var<'t>) -> Var<'t> {
    let m = complex_channels(v);
    v.slice(0, 0, m)
}

pub fn im<'t>(v: Var<'t>) -> Var<'t> {
    let m = complex_channels(v);
    v.slice(0, m, 2 * m)
}

/// Joins real and imaginary parts of equal shape into `[2M, ...]`.
pub fn complex<'t>(re: Var<'t>, im: Var<'t>) -> Var<'t> {
    Var::concat(&[re, im], 0)
}

/// Selects complex channels `idx` of a `[2M, T, F]` tensor.
pub fn select_channels<'t>(v: Var<'t>, idx: &[usize]) -> Var<'t> {
    let m = complex_channels(v);
    let parts: Vec<Var<'t>> = idx
        .iter()
        .map(|&c| v.slice(0, c, c + 1))
        .chain(idx.iter().map(|&c| v.slice(0, m + c, m + c + 1)))
        .collect();
    Var::concat(&parts, 0)
}

/// Stacks complex channels of several `[2M_i, T, F]` tensors.
pub fn concat_channels<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let mut all: Vec<Var<'t>> = parts.iter().map(|&p| re(p)).collect();
    all.extend(parts.iter().map(|&p| im(p)));
    Var::concat(&all, 0)
}

/// `sqrt(re² + im² + eps)` per complex element, `[M, T, F]`.
pub fn magnitude<'t>(v: Var<'t>, eps: f64) -> Var<'t> {
    (re(v).square() + im(v).square()).add_scalar(eps).sqrt()
}

/// Multiplies every complex channel by a real `[1, T, F]` mask.
pub fn apply_mask<'t>(v: Var<'t>, mask: Var<'t>) -> Var<'t> {
    v.mul(mask.expand(&v.shape()))
}

/// Overlap-add synthesis of a `[2M, T, F]` spectrum into `[M, L]` samples.
/// The backward pass is the exact adjoint of the linear synthesis map.
pub fn istft_var<'t>(spec: Var<'t>, cfg: StftConfig) -> Result<Var<'t>> {
    let value = spec.with_value(|t| tensor_to_spec(t, cfg))?;
    let (m, frames, bins) = (value.channels, value.frames, value.bins);
    let wave = istft(&value, &cfg)?;
    let len = cfg.synthesis_len(frames);
    let out = Tensor::new(vec![m, len], wave.into_iter().flatten().collect())?;
    let window = sqrt_hann(cfg.win_len);
    let fft = RealFft::new(cfg.fft_len);
    let n = cfg.fft_len;
    Ok(spec.tape().custom(
        &[spec],
        out,
        Box::new(move |g, _, _| {
            let gd = g.data();
            let plane = frames * bins;
            let mut grad = vec![0.0; 2 * m * plane];
            let mut seg = vec![0.0; cfg.win_len];
            for c in 0..m {
                for t in 0..frames {
                    let base = c * len + t * cfg.hop;
                    for (i, s) in seg.iter_mut().enumerate() {
                        *s = gd[base + i] * window[i];
                    }
                    let spec = fft.forward(&seg);
                    let off = c * plane + t * bins;
                    for (k, z) in spec.iter().enumerate() {
                        let edge = k == 0 || (n % 2 == 0 && k == n / 2);
                        let w = if edge { 1.0 } else { 2.0 } / n as f64;
                        grad[off + k] = w * z.re;
                        grad[m * plane + off + k] = if edge { 0.0 } else { w * z.im };
                    }
                }
            }
            vec![Some(Tensor::new(vec![2 * m, frames, bins], grad).unwrap())]
        }),
    ))
}

/// Per-bin SCMs `(1/|b|) Σ_t v v^H` of one block, as `([F,M,M], [F,M,M])`.
fn block_scm<'t>(v: Var<'t>) -> (Var<'t>, Var<'t>) {
    let frames = v.shape()[1] as f64;
    let vr = re(v).permute(&[2, 0, 1]);
    let vi = im(v).permute(&[2, 0, 1]);
    let vr_t = vr.permute(&[0, 2, 1]);
    let vi_t = vi.permute(&[0, 2, 1]);
    let real = (vr.bmm(vr_t) + vi.bmm(vi_t)).scale(1.0 / frames);
    let imag = (vi.bmm(vr_t) - vr.bmm(vi_t)).scale(1.0 / frames);
    (real, imag)
}

fn identity_batch(bins: usize, m: usize, per_bin: &[f64]) -> Tensor {
    Tensor::from_fn(vec![bins, m, m], |i| {
        let (f, r) = (i / (m * m), i % (m * m));
        if r / m == r % m {
            per_bin[f]
        } else {
            0.0
        }
    })
}

/// Sum of diagonals of `[F, M, M]`, shaped `[F, 1, 1]`.
fn trace<'t>(a: Var<'t>) -> Var<'t> {
    let sh = a.shape();
    let eye = a.tape().constant(identity_batch(sh[0], sh[1], &vec![1.0; sh[0]]));
    a.mul(eye).sum_axis(2).sum_axis(1).reshape(&[sh[0], 1, 1])
}

/// Real embedding `[[Ar, -Ai], [Ai, Ar]]` of a complex `[F, M, M]` batch.
fn embed<'t>(ar: Var<'t>, ai: Var<'t>) -> Var<'t> {
    let top = Var::concat(&[ar, ai.neg()], 2);
    let bottom = Var::concat(&[ai, ar], 2);
    Var::concat(&[top, bottom], 1)
}

fn complex_values(ar: &Tensor, ai: &Tensor, f: usize, m: usize) -> Vec<Complex64> {
    let off = f * m * m;
    (0..m * m)
        .map(|i| Complex64::new(ar.data()[off + i], ai.data()[off + i]))
        .collect()
}

/// Adds the same conditional diagonal loading as the closed-form
/// beamformer; bins with zero trace are replaced by the identity and
/// flagged so their weights can be zeroed.
fn load<'t>(ar: Var<'t>, ai: Var<'t>) -> (Var<'t>, Vec<bool>) {
    let sh = ar.shape();
    let (bins, m) = (sh[0], sh[1]);
    let (needs, zero): (Vec<f64>, Vec<bool>) = ar.with_value(|r| {
        ai.with_value(|i| {
            (0..bins)
                .map(|f| {
                    let a = complex_values(r, i, f, m);
                    let tr: f64 = (0..m).map(|k| a[k * m + k].re).sum();
                    (if needs_loading(&a, m) { 1.0 } else { 0.0 }, tr == 0.0)
                })
                .unzip()
        })
    });
    let tape = ar.tape();
    let delta = trace(ar).scale(LOADING / m as f64).expand(&[bins, m, m]);
    let mask = tape.constant(identity_batch(bins, m, &needs));
    let fill: Vec<f64> = zero.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect();
    let fill = tape.constant(identity_batch(bins, m, &fill));
    (ar + delta.mul(mask) + fill, zero)
}

fn block_weights<'t>(
    target: Var<'t>,
    noise: Var<'t>,
    ref_channel: usize,
    backend: Backend,
    block: usize,
) -> Result<(Var<'t>, Var<'t>)> {
    let (xr, xi) = block_scm(target);
    let (nr, ni) = block_scm(noise);
    let sh = xr.shape();
    let (bins, m) = (sh[0], sh[1]);
    let tape = target.tape();
    match backend {
        Backend::Mcwf => {
            let (ar, ai) = (xr + nr, xi + ni);
            let (ar, zero) = load(ar, ai);
            let keep: Vec<f64> = zero
                .iter()
                .flat_map(|&z| std::iter::repeat(if z { 0.0 } else { 1.0 }).take(2 * m))
                .collect();
            let keep = tape.constant(Tensor::new(vec![bins, 2 * m, 1], keep)?);
            let rhs = Var::concat(&[xr.slice(2, ref_channel, ref_channel + 1), xi.slice(2, ref_channel, ref_channel + 1)], 1);
            let w = embed(ar, ai).solve(rhs.mul(keep))?;
            Ok((w.slice(1, 0, m), w.slice(1, m, 2 * m)))
        }
        Backend::MvdrSouden => {
            let (lr, zero) = load(nr, ni);
            if let Some(f) = zero.iter().position(|&z| z) {
                return Err(vmbeam_core::CoreError::Singular { block, bin: f }.into());
            }
            let z = embed(lr, ni).solve(Var::concat(&[xr, xi], 1))?;
            let (zr, zi) = (z.slice(1, 0, m), z.slice(1, m, 2 * m));
            let (tr, ti) = (trace(zr), trace(zi));
            let small = tr.with_value(|a| ti.with_value(|b| a.data().iter().zip(b.data()).position(|(x, y)| !(x.hypot(*y) > 0.0))));
            if let Some(f) = small {
                return Err(vmbeam_core::CoreError::ZeroTrace { block, bin: f }.into());
            }
            let (cr, ci) = (zr.slice(2, ref_channel, ref_channel + 1), zi.slice(2, ref_channel, ref_channel + 1));
            let tr = tr.expand(&[bins, m, 1]);
            let ti = ti.expand(&[bins, m, 1]);
            let den = tr.square() + ti.square();
            let wr = (cr * tr + ci * ti).div(den);
            let wi = (ci * tr - cr * ti).div(den);
            Ok((wr, wi))
        }
    }
}

/// `w^H y` for weights `[F, M, 1]` over a `[2M, Tb, F]` block, giving `[2, Tb, F]`.
fn apply_block<'t>(wr: Var<'t>, wi: Var<'t>, y: Var<'t>) -> Var<'t> {
    let sh = y.shape();
    let (m, frames, bins) = (sh[0] / 2, sh[1], sh[2]);
    let spread = |w: Var<'t>| w.reshape(&[bins, m]).permute(&[1, 0]).reshape(&[m, 1, bins]).expand(&[m, frames, bins]);
    let (wr, wi) = (spread(wr), spread(wi));
    let (yr, yi) = (re(y), im(y));
    let out_re = (wr * yr + wi * yi).sum_axis(0).reshape(&[1, frames, bins]);
    let out_im = (wr * yi - wi * yr).sum_axis(0).reshape(&[1, frames, bins]);
    Var::concat(&[out_re, out_im], 0)
}

/// Differentiable block-wise beamformer over `[2M, T, F]` spectra; the
/// result is the single-channel `[2, T, F]` output spectrum.
pub fn beamform_var<'t>(
    y: Var<'t>,
    target: Var<'t>,
    noise: Var<'t>,
    block_len: usize,
    ref_channel: usize,
    backend: Backend,
) -> Result<Var<'t>> {
    let sh = y.shape();
    if target.shape() != sh || noise.shape() != sh || sh.len() != 3 || sh[0] % 2 != 0 {
        return Err(shape("beamform_var", format!("{sh:?} vs {:?} / {:?}", target.shape(), noise.shape())));
    }
    if ref_channel >= sh[0] / 2 {
        return Err(ModelError::Config(format!("reference {ref_channel} of {} channels", sh[0] / 2)));
    }
    if block_len == 0 || sh[1] == 0 {
        return Err(ModelError::Config("beamform_var needs frames and a positive block length".into()));
    }
    let blocks: Vec<Range<usize>> = block_ranges(sh[1], block_len);
    let mut outs = Vec::with_capacity(blocks.len());
    for (b, r) in blocks.iter().enumerate() {
        let cut = |v: Var<'t>| v.slice(1, r.start, r.end);
        let (wr, wi) = block_weights(cut(target), cut(noise), ref_channel, backend, b)?;
        outs.push(apply_block(wr, wi, cut(y)));
    }
    Ok(Var::concat(&outs, 1))
}

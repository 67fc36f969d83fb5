//! Block-wise spatial covariance estimation and closed-form MCWF and Souden
//! MVDR beamformers.

use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape, CoreError, Result};
use crate::scene::AudioScene;
use crate::stft::{stft, Spectrogram, StftConfig};

pub const DEFAULT_BLOCK_LEN: usize = 25;
/// Relative diagonal loading, scaled by `trace / M`.
pub const LOADING: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mcwf,
    MvdrSouden,
}

/// Non-overlapping blocks tiling `[0, frames)`; the last may be shorter.
pub fn block_ranges(frames: usize, block_len: usize) -> Vec<Range<usize>> {
    assert!(block_len > 0, "block_len must be positive");
    (0..frames)
        .step_by(block_len)
        .map(|s| s..(s + block_len).min(frames))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockScm {
    pub frames: Range<usize>,
    /// `F x M x M`, row-major per bin.
    pub target: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockScmSet {
    pub channels: usize,
    pub bins: usize,
    pub block_len: usize,
    pub blocks: Vec<BlockScm>,
}

impl BlockScmSet {
    pub fn matrix<'a>(&self, data: &'a [Complex64], f: usize) -> &'a [Complex64] {
        let mm = self.channels * self.channels;
        &data[f * mm..(f + 1) * mm]
    }
}

fn block_scm(spec: &Spectrogram, frames: &Range<usize>) -> Vec<Complex64> {
    let (m, nb) = (spec.channels, spec.bins);
    let mut out = vec![ZERO; nb * m * m];
    let scale = 1.0 / frames.len() as f64;
    let mut v = vec![ZERO; m];
    for t in frames.clone() {
        for f in 0..nb {
            for (c, vc) in v.iter_mut().enumerate() {
                *vc = spec.get(c, t, f);
            }
            let dst = &mut out[f * m * m..(f + 1) * m * m];
            for i in 0..m {
                for j in i..m {
                    dst[i * m + j] += v[i] * v[j].conj();
                }
            }
        }
    }
    for f in 0..nb {
        let dst = &mut out[f * m * m..(f + 1) * m * m];
        for i in 0..m {
            dst[i * m + i].im = 0.0;
            for j in i..m {
                dst[i * m + j] *= scale;
                dst[j * m + i] = dst[i * m + j].conj();
            }
        }
    }
    out
}

/// Per-block SCMs `(1/|b|) Σ_t v v^H` of the target and noise spectrograms.
pub fn estimate_block_scms(target: &Spectrogram, noise: &Spectrogram, block_len: usize) -> Result<BlockScmSet> {
    if !target.same_layout(noise) {
        return Err(shape("estimate_block_scms", "target and noise layouts differ"));
    }
    if block_len == 0 || target.frames == 0 || target.channels == 0 {
        return Err(CoreError::Empty("estimate_block_scms"));
    }
    let blocks = block_ranges(target.frames, block_len)
        .into_iter()
        .map(|r| BlockScm {
            target: block_scm(target, &r),
            noise: block_scm(noise, &r),
            frames: r,
        })
        .collect();
    Ok(BlockScmSet {
        channels: target.channels,
        bins: target.bins,
        block_len,
        blocks,
    })
}

/// Cholesky factor of a Hermitian matrix; `None` unless every pivot exceeds `min_pivot`.
fn cholesky(a: &[Complex64], n: usize, min_pivot: f64) -> Option<Vec<Complex64>> {
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > min_pivot) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut x = b.to_vec();
    for c in 0..k {
        for i in 0..n {
            let mut s = x[i * k + c];
            for j in 0..i {
                s -= l[i * n + j] * x[j * k + c];
            }
            x[i * k + c] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i * k + c];
            for j in i + 1..n {
                s -= l[j * n + i].conj() * x[j * k + c];
            }
            x[i * k + c] = s / l[i * n + i];
        }
    }
    x
}

fn lu_solve(a: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Option<Vec<Complex64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i * n + col].norm().total_cmp(&m[j * n + col].norm()))?;
        let pv = m[p * n + col];
        if pv.norm() == 0.0 || !pv.norm().is_finite() {
            return None;
        }
        if p != col {
            for j in 0..n {
                m.swap(p * n + j, col * n + j);
            }
            for c in 0..k {
                x.swap(p * k + c, col * k + c);
            }
        }
        for r in col + 1..n {
            let f = m[r * n + col] / pv;
            for j in col..n {
                let v = m[col * n + j];
                m[r * n + j] -= f * v;
            }
            for c in 0..k {
                let v = x[col * k + c];
                x[r * k + c] -= f * v;
            }
        }
    }
    for c in 0..k {
        for i in (0..n).rev() {
            let mut s = x[i * k + c];
            for j in i + 1..n {
                s -= m[i * n + j] * x[j * k + c];
            }
            x[i * k + c] = s / m[i * n + i];
        }
    }
    Some(x)
}

/// Solves `A X = B` for Hermitian PSD `A` (`n x n`) and `B` (`n x k`).
/// Diagonal loading `LOADING · tr(A)/n` is added only when the unloaded
/// Cholesky factorization fails or has a pivot below that level. Returns
/// `None` when even the loaded system cannot be solved or `tr(A) = 0`.
pub fn hermitian_solve(a: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Option<Vec<Complex64>> {
    let tr: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    if !(tr > 0.0) || !tr.is_finite() {
        return None;
    }
    let delta = LOADING * tr / n as f64;
    if let Some(l) = cholesky(a, n, delta) {
        return Some(cholesky_solve(&l, n, b, k));
    }
    let mut loaded = a.to_vec();
    for i in 0..n {
        loaded[i * n + i] += delta;
    }
    match cholesky(&loaded, n, 0.0) {
        Some(l) => Some(cholesky_solve(&l, n, b, k)),
        None => lu_solve(&loaded, n, b, k),
    }
}

/// Whether [`hermitian_solve`] would add diagonal loading to `a`.
pub fn needs_loading(a: &[Complex64], n: usize) -> bool {
    let tr: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    if !(tr > 0.0) || !tr.is_finite() {
        return true;
    }
    cholesky(a, n, LOADING * tr / n as f64).is_none()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    pub backend: Backend,
    pub ref_channel: usize,
    pub channels: usize,
    pub bins: usize,
    /// Per block: frame range and `F x M` weights.
    pub blocks: Vec<(Range<usize>, Vec<Complex64>)>,
}

fn check_ref(scms: &BlockScmSet, ref_channel: usize) -> Result<()> {
    if ref_channel >= scms.channels {
        return Err(shape("beam weights", format!("reference {ref_channel} of {} channels", scms.channels)));
    }
    Ok(())
}

/// Full-rank multichannel Wiener filter `(Φx + Φn)^{-1} Φx e_ref`. A bin whose
/// total SCM has zero trace gets zero weights.
pub fn mcwf_weights(scms: &BlockScmSet, ref_channel: usize) -> Result<BeamWeights> {
    check_ref(scms, ref_channel)?;
    let m = scms.channels;
    let mut blocks = Vec::with_capacity(scms.blocks.len());
    for (bi, b) in scms.blocks.iter().enumerate() {
        let mut w = vec![ZERO; scms.bins * m];
        for f in 0..scms.bins {
            let px = scms.matrix(&b.target, f);
            let pn = scms.matrix(&b.noise, f);
            let a: Vec<Complex64> = px.iter().zip(pn).map(|(x, n)| x + n).collect();
            let tr: f64 = (0..m).map(|i| a[i * m + i].re).sum();
            if tr == 0.0 {
                continue;
            }
            let rhs: Vec<Complex64> = (0..m).map(|i| px[i * m + ref_channel]).collect();
            let sol = hermitian_solve(&a, m, &rhs, 1).ok_or(CoreError::Singular { block: bi, bin: f })?;
            w[f * m..(f + 1) * m].copy_from_slice(&sol);
        }
        blocks.push((b.frames.clone(), w));
    }
    Ok(BeamWeights {
        backend: Backend::Mcwf,
        ref_channel,
        channels: m,
        bins: scms.bins,
        blocks,
    })
}

/// Souden MVDR `Φn^{-1} Φx e_ref / tr(Φn^{-1} Φx)`.
pub fn mvdr_souden_weights(scms: &BlockScmSet, ref_channel: usize) -> Result<BeamWeights> {
    check_ref(scms, ref_channel)?;
    let m = scms.channels;
    let mut blocks = Vec::with_capacity(scms.blocks.len());
    for (bi, b) in scms.blocks.iter().enumerate() {
        let mut w = vec![ZERO; scms.bins * m];
        for f in 0..scms.bins {
            let px = scms.matrix(&b.target, f);
            let pn = scms.matrix(&b.noise, f);
            let x = hermitian_solve(pn, m, px, m).ok_or(CoreError::Singular { block: bi, bin: f })?;
            let tr: Complex64 = (0..m).map(|i| x[i * m + i]).sum();
            if !(tr.norm() > 0.0) || !tr.norm().is_finite() {
                return Err(CoreError::ZeroTrace { block: bi, bin: f });
            }
            for i in 0..m {
                w[f * m + i] = x[i * m + ref_channel] / tr;
            }
        }
        blocks.push((b.frames.clone(), w));
    }
    Ok(BeamWeights {
        backend: Backend::MvdrSouden,
        ref_channel,
        channels: m,
        bins: scms.bins,
        blocks,
    })
}

pub fn compute_weights(scms: &BlockScmSet, ref_channel: usize, backend: Backend) -> Result<BeamWeights> {
    match backend {
        Backend::Mcwf => mcwf_weights(scms, ref_channel),
        Backend::MvdrSouden => mvdr_souden_weights(scms, ref_channel),
    }
}

/// `w^H y` per block, bin and frame; returns a single-channel spectrogram.
pub fn apply_weights(w: &BeamWeights, y: &Spectrogram) -> Result<Spectrogram> {
    if y.channels != w.channels || y.bins != w.bins {
        return Err(shape("apply_weights", format!("weights {}x{} vs input {}x{}", w.channels, w.bins, y.channels, y.bins)));
    }
    let covered = w.blocks.last().map_or(0, |b| b.0.end);
    let tiled = w.blocks.iter().scan(0, |next, (r, _)| {
        let ok = r.start == *next;
        *next = r.end;
        Some(ok)
    });
    if covered != y.frames || !tiled.into_iter().all(|ok| ok) {
        return Err(shape("apply_weights", format!("blocks cover {covered} frames, input has {}", y.frames)));
    }
    let m = w.channels;
    let mut out = Spectrogram::zeros(1, y.frames, y.config);
    for (r, wb) in &w.blocks {
        for t in r.clone() {
            for f in 0..y.bins {
                let mut acc = ZERO;
                for c in 0..m {
                    acc += wb[f * m + c].conj() * y.get(c, t, f);
                }
                out.set(0, t, f, acc);
            }
        }
    }
    Ok(out)
}

/// Selector weights `e_ref` for every block and bin.
pub fn selector_weights(channels: usize, bins: usize, frames: usize, block_len: usize, ref_channel: usize) -> BeamWeights {
    let mut w = vec![ZERO; bins * channels];
    for f in 0..bins {
        w[f * channels + ref_channel] = Complex64::new(1.0, 0.0);
    }
    BeamWeights {
        backend: Backend::Mcwf,
        ref_channel,
        channels,
        bins,
        blocks: block_ranges(frames, block_len).into_iter().map(|r| (r, w.clone())).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    Exact,
    MagMask,
}

/// Ideal ratio mask `|X| / (|X| + |V|)` of single-channel spectra (`T x F`).
pub fn ratio_mask(x: &Spectrogram, v: &Spectrogram) -> Vec<f64> {
    (0..x.frames * x.bins)
        .map(|i| {
            let a = x.re[i].hypot(x.im[i]);
            let b = v.re[i].hypot(v.im[i]);
            if a + b > 0.0 {
                a / (a + b)
            } else {
                0.0
            }
        })
        .collect()
}

/// Splits `y` into `(mask·Y, (1 − mask)·Y)` using one `T x F` mask for all channels.
pub fn split_by_mask(y: &Spectrogram, mask: &[f64]) -> (Spectrogram, Spectrogram) {
    let plane = y.frames * y.bins;
    assert_eq!(mask.len(), plane);
    let mut tgt = y.clone();
    let mut noi = y.clone();
    for m in 0..y.channels {
        for (i, &g) in mask.iter().enumerate() {
            let k = m * plane + i;
            tgt.re[k] = g * y.re[k];
            tgt.im[k] = g * y.im[k];
            noi.re[k] = (1.0 - g) * y.re[k];
            noi.im[k] = (1.0 - g) * y.im[k];
        }
    }
    (tgt, noi)
}

fn add_waves(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect()).collect()
}

/// Oracle stand-in for a multichannel enhancement model. `Exact` returns the
/// STFTs of `x` and `x_rev + n`; `MagMask` applies the reference-channel
/// ideal ratio mask to every channel of `Y`.
pub fn oracle_mcse(scene: &AudioScene, mode: OracleMode, cfg: &StftConfig) -> Result<(Spectrogram, Spectrogram)> {
    let xs = stft(&scene.x, cfg)?;
    let vs = stft(&add_waves(&scene.x_rev, &scene.n), cfg)?;
    match mode {
        OracleMode::Exact => Ok((xs, vs)),
        OracleMode::MagMask => {
            let ys = stft(&scene.y, cfg)?;
            let r = [scene.ref_channel];
            let mask = ratio_mask(&xs.select_channels(&r)?, &vs.select_channels(&r)?);
            Ok(split_by_mask(&ys, &mask))
        }
    }
}

/// Estimates SCMs from `(target, noise)`, computes weights and applies them to `y`.
pub fn beamform(
    y: &Spectrogram,
    target: &Spectrogram,
    noise: &Spectrogram,
    block_len: usize,
    ref_channel: usize,
    backend: Backend,
) -> Result<Spectrogram> {
    let scms = estimate_block_scms(target, noise, block_len)?;
    let w = compute_weights(&scms, ref_channel, backend)?;
    apply_weights(&w, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tiling_60_by_25() {
        let r = block_ranges(60, 25);
        assert_eq!(r, vec![0..25, 25..50, 50..60]);
    }

    #[test]
    fn hermitian_solve_matches_lu() {
        let a = vec![c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)];
        let b = vec![c(1.0, 2.0), c(-1.0, 0.5)];
        let x = hermitian_solve(&a, 2, &b, 1).unwrap();
        let y = lu_solve(&a, 2, &b, 1).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).norm() < 1e-14);
        }
    }

    #[test]
    fn singular_gets_loaded() {
        let a = vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)];
        let b = vec![c(1.0, 0.0), c(1.0, 0.0)];
        let x = hermitian_solve(&a, 2, &b, 1).unwrap();
        assert!(x.iter().all(|v| v.norm().is_finite()));
        assert!(hermitian_solve(&[ZERO; 4], 2, &b, 1).is_none());
    }
}

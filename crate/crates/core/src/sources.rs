//! Bundled synthetic source material and optional WAV-directory pools.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::wav::read_wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Speech,
    Noise,
    Babble,
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in &mut x {
            *v /= rms;
        }
    }
    x
}

fn resonance(f: f64, center: f64, bw: f64) -> f64 {
    1.0 / (1.0 + ((f - center) / bw).powi(2))
}

/// Harmonic "syllables" with drifting pitch, two formant-like resonances and
/// silent gaps, normalized to unit RMS.
pub fn speech_like(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let base_f0 = rng.gen_range(90.0..240.0);
    let mut pos = rng.gen_range(0..(0.15 * fs) as usize);
    while pos < n {
        let len = rng.gen_range((0.10 * fs) as usize..(0.32 * fs) as usize);
        let f0 = base_f0 * rng.gen_range(0.85..1.15);
        let glide = rng.gen_range(-0.25..0.25);
        let f1 = rng.gen_range(300.0..900.0);
        let f2 = rng.gen_range(900.0..2500.0);
        let level = rng.gen_range(0.4..1.0);
        let nh = ((4000.0 / f0) as usize).max(1);
        let amps: Vec<f64> = (1..=nh)
            .map(|k| {
                let f = k as f64 * f0;
                (resonance(f, f1, 120.0) + 0.6 * resonance(f, f2, 200.0) + 0.05) / (k as f64).sqrt()
            })
            .collect();
        let end = (pos + len).min(n);
        let mut phase = 0.0;
        for (j, i) in (pos..end).enumerate() {
            let u = j as f64 / len as f64;
            let inst = f0 * (1.0 + glide * (u - 0.5));
            phase += 2.0 * PI * inst / fs;
            let env = (PI * u).sin().powi(2) * level;
            let mut s = 0.0;
            for (k, a) in amps.iter().enumerate() {
                s += a * ((k + 1) as f64 * phase).sin();
            }
            out[i] += env * s;
        }
        pos = end + rng.gen_range((0.04 * fs) as usize..(0.2 * fs) as usize);
    }
    for v in &mut out {
        *v += 1e-4 * rng.gen_range(-1.0..1.0);
    }
    normalize(out)
}

/// Coloured noise with a random resonance and slowly modulated bursts.
pub fn noise_burst(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fc = rng.gen_range(200.0..4000.0);
    let r: f64 = rng.gen_range(0.85..0.98);
    let theta = 2.0 * PI * fc / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let mix = rng.gen_range(0.2..0.8);
    let rate = rng.gen_range(0.3..3.0);
    let depth = rng.gen_range(0.0..0.9);
    let ph0 = rng.gen_range(0.0..2.0 * PI);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        let res = w + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = res;
        let env = 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * rate * i as f64 / fs + ph0).sin());
        out.push(env * (mix * res * (1.0 - r) + (1.0 - mix) * w));
    }
    normalize(out)
}

/// Sum of several independent talkers.
pub fn babble(seed: u64, n: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let talkers = rng.gen_range(4..=6);
    let mut out = vec![0.0; n];
    for _ in 0..talkers {
        let s = speech_like(rng.gen(), n, fs);
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    normalize(out)
}

pub fn synthesize(kind: SourceKind, seed: u64, n: usize, fs: f64) -> Vec<f64> {
    match kind {
        SourceKind::Speech => speech_like(seed, n, fs),
        SourceKind::Noise => noise_burst(seed, n, fs),
        SourceKind::Babble => babble(seed, n, fs),
    }
}

/// Loop-pads or truncates `x` to `n` samples.
pub fn fit_length(x: &[f64], n: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; n];
    }
    x.iter().copied().cycle().take(n).collect()
}

/// Where source waveforms come from.
#[derive(Debug, Clone, Default)]
pub enum SourceMaterial {
    #[default]
    Synthetic,
    /// Mono clips loaded from disk; a kind with an empty pool falls back to
    /// synthesis.
    Pool { speech: Vec<Vec<f64>>, noise: Vec<Vec<f64>> },
}

impl SourceMaterial {
    /// Loads every `.wav` under `speech_dir` and `noise_dir` (first channel).
    pub fn from_dirs(speech_dir: Option<&Path>, noise_dir: Option<&Path>) -> Result<Self> {
        let load = |dir: Option<&Path>| -> Result<Vec<Vec<f64>>> {
            let Some(dir) = dir else { return Ok(Vec::new()) };
            if !dir.is_dir() {
                return Err(CoreError::MissingFile(dir.to_path_buf()));
            }
            let mut paths: Vec<_> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| read_wav(p).map(|mut c| c.swap_remove(0)))
                .collect()
        };
        Ok(SourceMaterial::Pool {
            speech: load(speech_dir)?,
            noise: load(noise_dir)?,
        })
    }

    /// Waveform of `n` samples for a source of `kind` with `seed`.
    pub fn render(&self, kind: SourceKind, seed: u64, n: usize, fs: f64) -> Vec<f64> {
        let pool = match (self, kind) {
            (SourceMaterial::Pool { speech, .. }, SourceKind::Speech) => speech,
            (SourceMaterial::Pool { noise, .. }, _) => noise,
            (SourceMaterial::Synthetic, _) => return synthesize(kind, seed, n, fs),
        };
        if pool.is_empty() {
            return synthesize(kind, seed, n, fs);
        }
        let clip = &pool[(seed % pool.len() as u64) as usize];
        let offset = ((seed >> 20) % clip.len().max(1) as u64) as usize;
        let rotated: Vec<f64> = clip[offset..].iter().chain(&clip[..offset]).copied().collect();
        fit_length(&rotated, n)
    }
}

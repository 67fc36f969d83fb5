//! SI-SDR, SNR and STOI plus batch evaluation records.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape, CoreError, Result};
use crate::fft::RealFft;
use crate::scene::AudioScene;
use crate::stft::StftConfig;

/// Upper cap for SI-SDR and SNR, dB. Values are also floored at its negative.
pub const METRIC_CAP_DB: f64 = 60.0;
pub const CSV_HEADER: &str = "scene_id,config,si_sdr_db,snr_db,stoi,runtime_ms";

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn db_ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return METRIC_CAP_DB;
    }
    if num <= 0.0 {
        return -METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

/// Scale-invariant SDR of `est` against `reference`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(shape("si_sdr", format!("{} vs {} samples", est.len(), reference.len())));
    }
    let rr = dot(reference, reference);
    if !(rr > 0.0) {
        return Err(CoreError::ZeroReference);
    }
    let alpha = dot(est, reference) / rr;
    let err: f64 = est.iter().zip(reference).map(|(e, s)| (alpha * s - e).powi(2)).sum();
    Ok(db_ratio(alpha * alpha * rr, err))
}

/// Plain time-domain SNR of `est` against `reference`.
pub fn snr_metric(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(shape("snr_metric", format!("{} vs {} samples", est.len(), reference.len())));
    }
    let err: f64 = est.iter().zip(reference).map(|(e, s)| (s - e).powi(2)).sum();
    Ok(db_ratio(dot(reference, reference), err))
}

const STOI_FRAME: usize = 410;
const STOI_HOP: usize = 205;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

/// Symmetric Hann window without the zero endpoints.
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drops frames more than the dynamic range below the loudest clean frame
/// and overlap-adds the remaining frames back into signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = stoi_window(STOI_FRAME);
    let frames: Vec<usize> = frame_starts(x.len(), STOI_FRAME, STOI_HOP).collect();
    let energy: Vec<f64> = frames
        .iter()
        .map(|&s| {
            let e: f64 = (0..STOI_FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = frames
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if keep.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (keep.len() - 1) * STOI_HOP + STOI_FRAME;
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (k, &s) in keep.iter().enumerate() {
        let o = k * STOI_HOP;
        for i in 0..STOI_FRAME {
            xs[o + i] += w[i] * x[s + i];
            ys[o + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// One-third-octave band edges as `[lo, hi)` bin ranges.
fn third_octave_bands(fs: f64) -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * fs / STOI_NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (freqs[a] - target).abs().total_cmp(&(freqs[b] - target).abs()))
            .unwrap()
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)], fft: &RealFft) -> Vec<Vec<f64>> {
    let w = stoi_window(STOI_FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, STOI_FRAME / 2).collect();
    let mut out = vec![Vec::with_capacity(starts.len()); bands.len()];
    let mut buf = vec![0.0; STOI_FRAME];
    for s in starts {
        for i in 0..STOI_FRAME {
            buf[i] = w[i] * x[s + i];
        }
        let spec = fft.forward(&buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = spec[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility of `est` given clean `reference`,
/// following the 2010 definition with clipping, evaluated at `fs` without
/// resampling. The result is clipped to `[0, 1]`.
pub fn stoi(est: &[f64], reference: &[f64], fs: u32) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(shape("stoi", format!("{} vs {} samples", est.len(), reference.len())));
    }
    let (x, y) = remove_silent_frames(reference, est);
    let fft = RealFft::new(STOI_NFFT);
    let bands = third_octave_bands(fs as f64);
    let xe = band_envelopes(&x, &bands, &fft);
    let ye = band_envelopes(&y, &bands, &fft);
    let frames = xe[0].len();
    if frames < STOI_SEGMENT {
        return Err(CoreError::TooShort {
            what: "stoi speech-active input",
            need: (STOI_SEGMENT + 1) * STOI_HOP + STOI_FRAME,
            got: x.len(),
        });
    }
    let clip = 1.0 + 10f64.powf(-STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        for b in 0..bands.len() {
            let xs = &xe[b][m - STOI_SEGMENT..m];
            let ys = &ye[b][m - STOI_SEGMENT..m];
            let norm = l2(xs) / (l2(ys) + f64::EPSILON);
            let yc: Vec<f64> = ys.iter().zip(xs).map(|(yv, xv)| (yv * norm).min(xv * clip)).collect();
            let mx = xs.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let my = yc.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let xd: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yd: Vec<f64> = yc.iter().map(|v| v - my).collect();
            total += dot(&xd, &yd) / ((l2(&xd) + f64::EPSILON) * (l2(&yd) + f64::EPSILON));
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scene_id: String,
    pub config: String,
    pub si_sdr_db: f64,
    pub snr_db: f64,
    pub stoi: f64,
    pub runtime_ms: u64,
}

/// Metrics of `est` against `reference` over the STFT-reconstructable region.
pub fn score(scene_id: &str, config: &str, est: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<MetricRecord> {
    let n = reference.len();
    let r = cfg.interior_range(cfg.num_frames(n));
    if est.len() < r.end {
        return Err(shape("score", format!("estimate has {} samples, need {}", est.len(), r.end)));
    }
    let (e, s) = (&est[r.clone()], &reference[r]);
    Ok(MetricRecord {
        scene_id: scene_id.to_string(),
        config: config.to_string(),
        si_sdr_db: si_sdr(e, s)?,
        snr_db: snr_metric(e, s)?,
        stoi: stoi(e, s, cfg.sample_rate)?,
        runtime_ms: 0,
    })
}

/// A named enhancement pipeline producing a reference-channel waveform.
pub trait Enhancer: Sync {
    fn name(&self) -> String;
    fn enhance(&self, scene: &AudioScene) -> Result<Vec<f64>>;
}

/// Scores every `(scene, pipeline)` pair against the direct-path reference.
/// Rows are ordered by scene, then pipeline. `runtime_ms` is zero unless
/// `timing` is set, keeping output byte-stable across runs.
pub fn evaluate_batch(
    scenes: &[(String, AudioScene)],
    pipelines: &[&dyn Enhancer],
    cfg: &StftConfig,
    timing: bool,
) -> Result<Vec<MetricRecord>> {
    let rows: Vec<Result<Vec<MetricRecord>>> = scenes
        .par_iter()
        .map(|(id, scene)| {
            let reference = &scene.x[scene.ref_channel];
            pipelines
                .iter()
                .map(|p| {
                    let start = Instant::now();
                    let est = p.enhance(scene)?;
                    let elapsed = start.elapsed().as_millis() as u64;
                    let mut rec = score(id, &p.name(), &est, reference, cfg)?;
                    if timing {
                        rec.runtime_ms = elapsed;
                    }
                    Ok(rec)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

pub fn to_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.scene_id, r.config, r.si_sdr_db, r.snr_db, r.stoi, r.runtime_ms
        );
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != CSV_HEADER {
        return Err(CoreError::Config(format!("CSV header '{header}' does not match '{CSV_HEADER}'")));
    }
    let bad = |i: usize, msg: &str| CoreError::Manifest {
        line: i + 2,
        msg: msg.to_string(),
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i, "expected 6 columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i, "bad number"));
            Ok(MetricRecord {
                scene_id: f[0].to_string(),
                config: f[1].to_string(),
                si_sdr_db: num(f[2])?,
                snr_db: num(f[3])?,
                stoi: num(f[4])?,
                runtime_ms: f[5].trim().parse().map_err(|_| bad(i, "bad runtime"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub count: usize,
    pub si_sdr_db: Interval,
    pub snr_db: Interval,
    pub stoi: Interval,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Mean with a percentile bootstrap 95% interval.
pub fn bootstrap(values: &[f64], rng: &mut ChaCha8Rng) -> Interval {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 {
        return Interval { mean, lo: mean, hi: mean };
    }
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize).min(BOOTSTRAP_RESAMPLES - 1)];
    Interval {
        mean,
        lo: at(0.025),
        hi: at(0.975),
    }
}

/// Per-config summaries in first-appearance order.
pub fn summarize(records: &[MetricRecord], seed: u64) -> Vec<ConfigSummary> {
    let mut order: Vec<String> = Vec::new();
    for r in records {
        if !order.contains(&r.config) {
            order.push(r.config.clone());
        }
    }
    order
        .into_iter()
        .enumerate()
        .map(|(i, config)| {
            let rows: Vec<&MetricRecord> = records.iter().filter(|r| r.config == config).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, i as u64));
            let col = |f: fn(&MetricRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            ConfigSummary {
                count: rows.len(),
                si_sdr_db: bootstrap(&col(|r| r.si_sdr_db), &mut rng),
                snr_db: bootstrap(&col(|r| r.snr_db), &mut rng),
                stoi: bootstrap(&col(|r| r.stoi), &mut rng),
                config,
            }
        })
        .collect()
}

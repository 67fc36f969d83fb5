//! Square-root-Hann STFT analysis and overlap-add synthesis.
//!
//! Frames are fully interior: `T = floor((N - win_len) / hop) + 1` and no
//! padding is applied. With `hop = win_len / 2` the squared window sums to
//! one wherever two frames overlap, so `istft(stft(x))` is exact on
//! `interior_range`.

use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape, CoreError, Result};
use crate::fft::RealFft;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 256,
            hop: 128,
            fft_len: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.win_len % 2 != 0 {
            return Err(CoreError::Config(format!("win_len {} must be even and >= 2", self.win_len)));
        }
        if self.hop * 2 != self.win_len {
            return Err(CoreError::Config(format!(
                "hop {} must equal win_len/2 = {}",
                self.hop,
                self.win_len / 2
            )));
        }
        if self.fft_len < self.win_len {
            return Err(CoreError::Config(format!(
                "fft_len {} is shorter than win_len {}",
                self.fft_len, self.win_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(CoreError::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of fully interior frames for a signal of `n` samples.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.win_len {
            0
        } else {
            (n - self.win_len) / self.hop + 1
        }
    }

    /// Length of the waveform produced by `istft` for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win_len
        }
    }

    /// Samples reconstructed exactly by overlap-add of `frames` frames.
    pub fn interior_range(&self, frames: usize) -> Range<usize> {
        if frames < 2 {
            return 0..0;
        }
        self.win_len - self.hop..frames * self.hop
    }
}

/// Element-wise square root of the periodic Hann window.
pub fn sqrt_hann(win_len: usize) -> Vec<f64> {
    assert!(win_len >= 2 && win_len % 2 == 0, "win_len must be even and >= 2");
    // sqrt(0.5 - 0.5 cos(2πn/N)) = sin(πn/N) on [0, N), without the cancellation
    (0..win_len)
        .map(|n| (std::f64::consts::PI * n as f64 / win_len as f64).sin())
        .collect()
}

/// Complex spectrogram stored as real/imaginary planes in `[M, T, F]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        let n = channels * frames * bins;
        Self {
            channels,
            frames,
            bins,
            re: vec![0.0; n],
            im: vec![0.0; n],
            config,
        }
    }

    #[inline]
    pub fn index(&self, m: usize, t: usize, f: usize) -> usize {
        (m * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, m: usize, t: usize, f: usize) -> Complex64 {
        let i = self.index(m, t, f);
        Complex64::new(self.re[i], self.im[i])
    }

    #[inline]
    pub fn set(&mut self, m: usize, t: usize, f: usize, v: Complex64) {
        let i = self.index(m, t, f);
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    pub fn same_layout(&self, other: &Spectrogram) -> bool {
        self.channels == other.channels
            && self.frames == other.frames
            && self.bins == other.bins
            && self.config == other.config
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<Spectrogram> {
        let plane = self.frames * self.bins;
        let mut out = Spectrogram::zeros(idx.len(), self.frames, self.config);
        for (o, &m) in idx.iter().enumerate() {
            if m >= self.channels {
                return Err(shape("select_channels", format!("channel {m} of {}", self.channels)));
            }
            out.re[o * plane..(o + 1) * plane].copy_from_slice(&self.re[m * plane..(m + 1) * plane]);
            out.im[o * plane..(o + 1) * plane].copy_from_slice(&self.im[m * plane..(m + 1) * plane]);
        }
        Ok(out)
    }

    /// Stacks channels of several spectrograms with equal `(T, F)`.
    pub fn concat_channels(parts: &[&Spectrogram]) -> Result<Spectrogram> {
        let first = parts.first().ok_or(CoreError::Empty("concat_channels"))?;
        let mut out = Spectrogram {
            channels: 0,
            frames: first.frames,
            bins: first.bins,
            re: Vec::new(),
            im: Vec::new(),
            config: first.config,
        };
        for p in parts {
            if p.frames != first.frames || p.bins != first.bins || p.config != first.config {
                return Err(shape("concat_channels", "frame/bin layout differs"));
            }
            out.channels += p.channels;
            out.re.extend_from_slice(&p.re);
            out.im.extend_from_slice(&p.im);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if !self.same_layout(other) {
            return Err(shape("add", "spectrogram layouts differ"));
        }
        let mut out = self.clone();
        for (a, b) in out.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        for (a, b) in out.im.iter_mut().zip(&other.im) {
            *a += b;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

fn check_wave(wave: &[Vec<f64>], cfg: &StftConfig) -> Result<usize> {
    let first = wave.first().ok_or(CoreError::Empty("stft"))?;
    let n = first.len();
    if n == 0 {
        return Err(CoreError::Empty("stft"));
    }
    if wave.iter().any(|c| c.len() != n) {
        return Err(shape("stft", "channels have different lengths"));
    }
    if n < cfg.win_len {
        return Err(CoreError::TooShort {
            what: "stft input",
            need: cfg.win_len,
            got: n,
        });
    }
    if wave.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("stft input"));
    }
    Ok(n)
}

/// Multichannel STFT with the square-root Hann analysis window.
pub fn stft(wave: &[Vec<f64>], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = check_wave(wave, cfg)?;
    let frames = cfg.num_frames(n);
    let window = sqrt_hann(cfg.win_len);
    let fft = RealFft::new(cfg.fft_len);
    let mut out = Spectrogram::zeros(wave.len(), frames, *cfg);
    let mut buf = vec![0.0; cfg.win_len];
    for (m, chan) in wave.iter().enumerate() {
        for t in 0..frames {
            let seg = &chan[t * cfg.hop..t * cfg.hop + cfg.win_len];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
                *b = s * w;
            }
            let spec = fft.forward(&buf);
            let base = out.index(m, t, 0);
            for (f, c) in spec.iter().enumerate() {
                out.re[base + f] = c.re;
                out.im[base + f] = c.im;
            }
        }
    }
    Ok(out)
}

/// Overlap-add synthesis with the square-root Hann window. Output length is
/// `cfg.synthesis_len(spec.frames)`.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if spec.config != *cfg || spec.bins != cfg.bins() {
        return Err(CoreError::Config("spectrogram was computed with a different STFT config".into()));
    }
    let window = sqrt_hann(cfg.win_len);
    let fft = RealFft::new(cfg.fft_len);
    let len = cfg.synthesis_len(spec.frames);
    let mut out = vec![vec![0.0; len]; spec.channels];
    let mut half = vec![Complex64::new(0.0, 0.0); spec.bins];
    for (m, chan) in out.iter_mut().enumerate() {
        for t in 0..spec.frames {
            let base = spec.index(m, t, 0);
            for (f, h) in half.iter_mut().enumerate() {
                *h = Complex64::new(spec.re[base + f], spec.im[base + f]);
            }
            let frame = fft.inverse(&half);
            let dst = &mut chan[t * cfg.hop..t * cfg.hop + cfg.win_len];
            for ((d, &s), &w) in dst.iter_mut().zip(&frame).zip(&window) {
                *d += s * w;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoint_is_zero() {
        let w = sqrt_hann(256);
        assert_eq!(w[0], 0.0);
        assert!((w[128] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn silence_gives_124_frames() {
        let cfg = StftConfig::default();
        let s = stft(&[vec![0.0; 16_000]], &cfg).unwrap();
        assert_eq!(s.frames, 124);
        assert_eq!(s.bins, 129);
        assert!(s.re.iter().chain(&s.im).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_empty_and_short() {
        let cfg = StftConfig::default();
        assert!(matches!(stft(&[], &cfg), Err(CoreError::Empty(_))));
        assert!(matches!(stft(&[vec![0.0; 10]], &cfg), Err(CoreError::TooShort { .. })));
    }

    #[test]
    fn istft_rejects_other_config() {
        let cfg = StftConfig::default();
        let s = Spectrogram::zeros(1, 3, cfg);
        let other = StftConfig {
            win_len: 512,
            hop: 256,
            fft_len: 512,
            ..cfg
        };
        assert!(istft(&s, &other).is_err());
    }

    #[test]
    fn zero_spectrogram_gives_zero_wave() {
        let cfg = StftConfig::default();
        let w = istft(&Spectrogram::zeros(2, 5, cfg), &cfg).unwrap();
        assert_eq!(w[0].len(), 4 * 128 + 256);
        assert!(w.iter().flatten().all(|&v| v == 0.0));
    }
}

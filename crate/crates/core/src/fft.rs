//! Thin wrappers over `rustfft` fixing the normalization convention:
//! forward is unnormalized, inverse is scaled by `1/n`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Real-signal transform of a fixed length returning the `n/2 + 1` non-negative bins.
#[derive(Clone)]
pub struct RealFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("n", &self.n).finish()
    }
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Forward transform of `input` zero-padded to `n`.
    pub fn forward(&self, input: &[f64]) -> Vec<Complex64> {
        let mut buf = self.forward_full(input);
        buf.truncate(self.bins());
        buf
    }

    /// Full-length complex spectrum of a real input zero-padded to `n`.
    pub fn forward_full(&self, input: &[f64]) -> Vec<Complex64> {
        assert!(input.len() <= self.n);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &x) in buf.iter_mut().zip(input) {
            b.re = x;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse of a half spectrum under Hermitian symmetry. Imaginary parts
    /// at DC and Nyquist are ignored.
    pub fn inverse(&self, half: &[Complex64]) -> Vec<f64> {
        assert_eq!(half.len(), self.bins());
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half.len()].copy_from_slice(half);
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for k in 1..n.div_ceil(2) {
            buf[n - k] = half[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// In-place complex transforms of length `n`; inverse includes `1/n`.
    pub fn process_forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    pub fn process_inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.n as f64;
        for b in buf.iter_mut() {
            *b *= scale;
        }
    }
}

/// Full linear convolution of two real sequences via FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        return direct_convolve(a, b);
    }
    let n = out_len.next_power_of_two();
    let fft = RealFft::new(n);
    let fa = fft.forward(a);
    let fb = fft.forward(b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut out = fft.inverse(&prod);
    out.truncate(out_len);
    out
}

pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

//! Shoebox image-source simulation.
//!
//! Images are indexed per axis by `k ∈ Z`: even `k` places the image at
//! `k·L + s`, odd `k` at `(k+1)·L − s`, and `|k|` counts wall reflections on
//! that axis. Each reflection scales pressure by `sqrt(1 − α)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fft::RealFft;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Fractional-delay kernel length.
pub const KERNEL_TAPS: usize = 81;
const HALF: isize = (KERNEL_TAPS as isize - 1) / 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub absorption: f64,
    pub speed_of_sound: f64,
    pub max_order: usize,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], absorption: f64, max_order: usize) -> Self {
        Self {
            dims,
            absorption,
            speed_of_sound: SPEED_OF_SOUND,
            max_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(CoreError::Config(format!("room dims must be positive, got {:?}", self.dims)));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(CoreError::Config(format!("absorption {} outside (0, 1]", self.absorption)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(CoreError::Config("speed of sound must be positive".into()));
        }
        Ok(())
    }

    /// True when `p` is at least `margin` away from every wall.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|i| p[i] > margin && p[i] < self.dims[i] - margin)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Eyring reverberation time in seconds.
    pub fn eyring_rt60(&self) -> f64 {
        if self.absorption >= 1.0 {
            return 0.0;
        }
        0.161 * self.volume() / (-self.surface() * (1.0 - self.absorption).ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub amplitude: f64,
    pub order: usize,
}

fn image_coord(k: i64, len: f64, s: f64) -> f64 {
    if k % 2 == 0 {
        k as f64 * len + s
    } else {
        (k + 1) as f64 * len - s
    }
}

fn check_source(room: &RoomSpec, src: [f64; 3]) -> Result<()> {
    room.validate()?;
    if !room.contains(src, 0.0) {
        return Err(CoreError::OutsideRoom(src));
    }
    Ok(())
}

fn make_image(room: &RoomSpec, src: [f64; 3], k: [i64; 3]) -> ImageSource {
    let order = k.iter().map(|v| v.unsigned_abs() as usize).sum::<usize>();
    ImageSource {
        position: [
            image_coord(k[0], room.dims[0], src[0]),
            image_coord(k[1], room.dims[1], src[1]),
            image_coord(k[2], room.dims[2], src[2]),
        ],
        amplitude: (1.0 - room.absorption).powf(order as f64 / 2.0),
        order,
    }
}

/// All images with total reflection count `<= room.max_order`.
pub fn image_sources(room: &RoomSpec, src: [f64; 3]) -> Result<Vec<ImageSource>> {
    check_source(room, src)?;
    let n = room.max_order as i64;
    let mut out = Vec::new();
    for kx in -n..=n {
        let rx = n - kx.abs();
        for ky in -rx..=rx {
            let rz = rx - ky.abs();
            for kz in -rz..=rz {
                out.push(make_image(room, src, [kx, ky, kz]));
            }
        }
    }
    Ok(out)
}

/// All images within `radius` of `center`, regardless of order. Used for
/// long, time-limited responses.
pub fn image_sources_within(room: &RoomSpec, src: [f64; 3], center: [f64; 3], radius: f64) -> Result<Vec<ImageSource>> {
    check_source(room, src)?;
    let axis: Vec<Vec<(i64, f64)>> = (0..3)
        .map(|i| {
            let kmax = (radius / room.dims[i]).ceil() as i64 + 2;
            (-kmax..=kmax)
                .map(|k| (k, image_coord(k, room.dims[i], src[i]) - center[i]))
                .filter(|(_, d)| d.abs() <= radius)
                .collect()
        })
        .collect();
    let r2 = radius * radius;
    let mut out = Vec::new();
    for &(kx, dx) in &axis[0] {
        for &(ky, dy) in &axis[1] {
            let dxy = dx * dx + dy * dy;
            if dxy > r2 {
                continue;
            }
            for &(kz, dz) in &axis[2] {
                if dxy + dz * dz <= r2 {
                    out.push(make_image(room, src, [kx, ky, kz]));
                }
            }
        }
    }
    Ok(out)
}

/// Impulse response between one source and one microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub direct_taps: Vec<f64>,
    pub source_id: usize,
    pub mic_id: usize,
    /// Set when some image kernel extended past the requested length.
    pub truncated: bool,
}

impl Rir {
    pub fn reverberant_taps(&self) -> Vec<f64> {
        self.taps.iter().zip(&self.direct_taps).map(|(a, b)| a - b).collect()
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Samples needed to hold every image kernel without truncation.
pub fn required_length(images: &[ImageSource], mic: [f64; 3], fs: f64, c: f64) -> usize {
    images
        .iter()
        .map(|im| (distance(im.position, mic) / c * fs).round() as usize + HALF as usize + 1)
        .max()
        .unwrap_or(0)
}

/// Adds `gain * h(n - delay)` for the windowed-sinc kernel `h`; returns
/// whether any tap fell outside `out`.
fn add_kernel(out: &mut [f64], delay: f64, gain: f64) -> bool {
    let center = delay.round() as isize;
    let frac = delay - center as f64;
    // sin(pi (n - delay)) alternates sign with n around an integer center
    let s = (PI * frac).sin();
    let mut truncated = false;
    for j in -HALF..=HALF {
        let n = center + j;
        if n < 0 || n as usize >= out.len() {
            truncated = true;
            continue;
        }
        let t = j as f64 - frac;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            let sign = if j.rem_euclid(2) == 0 { -1.0 } else { 1.0 };
            sign * s / (PI * t)
        };
        let w = 0.5 * (1.0 + (PI * t / (HALF as f64 + 1.0)).cos());
        out[n as usize] += gain * sinc * w;
    }
    truncated
}

/// Renders images into an RIR of `length` taps at `fs`.
pub fn render_rir(images: &[ImageSource], mic: [f64; 3], fs: f64, length: usize, c: f64) -> Rir {
    let mut direct = vec![0.0; length];
    let mut reverb = vec![0.0; length];
    let mut truncated = false;
    for im in images {
        let d = distance(im.position, mic).max(1e-3);
        let gain = im.amplitude / (4.0 * PI * d);
        let dst = if im.order == 0 { &mut direct } else { &mut reverb };
        truncated |= add_kernel(dst, d / c * fs, gain);
    }
    let taps = direct.iter().zip(&reverb).map(|(a, b)| a + b).collect();
    Rir {
        taps,
        direct_taps: direct,
        source_id: 0,
        mic_id: 0,
        truncated,
    }
}

/// Per-microphone direct-path and reverberant images of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub direct: Vec<f64>,
    pub reverberant: Vec<f64>,
}

/// Convolves one signal with several kernels, sharing the signal transform.
/// Outputs are truncated to the signal length.
pub fn convolve_many(signal: &[f64], kernels: &[&[f64]]) -> Vec<Vec<f64>> {
    let klen = kernels.iter().map(|k| k.len()).max().unwrap_or(0);
    if signal.is_empty() || klen == 0 {
        return vec![vec![0.0; signal.len()]; kernels.len()];
    }
    let n = (signal.len() + klen - 1).next_power_of_two();
    let fft = RealFft::new(n);
    let fs = fft.forward(signal);
    kernels
        .iter()
        .map(|k| {
            let fk = fft.forward(k);
            let prod: Vec<Complex64> = fs.iter().zip(&fk).map(|(a, b)| a * b).collect();
            let mut out = fft.inverse(&prod);
            out.truncate(signal.len());
            out
        })
        .collect()
}

/// Simulates a source at `src` picked up by each microphone in `mics`.
/// Returns the components and the RIRs used.
pub fn simulate_components(
    room: &RoomSpec,
    mics: &[[f64; 3]],
    signal: &[f64],
    src: [f64; 3],
    fs: f64,
) -> Result<(Vec<Components>, Vec<Rir>)> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("source signal"));
    }
    let images = image_sources(room, src)?;
    let length = mics
        .iter()
        .map(|&m| required_length(&images, m, fs, room.speed_of_sound))
        .max()
        .unwrap_or(1);
    let rirs: Vec<Rir> = mics
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut r = render_rir(&images, m, fs, length, room.speed_of_sound);
            r.mic_id = i;
            r
        })
        .collect();
    let reverb: Vec<Vec<f64>> = rirs.iter().map(Rir::reverberant_taps).collect();
    let mut kernels: Vec<&[f64]> = Vec::with_capacity(2 * rirs.len());
    for (r, rv) in rirs.iter().zip(&reverb) {
        kernels.push(&r.direct_taps);
        kernels.push(rv);
    }
    let mut outs = convolve_many(signal, &kernels).into_iter();
    let comps = rirs
        .iter()
        .map(|_| Components {
            direct: outs.next().unwrap(),
            reverberant: outs.next().unwrap(),
        })
        .collect();
    Ok((comps, rirs))
}

/// RT60 from Schroeder backward integration, fitting the −5 to −25 dB
/// segment and extrapolating to −60 dB.
pub fn measure_rt60(taps: &[f64], fs: f64) -> Result<f64> {
    let mut edc = vec![0.0; taps.len()];
    let mut acc = 0.0;
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(CoreError::Empty("measure_rt60"));
    }
    let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&v| v <= -5.0).ok_or(CoreError::DecayRange(-5.0))?;
    let end = db.iter().position(|&v| v <= -25.0).ok_or(CoreError::DecayRange(-25.0))?;
    if end <= start + 1 {
        return Err(CoreError::DecayRange(-25.0));
    }
    let n = (end - start + 1) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db.iter().enumerate().take(end + 1).skip(start) {
        let t = i as f64 / fs;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Err(CoreError::DecayRange(-25.0));
    }
    // time for a 20 dB drop along the fit, times 3
    Ok(3.0 * (-20.0 / slope))
}

/// Renders a time-limited response long enough to measure RT60, using all
/// images within a distance set from the Eyring estimate.
pub fn long_rir(room: &RoomSpec, src: [f64; 3], mic: [f64; 3], fs: f64) -> Result<Rir> {
    let horizon = 0.8 * room.eyring_rt60() + 0.05;
    let radius = room.speed_of_sound * horizon;
    let images = image_sources_within(room, src, mic, radius)?;
    let length = (horizon * fs).ceil() as usize + KERNEL_TAPS;
    Ok(render_rir(&images, mic, fs, length, room.speed_of_sound))
}

//! Scene sampling and mixing: `y = x + x_rev + n` at the reference channel's
//! target SNR and SIR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::error::{CoreError, Result};
use crate::room::{simulate_components, RoomSpec};
use crate::sources::{fit_length, SourceKind, SourceMaterial};
use crate::wav::SAMPLE_RATE;

pub const REJECTION_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Omni,
    Fov,
}

/// Sampling ranges; `[lo, hi]` pairs are inclusive-exclusive uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub room_x: [f64; 2],
    pub room_y: [f64; 2],
    pub room_z: [f64; 2],
    pub absorption: [f64; 2],
    pub snr_db: [f64; 2],
    pub sir_db: [f64; 2],
    pub distance: [f64; 2],
    pub array_height: [f64; 2],
    pub wall_margin: f64,
    pub fov_deg: f64,
    pub max_interferers: usize,
    pub max_noise_fov: usize,
    pub max_noise_omni: usize,
    pub max_order: usize,
    pub clip_seconds: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            room_x: [3.0, 10.0],
            room_y: [3.0, 10.0],
            room_z: [2.0, 5.0],
            absorption: [0.1, 0.5],
            snr_db: [-10.0, 5.0],
            sir_db: [-10.0, 5.0],
            distance: [0.5, 2.5],
            array_height: [1.0, 2.0],
            wall_margin: 0.2,
            fov_deg: 20.0,
            max_interferers: 4,
            max_noise_fov: 5,
            max_noise_omni: 10,
            max_order: 6,
            clip_seconds: 10.0,
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("room_x", self.room_x),
            ("room_y", self.room_y),
            ("room_z", self.room_z),
            ("absorption", self.absorption),
            ("snr_db", self.snr_db),
            ("sir_db", self.sir_db),
            ("distance", self.distance),
            ("array_height", self.array_height),
        ];
        for (name, [lo, hi]) in pairs {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(CoreError::Config(format!("range {name} = [{lo}, {hi}] is invalid")));
            }
        }
        if self.room_x[0] <= 0.0 || self.room_y[0] <= 0.0 || self.room_z[0] <= 0.0 {
            return Err(CoreError::Config("room dimensions must be positive".into()));
        }
        if !(self.absorption[0] > 0.0 && self.absorption[1] <= 1.0) {
            return Err(CoreError::Config("absorption range must lie in (0, 1]".into()));
        }
        if self.distance[0] <= 0.0 {
            return Err(CoreError::Config("source distance must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 90.0) {
            return Err(CoreError::Config(format!("fov_deg {} outside (0, 90)", self.fov_deg)));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(CoreError::Config("clip_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub position: [f64; 3],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub task: Task,
    pub room: RoomSpec,
    pub array_center: [f64; 3],
    /// Rotation of the array frame about the vertical axis, radians.
    pub array_yaw: f64,
    /// Unit vector of the array's +x axis in room coordinates.
    pub front_axis: [f64; 3],
    pub target: SourceSpec,
    pub interferers: Vec<SourceSpec>,
    pub noises: Vec<SourceSpec>,
    pub snr_db: f64,
    pub sir_db: f64,
    pub clip_seconds: f64,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Azimuth and elevation in degrees of `p` seen from the array frame.
pub fn direction_deg(center: [f64; 3], yaw: f64, p: [f64; 3]) -> (f64, f64) {
    let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    let (s, c) = yaw.sin_cos();
    let lx = c * d[0] + s * d[1];
    let ly = -s * d[0] + c * d[1];
    let az = ly.atan2(lx).to_degrees();
    let el = d[2].atan2((lx * lx + ly * ly).sqrt()).to_degrees();
    (az, el)
}

pub fn in_fov(az: f64, el: f64, fov_deg: f64) -> bool {
    az.abs() <= fov_deg && el.abs() <= fov_deg
}

fn point_at(center: [f64; 3], yaw: f64, dist: f64, az: f64, el: f64) -> [f64; 3] {
    let (az, el) = (az.to_radians() + yaw, el.to_radians());
    [
        center[0] + dist * el.cos() * az.cos(),
        center[1] + dist * el.cos() * az.sin(),
        center[2] + dist * el.sin(),
    ]
}

impl SceneSpec {
    pub fn direction_of(&self, p: [f64; 3]) -> (f64, f64) {
        direction_deg(self.array_center, self.array_yaw, p)
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    ranges: &'a SceneRanges,
    room: RoomSpec,
    center: [f64; 3],
    yaw: f64,
    tries: usize,
}

#[derive(Clone, Copy)]
enum Zone {
    Inside,
    Outside,
    Anywhere,
}

impl Sampler<'_> {
    fn place(&mut self, zone: Zone) -> Result<[f64; 3]> {
        let fov = self.ranges.fov_deg;
        loop {
            self.tries += 1;
            if self.tries > REJECTION_BUDGET {
                return Err(CoreError::RejectionExhausted(REJECTION_BUDGET));
            }
            let dist = uniform(&mut self.rng, self.ranges.distance);
            let (az, el) = match zone {
                Zone::Inside => (self.rng.gen_range(-fov..=fov), self.rng.gen_range(-fov..=fov)),
                _ => {
                    let az = self.rng.gen_range(-180.0..180.0);
                    let el = self.rng.gen_range(-1.0f64..1.0).asin().to_degrees();
                    (az, el)
                }
            };
            if matches!(zone, Zone::Outside) && in_fov(az, el, fov) {
                continue;
            }
            let p = point_at(self.center, self.yaw, dist, az, el);
            if self.room.contains(p, self.ranges.wall_margin) {
                return Ok(p);
            }
        }
    }
}

/// Draws a scene deterministically from `seed`.
pub fn sample_scene(seed: u64, task: Task, ranges: &SceneRanges) -> Result<SceneSpec> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        uniform(&mut rng, ranges.room_x),
        uniform(&mut rng, ranges.room_y),
        uniform(&mut rng, ranges.room_z),
    ];
    let room = RoomSpec::new(dims, uniform(&mut rng, ranges.absorption), ranges.max_order);
    let cx = dims[0] * (0.25 + 0.5 * rng.gen::<f64>());
    let cy = dims[1] * (0.25 + 0.5 * rng.gen::<f64>());
    let lo = ranges.array_height[0].max(0.25 * dims[2]);
    let hi = ranges.array_height[1].min(0.75 * dims[2]);
    let cz = if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        dims[2] * (0.25 + 0.5 * rng.gen::<f64>())
    };
    let yaw = rng.gen_range(-PI..PI);
    let snr_db = uniform(&mut rng, ranges.snr_db);
    let sir_db = uniform(&mut rng, ranges.sir_db);
    let (n_int, n_noise) = match task {
        Task::Fov => (
            rng.gen_range(0..=ranges.max_interferers),
            rng.gen_range(0..=ranges.max_noise_fov),
        ),
        Task::Omni => (0, rng.gen_range(0..=ranges.max_noise_omni)),
    };
    let noise_kinds: Vec<SourceKind> = (0..n_noise)
        .map(|_| if rng.gen_bool(0.5) { SourceKind::Noise } else { SourceKind::Babble })
        .collect();
    let seeds: Vec<u64> = (0..1 + n_int + n_noise).map(|_| rng.gen()).collect();

    let mut s = Sampler {
        rng,
        ranges,
        room,
        center: [cx, cy, cz],
        yaw,
        tries: 0,
    };
    let target_zone = if task == Task::Fov { Zone::Inside } else { Zone::Anywhere };
    let target = SourceSpec {
        kind: SourceKind::Speech,
        position: s.place(target_zone)?,
        seed: seeds[0],
    };
    let mut interferers = Vec::with_capacity(n_int);
    for i in 0..n_int {
        interferers.push(SourceSpec {
            kind: SourceKind::Speech,
            position: s.place(Zone::Outside)?,
            seed: seeds[1 + i],
        });
    }
    let mut noises = Vec::with_capacity(n_noise);
    for (i, kind) in noise_kinds.into_iter().enumerate() {
        noises.push(SourceSpec {
            kind,
            position: s.place(Zone::Anywhere)?,
            seed: seeds[1 + n_int + i],
        });
    }
    Ok(SceneSpec {
        seed,
        task,
        room,
        array_center: s.center,
        array_yaw: yaw,
        front_axis: [yaw.cos(), yaw.sin(), 0.0],
        target,
        interferers,
        noises,
        snr_db,
        sir_db,
        clip_seconds: ranges.clip_seconds,
    })
}

/// Multichannel scene components, each `M x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioScene {
    pub x: Vec<Vec<f64>>,
    pub x_rev: Vec<Vec<f64>>,
    /// Scaled interferer sum.
    pub interference: Vec<Vec<f64>>,
    /// Scaled noise-source sum.
    pub noise: Vec<Vec<f64>>,
    /// `interference + noise`.
    pub n: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub ref_channel: usize,
    pub rm_channels: Vec<usize>,
    pub vm_channels: Vec<usize>,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn zeros(m: usize, n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n]; m]
}

fn sum_images(spec: &SceneSpec, mics: &[[f64; 3]], signals: &[Vec<f64>], positions: &[[f64; 3]], n: usize) -> Result<Vec<Vec<f64>>> {
    let mut acc = zeros(mics.len(), n);
    for (sig, &pos) in signals.iter().zip(positions) {
        let (comps, _) = simulate_components(&spec.room, mics, &fit_length(sig, n), pos, SAMPLE_RATE as f64)?;
        for (a, c) in acc.iter_mut().zip(&comps) {
            for ((o, d), r) in a.iter_mut().zip(&c.direct).zip(&c.reverberant) {
                *o += d + r;
            }
        }
    }
    Ok(acc)
}

fn scale_to(x: &mut [Vec<f64>], reference: usize, target_power: f64, what: &str) -> Result<()> {
    let p = power(&x[reference]);
    if !(p > 0.0) {
        return Err(CoreError::SilentSource(what.to_string()));
    }
    let g = (target_power / p).sqrt();
    for v in x.iter_mut().flatten() {
        *v *= g;
    }
    Ok(())
}

/// Mixes the given source waveforms into the scene. Interferers are scaled
/// to `sir_db` and noises to `snr_db` against the direct-path target power
/// at the reference channel.
pub fn mix_scene(
    spec: &SceneSpec,
    array: &ArrayGeometry,
    target: &[f64],
    interferers: &[Vec<f64>],
    noises: &[Vec<f64>],
) -> Result<AudioScene> {
    if interferers.len() != spec.interferers.len() || noises.len() != spec.noises.len() {
        return Err(CoreError::Config("source waveform count does not match the scene spec".into()));
    }
    let n = spec.clip_samples();
    let mics = array.world_positions(spec.array_center, spec.array_yaw);
    let refc = array.reference();
    let fs = SAMPLE_RATE as f64;
    let (comps, _) = simulate_components(&spec.room, &mics, &fit_length(target, n), spec.target.position, fs)?;
    let x: Vec<Vec<f64>> = comps.iter().map(|c| c.direct.clone()).collect();
    let x_rev: Vec<Vec<f64>> = comps.into_iter().map(|c| c.reverberant).collect();
    let p_target = power(&x[refc]);
    if !(p_target > 0.0) {
        return Err(CoreError::SilentSource("target".into()));
    }

    let int_pos: Vec<[f64; 3]> = spec.interferers.iter().map(|s| s.position).collect();
    let mut interference = sum_images(spec, &mics, interferers, &int_pos, n)?;
    if !interferers.is_empty() {
        scale_to(&mut interference, refc, p_target / 10f64.powf(spec.sir_db / 10.0), "interferers")?;
    }
    let noise_pos: Vec<[f64; 3]> = spec.noises.iter().map(|s| s.position).collect();
    let mut noise = sum_images(spec, &mics, noises, &noise_pos, n)?;
    if !noises.is_empty() {
        scale_to(&mut noise, refc, p_target / 10f64.powf(spec.snr_db / 10.0), "noises")?;
    }

    let total: Vec<Vec<f64>> = interference
        .iter()
        .zip(&noise)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect())
        .collect();
    let y = (0..mics.len())
        .map(|m| (0..n).map(|i| x[m][i] + x_rev[m][i] + total[m][i]).collect())
        .collect();
    Ok(AudioScene {
        x,
        x_rev,
        interference,
        noise,
        n: total,
        y,
        ref_channel: refc,
        rm_channels: array.real_channels(),
        vm_channels: array.virtual_channels(),
    })
}

/// Renders source waveforms for `spec` and mixes them.
pub fn render_scene(spec: &SceneSpec, array: &ArrayGeometry, material: &SourceMaterial) -> Result<AudioScene> {
    let n = spec.clip_samples();
    let fs = SAMPLE_RATE as f64;
    let render = |s: &SourceSpec| material.render(s.kind, s.seed, n, fs);
    let target = render(&spec.target);
    let ints: Vec<Vec<f64>> = spec.interferers.iter().map(render).collect();
    let noises: Vec<Vec<f64>> = spec.noises.iter().map(render).collect();
    mix_scene(spec, array, &target, &ints, &noises)
}

impl AudioScene {
    pub fn channels(&self) -> usize {
        self.y.len()
    }

    pub fn len(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Re-measured `(snr_db, sir_db)` at the reference channel; `None` when
    /// the corresponding component is absent.
    pub fn measured_ratios(&self) -> (Option<f64>, Option<f64>) {
        let pt = power(&self.x[self.ref_channel]);
        let ratio = |c: &[Vec<f64>]| {
            let p = power(&c[self.ref_channel]);
            (p > 0.0).then(|| 10.0 * (pt / p).log10())
        };
        (ratio(&self.noise), ratio(&self.interference))
    }

    /// Sub-array view keeping only `channels`. The reference moves with it
    /// when included; otherwise the first kept channel becomes reference.
    pub fn pick(&self, channels: &[usize]) -> AudioScene {
        let sel = |v: &Vec<Vec<f64>>| channels.iter().map(|&c| v[c].clone()).collect::<Vec<_>>();
        let ref_pos = channels.iter().position(|&c| c == self.ref_channel).unwrap_or(0);
        AudioScene {
            x: sel(&self.x),
            x_rev: sel(&self.x_rev),
            interference: sel(&self.interference),
            noise: sel(&self.noise),
            n: sel(&self.n),
            y: sel(&self.y),
            ref_channel: ref_pos,
            rm_channels: (0..channels.len()).collect(),
            vm_channels: Vec::new(),
        }
    }
}

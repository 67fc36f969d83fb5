//! Corpus generation and loading on top of the manifest format.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vmbeam_core::manifest::{read_manifest, write_manifest, write_scene_audio, ManifestRecord, MANIFEST_FILE, SCHEMA_VERSION};
use vmbeam_core::rng::derive_seed;
use vmbeam_core::room::{long_rir, measure_rt60};
use vmbeam_core::scene::{render_scene, sample_scene, AudioScene};
use vmbeam_core::sources::SourceMaterial;
use vmbeam_core::wav::SAMPLE_RATE;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Per-scene facts reported by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub rt60_measured: f64,
    pub rt60_eyring: f64,
    /// Direct-path target over summed noise at the reference channel; absent
    /// for scenes without noise sources.
    pub snr_db: Option<f64>,
}

fn material(cfg: &RunConfig) -> Result<SourceMaterial> {
    let c = &cfg.corpus;
    if c.speech_dir.is_none() && c.noise_dir.is_none() {
        return Ok(SourceMaterial::Synthetic);
    }
    Ok(SourceMaterial::from_dirs(c.speech_dir.as_deref(), c.noise_dir.as_deref())?)
}

/// Renders and writes every scene, then the manifest. Scenes are independent
/// streams of the run seed, so the output does not depend on thread count.
pub fn generate(cfg: &RunConfig, root: &Path) -> Result<(Vec<ManifestRecord>, Vec<SceneStats>)> {
    let array = cfg.geometry()?;
    let material = material(cfg)?;
    fs::create_dir_all(root)?;
    let out: Vec<Result<(ManifestRecord, SceneStats)>> = (0..cfg.corpus.scenes)
        .into_par_iter()
        .map(|i| {
            let spec = sample_scene(derive_seed(cfg.seed, i as u64), cfg.corpus.task, &cfg.corpus.ranges)?;
            let scene = render_scene(&spec, &array, &material)?;
            let id = scene_id(i);
            let (files, sha256) = write_scene_audio(root, &id, &scene)?;
            let mic = array.world_positions(spec.array_center, spec.array_yaw)[array.reference()];
            let rir = long_rir(&spec.room, spec.target.position, mic, SAMPLE_RATE as f64)?;
            let stats = SceneStats {
                rt60_measured: measure_rt60(&rir.taps, SAMPLE_RATE as f64)?,
                rt60_eyring: spec.room.eyring_rt60(),
                snr_db: scene.measured_ratios().0,
            };
            let record = ManifestRecord {
                schema_version: SCHEMA_VERSION,
                id,
                index: i as u64,
                spec,
                array: cfg.array.clone(),
                files,
                sha256,
            };
            Ok((record, stats))
        })
        .collect();
    let mut records = Vec::with_capacity(out.len());
    let mut stats = Vec::with_capacity(out.len());
    for r in out {
        let (rec, st) = r?;
        records.push(rec);
        stats.push(st);
    }
    write_manifest(&root.join(MANIFEST_FILE), &records)?;
    Ok((records, stats))
}

/// Reads the manifest and checks it against the run configuration.
pub fn open(cfg: &RunConfig, root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no corpus manifest at {}; run `vmbeam simulate` first",
            path.display()
        )));
    }
    let records = read_manifest(&path)?;
    if records.len() != cfg.corpus.scenes {
        return Err(CliError::Data(format!(
            "corpus at {} has {} scenes, the config expects {}",
            root.display(),
            records.len(),
            cfg.corpus.scenes
        )));
    }
    if let Some(r) = records.iter().find(|r| r.array != cfg.array) {
        return Err(CliError::Data(format!("scene {} was rendered with a different array", r.id)));
    }
    Ok(records)
}

/// Loads (and checksums) the scenes with the given indices.
pub fn load(records: &[ManifestRecord], root: &Path, indices: std::ops::Range<usize>) -> Result<Vec<(String, AudioScene)>> {
    records[indices]
        .par_iter()
        .map(|r| Ok((r.id.clone(), r.load_scene(root)?)))
        .collect()
}

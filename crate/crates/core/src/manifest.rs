//! Line-delimited JSON corpus manifests with per-file SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::ArrayKind;
use crate::error::{CoreError, Result};
use crate::scene::{AudioScene, SceneSpec};
use crate::wav::{read_wav, write_wav, WavEncoding};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const COMPONENTS: [&str; 4] = ["y", "x", "x_rev", "n"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub schema_version: u32,
    pub id: String,
    pub index: u64,
    pub spec: SceneSpec,
    pub array: ArrayKind,
    /// Component name to path relative to the corpus root.
    pub files: BTreeMap<String, String>,
    pub sha256: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CoreError::MissingFile(path.to_path_buf()),
        _ => CoreError::Io(e),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes the four component WAVs of a scene under `root/scenes/` and
/// returns `(files, checksums)`.
pub fn write_scene_audio(
    root: &Path,
    id: &str,
    scene: &AudioScene,
) -> Result<(BTreeMap<String, String>, BTreeMap<String, String>)> {
    let dir = root.join("scenes");
    fs::create_dir_all(&dir)?;
    let mut files = BTreeMap::new();
    let mut sums = BTreeMap::new();
    for (name, data) in COMPONENTS.iter().zip([&scene.y, &scene.x, &scene.x_rev, &scene.n]) {
        let rel = format!("scenes/{id}_{name}.wav");
        let path = root.join(&rel);
        write_wav(&path, data, WavEncoding::Float32)?;
        sums.insert(name.to_string(), sha256_file(&path)?);
        files.insert(name.to_string(), rel);
    }
    Ok((files, sums))
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| CoreError::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(CoreError::Manifest {
                line: i + 1,
                msg: format!("schema version {} (expected {SCHEMA_VERSION})", rec.schema_version),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

impl ManifestRecord {
    pub fn path_of(&self, root: &Path, component: &str) -> Result<PathBuf> {
        let rel = self.files.get(component).ok_or_else(|| CoreError::Manifest {
            line: self.index as usize + 1,
            msg: format!("no '{component}' file listed for scene {}", self.id),
        })?;
        Ok(root.join(rel))
    }

    /// Checks that every listed file exists and matches its checksum.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for name in COMPONENTS {
            let path = self.path_of(root, name)?;
            if !path.exists() {
                return Err(CoreError::MissingFile(path));
            }
            let want = self.sha256.get(name).ok_or_else(|| CoreError::Checksum(path.clone()))?;
            if &sha256_file(&path)? != want {
                return Err(CoreError::Checksum(path));
            }
        }
        Ok(())
    }

    /// Loads the scene audio. Interferers and noise are not stored
    /// separately, so `noise` holds `n` and `interference` is zero.
    pub fn load_scene(&self, root: &Path) -> Result<AudioScene> {
        self.verify(root)?;
        let read = |name: &str| -> Result<Vec<Vec<f64>>> { read_wav(&self.path_of(root, name)?) };
        let (y, x, x_rev, n) = (read("y")?, read("x")?, read("x_rev")?, read("n")?);
        let array = crate::array::build_array(&self.array)?;
        let zeros = n.iter().map(|c| vec![0.0; c.len()]).collect();
        Ok(AudioScene {
            interference: zeros,
            noise: n.clone(),
            n,
            x,
            x_rev,
            y,
            ref_channel: array.reference(),
            rm_channels: array.real_channels(),
            vm_channels: array.virtual_channels(),
        })
    }
}

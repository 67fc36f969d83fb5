//! The single TOML run file. Every section has defaults, unknown keys are
//! rejected, and the effective configuration (after command-line
//! overrides) serializes back to TOML that parses to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vmbeam_core::array::{build_array, ArrayGeometry, ArrayKind};
use vmbeam_core::scene::{SceneRanges, Task};
use vmbeam_model::config::{Ablation, GeneratorConfig, LossConfig, McSeConfig, PipelineConfig};
use vmbeam_model::train::TrainConfig;

use crate::error::{CliError, Result};

/// Configuration names the harness emits on its own.
pub const RESERVED_NAMES: [&str; 3] = ["unprocessed", "oracle", "oracle_rm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub task: Task,
    pub scenes: usize,
    /// The last `holdout` scenes are kept out of training and used for
    /// evaluation. With zero, both use every scene.
    pub holdout: usize,
    /// Optional directories of mono 16 kHz WAV clips; synthetic sources
    /// are used when absent.
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub ranges: SceneRanges,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            task: Task::Fov,
            scenes: 10,
            holdout: 0,
            speech_dir: None,
            noise_dir: None,
            ranges: SceneRanges {
                clip_seconds: 1.0,
                ..SceneRanges::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Name of the pipeline whose models are trained.
    pub pipeline: String,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub pretrain_steps: u64,
    pub finetune_lr_scale: f64,
    /// Checkpoint interval in steps; the final step is always saved.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            pipeline: PipelineConfig::default().name,
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            disc_lr: t.disc_lr,
            pretrain_steps: t.pretrain_steps,
            finetune_lr_scale: t.finetune_lr_scale,
            checkpoint_every: 50,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            disc_lr: self.disc_lr,
            seed,
            pretrain_steps: self.pretrain_steps,
            finetune_lr_scale: self.finetune_lr_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root: the corpus, checkpoints, metrics and reports go below it.
    pub out: PathBuf,
    pub corpus: CorpusConfig,
    pub array: ArrayKind,
    pub generator: GeneratorConfig,
    pub loss: LossConfig,
    pub mcse: McSeConfig,
    pub pipelines: Vec<PipelineConfig>,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/desk"),
            corpus: CorpusConfig::default(),
            array: ArrayKind::default(),
            generator: GeneratorConfig::default(),
            loss: LossConfig::default(),
            mcse: McSeConfig::default(),
            pipelines: vec![PipelineConfig::default()],
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Applies an ablation to the shared model sections and every pipeline.
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        for p in &mut self.pipelines {
            let before = p.name.clone();
            ablation.apply(&mut self.generator, &mut self.loss, p);
            if self.train.pipeline == before {
                self.train.pipeline = p.name.clone();
            }
        }
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        Ok(build_array(&self.array)?)
    }

    /// Checks cross-section consistency; section-local checks live with
    /// each section type.
    pub fn validate(&self) -> Result<()> {
        let config = |m: String| Err(CliError::Config(m));
        if self.seed > i64::MAX as u64 {
            return config(format!("seed {} exceeds the TOML integer range", self.seed));
        }
        if self.corpus.scenes == 0 {
            return config("corpus.scenes must be positive".into());
        }
        if self.corpus.holdout >= self.corpus.scenes {
            return config(format!(
                "corpus.holdout ({}) must be smaller than corpus.scenes ({})",
                self.corpus.holdout, self.corpus.scenes
            ));
        }
        self.corpus.ranges.validate()?;
        let array = self.geometry()?;
        let (m_r, m_v) = (array.real_channels().len(), array.virtual_channels().len());
        if m_v == 0 {
            return config("the array has no virtual microphones".into());
        }
        let g = &self.generator;
        if (g.real_channels, g.virtual_channels) != (m_r, m_v) {
            return config(format!(
                "generator expects {} real and {} virtual channels, the array has {m_r} and {m_v}",
                g.real_channels, g.virtual_channels
            ));
        }
        g.validate()?;
        self.loss.validate()?;
        self.mcse.validate()?;
        if self.pipelines.is_empty() {
            return config("at least one pipeline is required".into());
        }
        for (i, p) in self.pipelines.iter().enumerate() {
            p.validate()?;
            if RESERVED_NAMES.contains(&p.name.as_str()) {
                return config(format!("pipeline name '{}' is reserved", p.name));
            }
            if self.pipelines[..i].iter().any(|q| q.name == p.name) {
                return config(format!("pipeline name '{}' is used twice", p.name));
            }
        }
        if self.pipeline(&self.train.pipeline).is_none() {
            return config(format!("train.pipeline '{}' names no configured pipeline", self.train.pipeline));
        }
        if self.train.checkpoint_every == 0 {
            return config("train.checkpoint_every must be positive".into());
        }
        self.train.train_config(self.seed).validate()?;
        Ok(())
    }

    pub fn pipeline(&self, name: &str) -> Option<&PipelineConfig> {
        self.pipelines.iter().find(|p| p.name == name)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn train_dir(&self, pipeline: &str) -> PathBuf {
        self.out.join("train").join(slug(pipeline))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    /// Scene indices used for training and for evaluation.
    pub fn split(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.corpus.scenes;
        if self.corpus.holdout == 0 {
            (0..n, 0..n)
        } else {
            (0..n - self.corpus.holdout, n - self.corpus.holdout..n)
        }
    }
}

/// File-system friendly form of a configuration name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

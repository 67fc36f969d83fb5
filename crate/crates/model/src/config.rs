use serde::{Deserialize, Serialize};
use vmbeam_core::beamformer::{Backend, OracleMode, DEFAULT_BLOCK_LEN};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Channel widths `D_1..D_Nb`; the number of stages is `dims.len()`.
    pub dims: Vec<usize>,
    pub groups: usize,
    pub kernel: usize,
    pub real_channels: usize,
    pub virtual_channels: usize,
    pub feature_dim: usize,
    /// Kernel slots mixed by the channel-allocation attention.
    pub dca_slots: usize,
    pub enable_selection: bool,
    pub enable_dca: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dims: vec![16, 12],
            groups: 4,
            kernel: 3,
            real_channels: 2,
            virtual_channels: 4,
            feature_dim: 16,
            dca_slots: 4,
            enable_selection: true,
            enable_dca: true,
        }
    }
}

impl GeneratorConfig {
    pub fn n_blocks(&self) -> usize {
        self.dims.len()
    }

    /// Output width of stage `i`.
    pub fn stage_out(&self, i: usize) -> usize {
        *self.dims.get(i + 1).unwrap_or(&self.dims[i])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.dims.is_empty() {
            return bad("generator.dims must not be empty".into());
        }
        if self.dims.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("generator.dims {:?} must be non-increasing", self.dims));
        }
        if self.groups == 0 || self.dims.iter().any(|d| d % self.groups != 0) {
            return bad(format!("generator.dims {:?} must be divisible by groups {}", self.dims, self.groups));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("generator.kernel {} must be odd", self.kernel));
        }
        if self.real_channels == 0 || self.virtual_channels == 0 || self.feature_dim == 0 || self.dca_slots == 0 {
            return bad("generator channel counts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_vme: f64,
    pub w_bf: f64,
    pub w_adv_g: f64,
    pub w_adv_d: f64,
    pub snr_clip_db: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_vme: 0.3,
            w_bf: 0.7,
            w_adv_g: 0.01,
            w_adv_d: 0.01,
            snr_clip_db: 30.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_vme, self.w_bf, self.w_adv_g, self.w_adv_d];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::Config(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if !(self.snr_clip_db > 0.0) {
            return Err(ModelError::Config("loss.snr_clip_db must be positive".into()));
        }
        Ok(())
    }

    pub fn adversarial(&self) -> bool {
        self.w_adv_g > 0.0 || self.w_adv_d > 0.0
    }
}

/// Reference multichannel enhancement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSeConfig {
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
}

impl Default for McSeConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            kernel: 3,
            blocks: 2,
        }
    }
}

impl McSeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.kernel % 2 == 0 {
            return Err(ModelError::Config(format!(
                "mcse.hidden must be positive and mcse.kernel odd, got {} / {}",
                self.hidden, self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    SarlS,
    SarlF,
}

/// Beamforming back-end; `None` returns the enhancement model output directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Mcwf,
    MvdrSouden,
    None,
}

impl BackendChoice {
    pub fn beamformer(self) -> Option<Backend> {
        match self {
            BackendChoice::Mcwf => Some(Backend::Mcwf),
            BackendChoice::MvdrSouden => Some(Backend::MvdrSouden),
            BackendChoice::None => None,
        }
    }
}

/// Source of the multichannel target estimate feeding the SCMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McSeSource {
    Oracle,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub conditioning: Conditioning,
    pub backend: BackendChoice,
    pub mcse: McSeSource,
    pub oracle_mode: OracleMode,
    pub vm_in_beamformer: bool,
    pub vm_loss_enabled: bool,
    pub block_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            name: "vm_bf".into(),
            conditioning: Conditioning::None,
            backend: BackendChoice::Mcwf,
            mcse: McSeSource::Oracle,
            oracle_mode: OracleMode::Exact,
            vm_in_beamformer: true,
            vm_loss_enabled: true,
            block_len: DEFAULT_BLOCK_LEN,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(',') {
            return Err(ModelError::Config(format!("pipeline name '{}' must be non-empty without commas", self.name)));
        }
        if self.block_len == 0 {
            return Err(ModelError::Config("pipeline.block_len must be positive".into()));
        }
        if self.backend == BackendChoice::None && self.mcse == McSeSource::Oracle {
            return Err(ModelError::Config(format!(
                "pipeline '{}': backend none needs a learned enhancement model",
                self.name
            )));
        }
        if self.conditioning != Conditioning::None && self.mcse == McSeSource::Oracle {
            return Err(ModelError::Config(format!(
                "pipeline '{}': SARL conditioning needs a learned enhancement model",
                self.name
            )));
        }
        Ok(())
    }

    pub fn uses_generator(&self) -> bool {
        self.conditioning != Conditioning::None || (self.vm_in_beamformer && self.backend != BackendChoice::None)
    }
}

/// Named ablations, each a single switch on top of a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "w/o-vm-loss")]
    WithoutVmLoss,
    #[serde(rename = "w/o-vm-signals")]
    WithoutVmSignals,
    #[serde(rename = "w/o-gan")]
    WithoutGan,
    #[serde(rename = "w/o-selection")]
    WithoutSelection,
    #[serde(rename = "w/o-dca")]
    WithoutDca,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::WithoutVmLoss,
        Ablation::WithoutVmSignals,
        Ablation::WithoutGan,
        Ablation::WithoutSelection,
        Ablation::WithoutDca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::WithoutVmLoss => "w/o-vm-loss",
            Ablation::WithoutVmSignals => "w/o-vm-signals",
            Ablation::WithoutGan => "w/o-gan",
            Ablation::WithoutSelection => "w/o-selection",
            Ablation::WithoutDca => "w/o-dca",
        }
    }

    pub fn parse(s: &str) -> Result<Ablation> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
                ModelError::Config(format!("unknown ablation '{s}', expected one of {names:?}"))
            })
    }

    /// Applies the switch in place.
    pub fn apply(self, gen: &mut GeneratorConfig, loss: &mut LossConfig, pipe: &mut PipelineConfig) {
        match self {
            Ablation::WithoutVmLoss => {
                loss.w_vme = 0.0;
                pipe.vm_loss_enabled = false;
            }
            Ablation::WithoutVmSignals => pipe.vm_in_beamformer = false,
            Ablation::WithoutGan => {
                loss.w_adv_g = 0.0;
                loss.w_adv_d = 0.0;
            }
            Ablation::WithoutSelection => gen.enable_selection = false,
            Ablation::WithoutDca => gen.enable_dca = false,
        }
        pipe.name = format!("{}[{}]", pipe.name, self.name());
    }
}

//! End-to-end enhancement: virtual microphones, multichannel target
//! estimation, block beamforming over the (optionally augmented) channel
//! set, and synthesis. Every stage runs on a tape so the same code path
//! serves training and inference.

use std::ops::Range;

use vmbeam_core::beamformer::{ratio_mask, OracleMode};
use vmbeam_core::metrics::Enhancer;
use vmbeam_core::scene::AudioScene;
use vmbeam_core::{stft, StftConfig};
use vmbeam_tensor::{Bound, ParamStore, Tape, Tensor, Var};

use crate::config::{BackendChoice, Conditioning, McSeSource, PipelineConfig};
use crate::error::{shape, ModelError, Result};
use crate::generator::{Generator, VmEstimate};
use crate::mcse::McSe;
use crate::signal::{apply_mask, concat_channels, istft_var, select_channels, spec_to_tensor, beamform_var};

/// Where the virtual-microphone spectra come from.
#[derive(Debug, Clone)]
pub enum VmSource {
    /// The true VM observations (training-only information).
    Oracle,
    /// All-zero VM spectra and features.
    Zero,
    Generator { model: Generator, params: ParamStore },
}

/// Constant per-scene tensors shared by every pipeline.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    /// Mixture spectra of all channels, `[2M, T, F]`.
    pub y: Tensor,
    /// Direct-path spectra of all channels.
    pub x: Tensor,
    /// Spectra of `x_rev + n`, the part the beamformer should reject.
    pub v: Tensor,
    pub rm: Vec<usize>,
    pub vm: Vec<usize>,
    /// Position of the reference channel inside `rm`.
    pub ref_pos: usize,
    /// Reference-channel ideal ratio mask `[1, T, F]`.
    pub irm: Tensor,
    /// Samples reconstructed exactly by synthesis.
    pub interior: Range<usize>,
    /// Direct-path reference channel over `interior`, `[1, L]`.
    pub x_ref: Tensor,
    /// VM mixtures over `interior`, `[M_v, L]`.
    pub vm_ref: Tensor,
    pub samples: usize,
}

fn add_waves(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect()).collect()
}

fn rows(wave: &[Vec<f64>], idx: &[usize], r: &Range<usize>) -> Result<Tensor> {
    let data: Vec<f64> = idx.iter().flat_map(|&c| wave[c][r.clone()].iter().copied()).collect();
    Ok(Tensor::new(vec![idx.len(), r.len()], data)?)
}

impl PreparedScene {
    pub fn new(scene: &AudioScene, cfg: &StftConfig) -> Result<Self> {
        let ref_pos = scene
            .rm_channels
            .iter()
            .position(|&c| c == scene.ref_channel)
            .ok_or_else(|| ModelError::Config(format!("reference channel {} is not a real microphone", scene.ref_channel)))?;
        let ys = stft(&scene.y, cfg)?;
        let xs = stft(&scene.x, cfg)?;
        let vs = stft(&add_waves(&scene.x_rev, &scene.n), cfg)?;
        let r = [scene.ref_channel];
        let irm = ratio_mask(&xs.select_channels(&r)?, &vs.select_channels(&r)?);
        let interior = cfg.interior_range(ys.frames);
        if interior.is_empty() {
            return Err(shape("prepare", format!("{} samples give no interior region", scene.len())));
        }
        Ok(Self {
            irm: Tensor::new(vec![1, ys.frames, ys.bins], irm)?,
            y: spec_to_tensor(&ys),
            x: spec_to_tensor(&xs),
            v: spec_to_tensor(&vs),
            rm: scene.rm_channels.clone(),
            vm: scene.vm_channels.clone(),
            ref_pos,
            x_ref: rows(&scene.x, &r, &interior)?,
            vm_ref: rows(&scene.y, &scene.vm_channels, &interior)?,
            interior,
            samples: scene.len(),
        })
    }
}

/// Intermediate values of one forward pass.
pub struct Trace<'t> {
    /// Generator outputs, when a generator ran.
    pub generated: Option<VmEstimate<'t>>,
    /// VM spectra used downstream, `[2·M_v, T, F]`.
    pub vm_spec: Var<'t>,
    /// Output spectrum of the reference channel, `[2, T, F]`.
    pub out_spec: Var<'t>,
    /// Synthesized output, `[1, L_syn]`.
    pub wave: Var<'t>,
}

impl<'t> Trace<'t> {
    /// Synthesized VM signals over the interior region, `[M_v, L]`.
    pub fn vm_wave(&self, cfg: StftConfig, interior: &Range<usize>) -> Result<Var<'t>> {
        Ok(istft_var(self.vm_spec, cfg)?.slice(1, interior.start, interior.end))
    }

    pub fn out_interior(&self, interior: &Range<usize>) -> Var<'t> {
        self.wave.slice(1, interior.start, interior.end)
    }
}

/// A configured enhancement pipeline with its parameters.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub stft: StftConfig,
    pub vm: VmSource,
    pub mcse: Option<(McSe, ParamStore)>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, stft: StftConfig, vm: VmSource, mcse: Option<(McSe, ParamStore)>) -> Result<Self> {
        cfg.validate()?;
        match (&cfg.mcse, &mcse) {
            (McSeSource::Model, None) => {
                return Err(ModelError::Config(format!("pipeline '{}' needs an enhancement model", cfg.name)));
            }
            (McSeSource::Oracle, Some(_)) => {
                return Err(ModelError::Config(format!("pipeline '{}' uses the oracle but was given a model", cfg.name)));
            }
            _ => {}
        }
        if let (Conditioning::SarlF, Some((m, _)), VmSource::Generator { model, .. }) = (cfg.conditioning, &mcse, &vm) {
            if m.cfg.hidden != model.cfg.feature_dim {
                return Err(ModelError::Config(format!(
                    "SARL-F fuses {} generator features into a {}-channel embedding",
                    model.cfg.feature_dim, m.cfg.hidden
                )));
            }
        }
        Ok(Self { cfg, stft, vm, mcse })
    }

    /// Complex channel count the enhancement model must accept.
    pub fn mcse_channels(cfg: &PipelineConfig, real: usize, virt: usize) -> usize {
        match cfg.conditioning {
            Conditioning::SarlS => real + virt,
            Conditioning::None | Conditioning::SarlF => real,
        }
    }

    fn generator_bound<'t>(&self, tape: &'t Tape) -> Option<Bound<'t>> {
        match &self.vm {
            VmSource::Generator { params, .. } => Some(params.bind(tape, false)),
            _ => None,
        }
    }

    /// Full forward pass. `gen` and `mcse` override the stored parameters
    /// (the trainer binds them as tracked leaves).
    pub fn run<'t>(
        &self,
        tape: &'t Tape,
        scene: &PreparedScene,
        gen: Option<&Bound<'t>>,
        mcse: Option<&Bound<'t>>,
    ) -> Result<Trace<'t>> {
        let y = tape.constant(scene.y.clone());
        let r = select_channels(y, &scene.rm);
        let own_gen = if gen.is_none() { self.generator_bound(tape) } else { None };
        let gen = gen.or(own_gen.as_ref());

        let (generated, vm_spec) = match &self.vm {
            VmSource::Oracle => (None, select_channels(y, &scene.vm)),
            VmSource::Zero => {
                let sh = scene.y.shape();
                (None, tape.constant(Tensor::zeros(vec![2 * scene.vm.len(), sh[1], sh[2]])))
            }
            VmSource::Generator { model, .. } => {
                let p = gen.ok_or_else(|| ModelError::Config("generator parameters are not bound".into()))?;
                let est = model.forward(p, r)?;
                if est.signals.shape()[0] != 2 * scene.vm.len() {
                    return Err(shape(
                        "pipeline",
                        format!("generator emits {} VM channels, scene has {}", est.signals.shape()[0] / 2, scene.vm.len()),
                    ));
                }
                (Some(est), est.signals)
            }
        };

        let use_vm = self.cfg.vm_in_beamformer;
        let bf_in = if use_vm { concat_channels(&[r, vm_spec]) } else { r };

        let mask = match (&self.mcse, self.cfg.mcse) {
            (Some((model, params)), McSeSource::Model) => {
                let own = if mcse.is_none() { Some(params.bind(tape, false)) } else { None };
                let p = mcse.or(own.as_ref()).expect("bound above");
                let m = match self.cfg.conditioning {
                    Conditioning::None => model.mask(p, r)?,
                    Conditioning::SarlS => model.mask(p, concat_channels(&[r, vm_spec]))?,
                    Conditioning::SarlF => {
                        let h = model.encode(p, r)?;
                        let fused = match generated {
                            Some(est) => h + est.features,
                            None => h,
                        };
                        model.decode(p, fused)?
                    }
                };
                Some(m)
            }
            _ => None,
        };

        let out_spec = match self.cfg.backend.beamformer() {
            None => {
                let m = mask.ok_or_else(|| ModelError::Config("backend none needs a learned mask".into()))?;
                apply_mask(select_channels(r, &[scene.ref_pos]), m)
            }
            Some(backend) => {
                let (target, noise) = match (mask, self.cfg.oracle_mode) {
                    (Some(m), _) => {
                        let t = apply_mask(bf_in, m);
                        (t, apply_mask(bf_in, m.neg().add_scalar(1.0)))
                    }
                    (None, OracleMode::Exact) => {
                        let x = tape.constant(scene.x.clone());
                        let v = tape.constant(scene.v.clone());
                        let (xr, vr) = (select_channels(x, &scene.rm), select_channels(v, &scene.rm));
                        if use_vm {
                            let xv = select_channels(x, &scene.vm);
                            (concat_channels(&[xr, xv]), concat_channels(&[vr, vm_spec - xv]))
                        } else {
                            (xr, vr)
                        }
                    }
                    (None, OracleMode::MagMask) => {
                        let keep = scene.irm.map(|g| 1.0 - g);
                        (
                            apply_mask(bf_in, tape.constant(scene.irm.clone())),
                            apply_mask(bf_in, tape.constant(keep)),
                        )
                    }
                };
                beamform_var(bf_in, target, noise, self.cfg.block_len, scene.ref_pos, backend)?
            }
        };
        let wave = istft_var(out_spec, self.stft)?;
        Ok(Trace {
            generated,
            vm_spec,
            out_spec,
            wave,
        })
    }

    /// Reference-channel estimate padded with zeros to the scene length.
    pub fn enhance_prepared(&self, scene: &PreparedScene) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let trace = self.run(&tape, scene, None, None)?;
        let mut out = trace.wave.value().data().to_vec();
        out.resize(scene.samples, 0.0);
        Ok(out)
    }

    pub fn backend(&self) -> BackendChoice {
        self.cfg.backend
    }
}

impl Enhancer for Pipeline {
    fn name(&self) -> String {
        self.cfg.name.clone()
    }

    fn enhance(&self, scene: &AudioScene) -> vmbeam_core::Result<Vec<f64>> {
        let prepared = PreparedScene::new(scene, &self.stft).map_err(into_core)?;
        self.enhance_prepared(&prepared).map_err(into_core)
    }
}

fn into_core(e: ModelError) -> vmbeam_core::CoreError {
    match e {
        ModelError::Core(c) => c,
        other => vmbeam_core::CoreError::Config(other.to_string()),
    }
}

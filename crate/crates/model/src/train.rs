//! Deterministic training loops. Each step runs one tape per scene in a
//! fixed order, averages the gradients and applies alternating generator
//! and discriminator Adam updates. Batches depend only on `(seed, step)`,
//! so a run resumed from a checkpoint follows the uninterrupted trajectory
//! bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use vmbeam_core::rng::stream;
use vmbeam_core::StftConfig;
use vmbeam_tensor::{checkpoint, Adam, ParamStore, Tape, Tensor};

use crate::config::{Conditioning, GeneratorConfig, LossConfig, McSeConfig, McSeSource, PipelineConfig};
use crate::discriminator::{adversarial_terms, Discriminator};
use crate::error::{ModelError, Result};
use crate::generator::Generator;
use crate::loss::{composite_loss, snr_db, snr_loss, LossRecord};
use crate::mcse::McSe;
use crate::pipeline::{Pipeline, PreparedScene, VmSource};
use crate::signal::{istft_var, magnitude, select_channels};

/// Floor inside magnitudes fed to the discriminator.
const MAG_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Scenes per step; the whole set when at least its size.
    pub batch: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub seed: u64,
    /// Phase-1 steps that train only the enhancement model on the real
    /// full array. Ignored when the pipeline uses the oracle.
    pub pretrain_steps: u64,
    /// Learning-rate factor for the joint phase that follows pre-training.
    pub finetune_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 4,
            lr: 3e-3,
            disc_lr: 1e-3,
            seed: 0,
            pretrain_steps: 0,
            finetune_lr_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(ModelError::Config("train.batch must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("disc_lr", self.disc_lr), ("finetune_lr_scale", self.finetune_lr_scale)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelError::Config(format!("train.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub phase: Phase,
    pub loss: LossRecord,
    /// L2 norm of the averaged gradient of the trained (non-discriminator) parameters.
    pub grad_norm: f64,
}

pub const LOG_HEADER: &str = "step,phase,vme,bf,adv_g,adv_d,gen_loss,disc_loss,grad_norm";

/// One CSV line (without newline) in `LOG_HEADER` order.
pub fn log_row(r: &StepLog) -> String {
    let l = &r.loss;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.step,
        r.phase.name(),
        l.vme,
        l.bf,
        l.adv_g,
        l.adv_d,
        l.gen,
        l.disc,
        r.grad_norm
    )
}

pub fn log_csv(rows: &[StepLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", log_row(r));
    }
    s
}

/// Everything needed to build a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub generator: GeneratorConfig,
    pub loss: LossConfig,
    pub pipeline: PipelineConfig,
    pub mcse: McSeConfig,
    pub train: TrainConfig,
    pub stft: StftConfig,
}

pub struct Trainer {
    pub setup: TrainSetup,
    pub generator: Generator,
    pub gen_params: ParamStore,
    gen_opt: Adam,
    pub disc: Discriminator,
    pub disc_params: ParamStore,
    disc_opt: Adam,
    pub mcse: Option<McSe>,
    pub mcse_params: ParamStore,
    mcse_opt: Adam,
    pub step: u64,
    pub log: Vec<StepLog>,
}

fn grad_norm(maps: &[&BTreeMap<String, Tensor>]) -> f64 {
    maps.iter().flat_map(|m| m.values()).map(Tensor::sq_norm).sum::<f64>().sqrt()
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, g: BTreeMap<String, Tensor>) {
    for (k, v) in g {
        match acc.get_mut(&k) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(v.data()) {
                    *x += y;
                }
            }
            None => {
                acc.insert(k, v);
            }
        }
    }
}

fn average(acc: &mut BTreeMap<String, Tensor>, n: usize) {
    for t in acc.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n as f64);
    }
}

fn check_finite(step: u64, what: &'static str, rec: &LossRecord) -> Result<()> {
    let vals = [rec.vme, rec.bf, rec.adv_g, rec.adv_d, rec.gen, rec.disc];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            step,
            what,
            detail: format!("{rec:?}"),
        })
    }
}

impl Trainer {
    /// Builds models for `m_r` real and `m_v` virtual channels and
    /// initializes them from the training seed.
    pub fn new(mut setup: TrainSetup, m_r: usize, m_v: usize) -> Result<Self> {
        setup.train.validate()?;
        setup.loss.validate()?;
        setup.generator.real_channels = m_r;
        setup.generator.virtual_channels = m_v;
        let generator = Generator::new(setup.generator.clone())?;
        let mcse = match setup.pipeline.mcse {
            McSeSource::Model => Some(McSe::new(
                setup.mcse.clone(),
                Pipeline::mcse_channels(&setup.pipeline, m_r, m_v),
            )?),
            McSeSource::Oracle => None,
        };
        let seed = setup.train.seed;
        let gen_params = generator.init(vmbeam_core::rng::derive_seed(seed, 1));
        let disc = Discriminator::new(m_v);
        let disc_params = disc.init(vmbeam_core::rng::derive_seed(seed, 2));
        let mcse_params = mcse
            .as_ref()
            .map_or_else(ParamStore::new, |m| m.init(vmbeam_core::rng::derive_seed(seed, 3)));
        let trainer = Self {
            gen_opt: Adam::new(setup.train.lr),
            disc_opt: Adam::new(setup.train.disc_lr),
            mcse_opt: Adam::new(setup.train.lr),
            setup,
            generator,
            gen_params,
            disc,
            disc_params,
            mcse,
            mcse_params,
            step: 0,
            log: Vec::new(),
        };
        trainer.pipeline()?;
        Ok(trainer)
    }

    fn learned_mcse(&self) -> bool {
        self.mcse.is_some()
    }

    pub fn phase_at(&self, step: u64) -> Phase {
        if self.learned_mcse() && step < self.setup.train.pretrain_steps {
            Phase::Pretrain
        } else {
            Phase::Joint
        }
    }

    fn build(&self, vm: VmSource) -> Result<Pipeline> {
        let mcse = self.mcse.clone().map(|m| (m, self.mcse_params.clone()));
        Pipeline::new(self.setup.pipeline.clone(), self.setup.stft, vm, mcse)
    }

    /// The pipeline with the current parameters, ready for evaluation.
    pub fn pipeline(&self) -> Result<Pipeline> {
        self.build(VmSource::Generator {
            model: self.generator.clone(),
            params: self.gen_params.clone(),
        })
    }

    /// Pre-training sees the true VM signals for channel concatenation and
    /// the beamformer, and no VM features.
    fn pretrain_pipeline(&self) -> Result<Pipeline> {
        let vm = match self.setup.pipeline.conditioning {
            Conditioning::SarlF => VmSource::Zero,
            Conditioning::None | Conditioning::SarlS => VmSource::Oracle,
        };
        self.build(vm)
    }

    /// Scene indices of the batch at `step`.
    pub fn batch_indices(&self, step: u64, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.setup.train.batch >= n {
            return idx;
        }
        idx.shuffle(&mut stream(self.setup.train.seed, step));
        idx.truncate(self.setup.train.batch);
        idx
    }

    fn effective_loss(&self) -> LossConfig {
        let mut l = self.setup.loss;
        if !self.setup.pipeline.vm_loss_enabled {
            l.w_vme = 0.0;
        }
        l
    }

    /// One optimisation step on `scenes`.
    pub fn train_step(&mut self, scenes: &[PreparedScene]) -> Result<StepLog> {
        if scenes.is_empty() {
            return Err(ModelError::Config("training needs at least one scene".into()));
        }
        let step = self.step;
        let phase = self.phase_at(step);
        let batch = self.batch_indices(step, scenes.len());
        let scale = if self.setup.train.pretrain_steps > 0 && self.learned_mcse() && phase == Phase::Joint {
            self.setup.train.finetune_lr_scale
        } else {
            1.0
        };
        self.gen_opt.lr = self.setup.train.lr * scale;
        self.mcse_opt.lr = self.setup.train.lr * scale;
        self.disc_opt.lr = self.setup.train.disc_lr * scale;

        let loss_cfg = self.effective_loss();
        let adversarial = phase == Phase::Joint && loss_cfg.adversarial();
        let pipe = match phase {
            Phase::Pretrain => self.pretrain_pipeline()?,
            Phase::Joint => self.build(VmSource::Generator {
                model: self.generator.clone(),
                params: ParamStore::new(),
            })?,
        };

        let (mut g_gen, mut g_mcse, mut g_disc) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        let mut total = LossRecord::default();
        for &i in &batch {
            let scene = &scenes[i];
            if !(scene.y.is_finite() && scene.x.is_finite() && scene.v.is_finite()) {
                return Err(ModelError::NonFinite {
                    step,
                    what: "input",
                    detail: format!("scene {i} has non-finite spectra"),
                });
            }
            let tape = Tape::new();
            let gen = self.gen_params.bind(&tape, phase == Phase::Joint);
            let mcse = self.mcse_params.bind(&tape, true);
            let disc = self.disc_params.bind(&tape, adversarial);
            let trace = pipe.run(&tape, scene, Some(&gen), Some(&mcse))?;
            let bf = (trace.out_interior(&scene.interior), &scene.x_ref);
            let loss = match phase {
                Phase::Pretrain => {
                    let l = snr_loss(bf.0, bf.1, loss_cfg.snr_clip_db)?;
                    let rec = LossRecord {
                        bf: l.item(),
                        gen: l.item(),
                        ..LossRecord::default()
                    };
                    crate::loss::CompositeLoss {
                        generator: l,
                        discriminator: None,
                        record: rec,
                    }
                }
                Phase::Joint => {
                    let est = trace.generated.expect("joint phase runs the generator");
                    let vm_wave = trace.vm_wave(self.setup.stft, &scene.interior)?;
                    let adv = if adversarial {
                        let v = select_channels(tape.constant(scene.y.clone()), &scene.vm);
                        Some(adversarial_terms(
                            &self.disc,
                            &disc,
                            magnitude(v, MAG_EPS),
                            magnitude(est.signals, MAG_EPS),
                        )?)
                    } else {
                        None
                    };
                    composite_loss(&loss_cfg, Some((vm_wave, &scene.vm_ref)), Some(bf), adv)?
                }
            };
            check_finite(step, "loss", &loss.record)?;
            let grads = tape.backward(loss.generator)?;
            if phase == Phase::Joint {
                accumulate(&mut g_gen, gen.grads(&grads));
            }
            if self.learned_mcse() {
                accumulate(&mut g_mcse, mcse.grads(&grads));
            }
            if let Some(d) = loss.discriminator {
                accumulate(&mut g_disc, disc.grads(&tape.backward(d)?));
            }
            let r = &loss.record;
            total.vme += r.vme;
            total.bf += r.bf;
            total.adv_g += r.adv_g;
            total.adv_d += r.adv_d;
            total.gen += r.gen;
            total.disc += r.disc;
        }
        let n = batch.len();
        for g in [&mut g_gen, &mut g_mcse, &mut g_disc] {
            average(g, n);
        }
        let k = n as f64;
        let loss = LossRecord {
            vme: total.vme / k,
            bf: total.bf / k,
            adv_g: total.adv_g / k,
            adv_d: total.adv_d / k,
            gen: total.gen / k,
            disc: total.disc / k,
        };
        let norm = grad_norm(&[&g_gen, &g_mcse]);
        if !norm.is_finite() {
            return Err(ModelError::NonFinite {
                step,
                what: "gradient",
                detail: format!("norm {norm}"),
            });
        }
        if phase == Phase::Joint {
            self.gen_opt.step(&mut self.gen_params, &g_gen)?;
        }
        if self.learned_mcse() {
            self.mcse_opt.step(&mut self.mcse_params, &g_mcse)?;
        }
        if adversarial {
            self.disc_opt.step(&mut self.disc_params, &g_disc)?;
        }
        self.step += 1;
        let rec = StepLog {
            step,
            phase,
            loss,
            grad_norm: norm,
        };
        self.log.push(rec);
        Ok(rec)
    }

    /// Runs until `setup.train.steps` steps have been taken.
    pub fn train(&mut self, scenes: &[PreparedScene], mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        while self.step < self.setup.train.steps {
            let rec = self.train_step(scenes)?;
            on_step(&rec);
        }
        Ok(())
    }

    /// Mean per-channel SNR (dB, unclipped) of the generated VM signals.
    pub fn vme_snr(&self, scenes: &[PreparedScene]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in scenes {
            let tape = Tape::new();
            let p = self.gen_params.bind(&tape, false);
            let r = select_channels(tape.constant(s.y.clone()), &s.rm);
            let est = self.generator.forward(&p, r)?;
            let wave = istft_var(est.signals, self.setup.stft)?.slice(1, s.interior.start, s.interior.end);
            let snr = snr_db(wave, &s.vm_ref)?.value();
            total += snr.sum();
            count += snr.len();
        }
        Ok(total / count.max(1) as f64)
    }

    /// Parameters, optimizer moments and the step counter.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.gen_params.with_prefix("gen/");
        out.extend(self.disc_params.with_prefix("disc/"));
        out.extend(self.mcse_params.with_prefix("mcse/"));
        out.extend(self.gen_opt.state_tensors("opt_gen/"));
        out.extend(self.disc_opt.state_tensors("opt_disc/"));
        out.extend(self.mcse_opt.state_tensors("opt_mcse/"));
        out.insert("meta/step".into(), Tensor::scalar(self.step as f64));
        out
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let stores = [
            ("gen/", &self.gen_params),
            ("disc/", &self.disc_params),
            ("mcse/", &self.mcse_params),
        ];
        let mut loaded = Vec::new();
        for (prefix, current) in stores {
            let incoming = ParamStore::from_map(
                state
                    .iter()
                    .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
                    .collect(),
            );
            let names_match = incoming.names().eq(current.names());
            let shapes_match = incoming.iter().all(|(k, v)| current.get(k).map(|c| c.shape()) == Some(v.shape()));
            if !names_match || !shapes_match {
                return Err(ModelError::Incompatible(format!(
                    "parameters under '{prefix}' do not match the configured model"
                )));
            }
            loaded.push(incoming);
        }
        let step = state
            .get("meta/step")
            .ok_or_else(|| ModelError::Incompatible("missing meta/step".into()))?
            .item() as u64;
        self.gen_opt.load_state("opt_gen/", state)?;
        self.disc_opt.load_state("opt_disc/", state)?;
        self.mcse_opt.load_state("opt_mcse/", state)?;
        self.mcse_params = loaded.pop().unwrap();
        self.disc_params = loaded.pop().unwrap();
        self.gen_params = loaded.pop().unwrap();
        self.step = step;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.state())?)
    }

    pub fn resume(&mut self, path: &Path) -> Result<()> {
        self.load_state(&checkpoint::load(path)?)
    }
}

//! The four subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use vmbeam_core::metrics::{parse_csv, score, summarize, to_csv, MetricRecord};
use vmbeam_core::scene::AudioScene;
use vmbeam_core::wav::{write_wav, WavEncoding};
use vmbeam_core::StftConfig;
use vmbeam_model::config::{BackendChoice, Conditioning, McSeSource, PipelineConfig};
use vmbeam_model::pipeline::{Pipeline, PreparedScene, VmSource};
use vmbeam_model::train::{log_row, TrainSetup, Trainer, LOG_HEADER};

use crate::config::{slug, RunConfig};
use crate::corpus::{self, SceneStats};
use crate::error::{CliError, Result};
use crate::report;
use crate::{EvalArgs, ReportArgs, RunArgs, TrainArgs};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const SIMULATE_SUMMARY: &str = "simulate_summary.json";
pub const LATEST: &str = "latest.bin";
pub const TRAIN_LOG: &str = "log.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_TXT: &str = "report.txt";
/// Width of the SNR histogram bins printed by `simulate`.
pub const SNR_BIN_DB: f64 = 5.0;

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.bin")
}

/// Loads the run file, applies command-line overrides, validates, then
/// echoes the effective configuration to `out` and the output root.
fn effective(args: &RunArgs, out: &mut dyn Write) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.apply_ablation(a);
    }
    cfg.validate()?;
    let text = cfg.to_toml()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(EFFECTIVE_CONFIG), &text)?;
    writeln!(out, "# effective config\n{text}")?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    scenes: usize,
    rt60_measured: [f64; 2],
    rt60_eyring: [f64; 2],
    /// `(lower bin edge, count)` pairs of the reference-channel SNR.
    snr_histogram: Vec<(f64, usize)>,
    scenes_without_noise: usize,
}

fn range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
}

fn histogram(values: &[f64]) -> Vec<(f64, usize)> {
    let mut bins: Vec<(f64, usize)> = Vec::new();
    for v in values {
        let edge = (v / SNR_BIN_DB).floor() * SNR_BIN_DB;
        match bins.iter_mut().find(|(e, _)| *e == edge) {
            Some((_, c)) => *c += 1,
            None => bins.push((edge, 1)),
        }
    }
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    bins
}

fn summarize_scenes(stats: &[SceneStats]) -> SimulateSummary {
    let snrs: Vec<f64> = stats.iter().filter_map(|s| s.snr_db).collect();
    SimulateSummary {
        scenes: stats.len(),
        rt60_measured: range(stats.iter().map(|s| s.rt60_measured)),
        rt60_eyring: range(stats.iter().map(|s| s.rt60_eyring)),
        snr_histogram: histogram(&snrs),
        scenes_without_noise: stats.len() - snrs.len(),
    }
}

pub fn simulate(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = effective(args, out)?;
    let root = cfg.corpus_dir();
    let manifest = root.join(vmbeam_core::manifest::MANIFEST_FILE);
    if manifest.exists() {
        if !args.force {
            return Err(CliError::Data(format!(
                "a corpus already exists at {}; pass --force to overwrite it",
                root.display()
            )));
        }
        fs::remove_dir_all(&root)?;
    }
    let (_, stats) = corpus::generate(&cfg, &root)?;
    let summary = summarize_scenes(&stats);
    writeln!(out, "scenes: {}", summary.scenes)?;
    writeln!(
        out,
        "rt60 measured: {:.3} .. {:.3} s (eyring {:.3} .. {:.3} s)",
        summary.rt60_measured[0], summary.rt60_measured[1], summary.rt60_eyring[0], summary.rt60_eyring[1]
    )?;
    writeln!(out, "snr histogram ({SNR_BIN_DB} dB bins):")?;
    for (edge, count) in &summary.snr_histogram {
        writeln!(out, "  [{:>6.1}, {:>6.1})  {}", edge, edge + SNR_BIN_DB, "#".repeat(*count))?;
    }
    if summary.scenes_without_noise > 0 {
        writeln!(out, "  no noise sources: {}", summary.scenes_without_noise)?;
    }
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(root.join(SIMULATE_SUMMARY), json + "\n")?;
    writeln!(out, "corpus written to {}", root.display())?;
    Ok(())
}

fn setup(cfg: &RunConfig, pipeline: &PipelineConfig) -> TrainSetup {
    TrainSetup {
        generator: cfg.generator.clone(),
        loss: cfg.loss.clone(),
        pipeline: pipeline.clone(),
        mcse: cfg.mcse.clone(),
        train: cfg.train.train_config(cfg.seed),
        stft: StftConfig::default(),
    }
}

fn trainer(cfg: &RunConfig, pipeline: &PipelineConfig) -> Result<Trainer> {
    let array = cfg.geometry()?;
    Ok(Trainer::new(
        setup(cfg, pipeline),
        array.real_channels().len(),
        array.virtual_channels().len(),
    )?)
}

fn prepare(scenes: &[(String, AudioScene)]) -> Result<Vec<PreparedScene>> {
    let stft = StftConfig::default();
    scenes
        .par_iter()
        .map(|(_, s)| Ok(PreparedScene::new(s, &stft)?))
        .collect()
}

/// Writes through a temporary file so an interrupted save never leaves a
/// truncated checkpoint behind.
fn save_atomic(t: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    t.save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Keeps the log rows of the steps already taken by a resumed trainer.
fn truncated_log(path: &Path, steps: u64) -> Result<String> {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    if let Ok(old) = fs::read_to_string(path) {
        for line in old.lines().skip(1).take(steps as usize) {
            text.push_str(line);
            text.push('\n');
        }
    }
    Ok(text)
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = effective(&args.run, out)?;
    let records = corpus::open(&cfg, &cfg.corpus_dir())?;
    let pipe = cfg.pipeline(&cfg.train.pipeline).cloned().expect("validated pipeline name");
    let dir = cfg.train_dir(&pipe.name);
    let mut t = trainer(&cfg, &pipe)?;
    let latest = dir.join(LATEST);
    if args.run.force && dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    if latest.exists() {
        t.resume(&latest)?;
        writeln!(out, "resumed '{}' at step {}", pipe.name, t.step)?;
    }
    let target = args.stop_at.map_or(cfg.train.steps, |s| s.min(cfg.train.steps));
    let log_path = dir.join(TRAIN_LOG);
    fs::write(&log_path, truncated_log(&log_path, t.step)?)?;
    if t.step >= target {
        writeln!(out, "nothing to do: {} of {} steps complete", t.step, cfg.train.steps)?;
        return Ok(());
    }
    let (train_range, _) = cfg.split();
    let scenes = prepare(&corpus::load(&records, &cfg.corpus_dir(), train_range)?)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    while t.step < target {
        let rec = t.train_step(&scenes)?;
        writeln!(log, "{}", log_row(&rec))?;
        if t.step % cfg.train.checkpoint_every == 0 || t.step == cfg.train.steps {
            save_atomic(&t, &dir.join(checkpoint_name(t.step)))?;
            save_atomic(&t, &latest)?;
        }
        if t.step % 10 == 0 || t.step == target {
            writeln!(
                out,
                "step {:>6} {:>8} gen {:.4} disc {:.4}",
                t.step,
                rec.phase.name(),
                rec.loss.gen,
                rec.loss.disc
            )?;
        }
    }
    if t.step % cfg.train.checkpoint_every != 0 && t.step != cfg.train.steps {
        // interrupted between checkpoints: keep the progress made so far
        save_atomic(&t, &latest)?;
    }
    writeln!(out, "checkpoints in {}", dir.display())?;
    Ok(())
}

/// The reference-channel mixture, scored as-is.
struct Unprocessed;

impl vmbeam_core::metrics::Enhancer for Unprocessed {
    fn name(&self) -> String {
        "unprocessed".into()
    }

    fn enhance(&self, scene: &AudioScene) -> vmbeam_core::Result<Vec<f64>> {
        Ok(scene.y[scene.ref_channel].clone())
    }
}

/// Oracle-statistics MCWF over the full array and over the real channels only.
fn oracle_pipelines() -> Result<Vec<Pipeline>> {
    let full = PipelineConfig {
        name: "oracle".into(),
        conditioning: Conditioning::None,
        backend: BackendChoice::Mcwf,
        mcse: McSeSource::Oracle,
        vm_in_beamformer: true,
        ..PipelineConfig::default()
    };
    let rm = PipelineConfig {
        name: "oracle_rm".into(),
        vm_in_beamformer: false,
        ..full.clone()
    };
    Ok(vec![
        Pipeline::new(full, StftConfig::default(), VmSource::Oracle, None)?,
        Pipeline::new(rm, StftConfig::default(), VmSource::Zero, None)?,
    ])
}

/// Whether a pipeline runs without any learned parameters.
fn parameter_free(p: &PipelineConfig) -> bool {
    p.mcse == McSeSource::Oracle && !p.vm_in_beamformer && p.conditioning == Conditioning::None
}

fn trained_pipeline(cfg: &RunConfig, p: &PipelineConfig, checkpoint: Option<&PathBuf>) -> Result<Pipeline> {
    if parameter_free(p) {
        return Ok(Pipeline::new(p.clone(), StftConfig::default(), VmSource::Zero, None)?);
    }
    let path = match checkpoint {
        Some(c) if p.name == cfg.train.pipeline => c.clone(),
        _ => cfg.train_dir(&p.name).join(LATEST),
    };
    if !path.exists() {
        return Err(CliError::Data(format!(
            "pipeline '{}' has no checkpoint at {}; train it or pass --oracle-only",
            p.name,
            path.display()
        )));
    }
    let mut t = trainer(cfg, p)?;
    t.resume(&path)
        .map_err(|e| CliError::Data(format!("checkpoint {} does not fit pipeline '{}': {e}", path.display(), p.name)))?;
    Ok(t.pipeline()?)
}

pub fn evaluate(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = effective(&args.run, out)?;
    let root = cfg.corpus_dir();
    let records = corpus::open(&cfg, &root)?;
    let mut pipelines = oracle_pipelines()?;
    if !args.oracle_only {
        for p in &cfg.pipelines {
            pipelines.push(trained_pipeline(&cfg, p, args.checkpoint.as_ref())?);
        }
    }
    let unprocessed = Unprocessed;
    let mut enhancers: Vec<&dyn vmbeam_core::metrics::Enhancer> = vec![&unprocessed];
    enhancers.extend(pipelines.iter().map(|p| p as &dyn vmbeam_core::metrics::Enhancer));

    let (_, eval_range) = cfg.split();
    let scenes = corpus::load(&records, &root, eval_range)?;
    let stft = StftConfig::default();
    let rows: Vec<Result<Vec<MetricRecord>>> = scenes
        .par_iter()
        .map(|(id, scene)| {
            let reference = &scene.x[scene.ref_channel];
            enhancers
                .iter()
                .map(|e| {
                    let est = e.enhance(scene)?;
                    let name = e.name();
                    let wav = root.join("scenes").join(format!("{id}_enh_{}.wav", slug(&name)));
                    write_wav(&wav, std::slice::from_ref(&est), WavEncoding::Float32)?;
                    Ok(score(id, &name, &est, reference, &stft)?)
                })
                .collect()
        })
        .collect();
    let mut metrics = Vec::new();
    for r in rows {
        metrics.extend(r?);
    }
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(METRICS_CSV), to_csv(&metrics))?;
    let summaries = summarize(&metrics, cfg.seed);
    let json = serde_json::to_string_pretty(&summaries).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join(SUMMARY_JSON), json + "\n")?;
    write!(out, "{}", report::table(&summaries, None)?)?;
    writeln!(out, "metrics in {}", dir.display())?;
    Ok(())
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "# effective options\ncsv = {:?}\nout = {:?}\nbaseline = {:?}\nseed = {}\n",
        args.csv, args.out, args.baseline, args.seed
    )?;
    let mut records = Vec::new();
    for path in &args.csv {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let rows = parse_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        records.extend(rows);
    }
    let summaries = summarize(&records, args.seed);
    let table = report::table(&summaries, args.baseline.as_deref())?;
    let txt = args.out.join(REPORT_TXT);
    if txt.exists() && !args.force {
        return Err(CliError::Data(format!(
            "{} exists; pass --force to overwrite it",
            txt.display()
        )));
    }
    fs::create_dir_all(&args.out)?;
    fs::write(&txt, &table)?;
    for m in report::METRICS {
        fs::write(args.out.join(format!("plot_{m}.csv")), report::plot_data(&summaries, m))?;
    }
    write!(out, "{table}")?;
    Ok(())
}

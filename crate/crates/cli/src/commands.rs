//! Pipeline stages behind each subcommand. Every stage reads and writes
//! under one output directory:
//!
//! ```text
//! <out>/data/series.csv        observed series (gen-synth)
//! <out>/data/latent.csv        noise-free latent series (gen-synth)
//! <out>/traces/<name>-l<L>-t<T>/   teacher traces (gen-trace)
//! <out>/checkpoints/model.ckpt (train)
//! <out>/reports/...            run records, metrics, ablation tables
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tsdistill::data::{load_csv, make_windows, synth_seesaw, DataBundle, SeesawConfig, SeriesDataset, Split};
use tsdistill::gradsuite::{run_gradient_suite, SuiteResult};
use tsdistill::metrics::MetricReport;
use tsdistill::teacher::{read_trace, synthetic_oracle, validate_trace, write_trace, TeacherTrace, TraceReport};
use tsdistill::trainer::{ablation_harness, checkpoint_load, checkpoint_save, train, AblationTable, KdVariant, RunRecord};
use tsdistill::{Error, Result};

use crate::config::{ExperimentConfig, TeacherSource};

pub const SERIES_CSV: &str = "data/series.csv";
pub const LATENT_CSV: &str = "data/latent.csv";
pub const CHECKPOINT: &str = "checkpoints/model.ckpt";
pub const RUN_RECORD: &str = "reports/run_record.json";
pub const EVAL_REPORT: &str = "reports/eval.json";
pub const RESOLVED_CONFIG: &str = "reports/config.toml";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(format!("json encode: {e}")))?;
    write_text(path, &(text + "\n"))
}

pub fn trace_dir(cfg: &ExperimentConfig, out: &Path, horizon: usize) -> PathBuf {
    out.join("traces")
        .join(format!("{}-l{}-t{horizon}", cfg.teacher.name, cfg.data.lookback))
}

/// Writes the observed and latent seesaw series as CSV.
pub fn gen_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let s = &cfg.synth;
    let series = synth_seesaw(&SeesawConfig {
        channels: s.channels,
        lookback: cfg.data.lookback,
        horizon: cfg.data.horizon,
        length: s.length,
        easy_amp: s.easy_amp,
        hard_snr: s.hard_snr,
        seed: s.seed,
        split: cfg.data.split.clone(),
    })?;
    let paths = vec![out.join(SERIES_CSV), out.join(LATENT_CSV)];
    ensure_parent(&paths[0])?;
    series.observed.save_csv(&paths[0])?;
    series.latent.save_csv(&paths[1])?;
    Ok(paths)
}

/// The series named by `[data].csv`, else the one `gen-synth` wrote.
pub fn load_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<SeriesDataset> {
    let path = cfg.data.csv.clone().unwrap_or_else(|| out.join(SERIES_CSV));
    if !path.is_file() {
        return Err(Error::Config(format!(
            "no input series at {}; set data.csv or run gen-synth first",
            path.display()
        )));
    }
    load_csv(&path, &cfg.data.split)
}

pub fn load_bundle(cfg: &ExperimentConfig, dataset: &SeriesDataset, horizon: usize) -> Result<DataBundle> {
    DataBundle::build(dataset, cfg.data.lookback, horizon, cfg.data.train_stride, cfg.data.normalization)
}

fn teacher_source(cfg: &ExperimentConfig, out: &Path, observed: SeriesDataset) -> Result<SeriesDataset> {
    let latent = out.join(LATENT_CSV);
    let use_latent = match cfg.teacher.source {
        TeacherSource::Observed => false,
        TeacherSource::Latent => true,
        TeacherSource::Auto => cfg.data.csv.is_none() && latent.is_file(),
    };
    if !use_latent {
        return Ok(observed);
    }
    if !latent.is_file() {
        return Err(Error::Config(format!(
            "teacher.source = latent but {} does not exist",
            latent.display()
        )));
    }
    let ds = load_csv(&latent, &cfg.data.split)?;
    if ds.values().shape() != observed.values().shape() {
        return Err(Error::Contract("latent and observed series differ in shape".into()));
    }
    Ok(ds)
}

/// Records a synthetic oracle trace over the training windows for every
/// configured horizon.
pub fn gen_trace(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let observed = load_dataset(cfg, out)?;
    let source = teacher_source(cfg, out, observed)?;
    let mut dirs = Vec::new();
    for h in cfg.horizons() {
        let windows = make_windows(&source, cfg.data.lookback, h, cfg.data.train_stride, Split::Train)?;
        let t = &cfg.teacher;
        let trace = synthetic_oracle(&windows, t.noise_sigma, t.hidden_dim, t.seed)?;
        let dir = trace_dir(cfg, out, h);
        write_trace(&trace, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn load_trace_for(cfg: &ExperimentConfig, out: &Path, horizon: usize, variants: &[KdVariant]) -> Result<Option<TeacherTrace>> {
    if variants.iter().all(|&v| v == KdVariant::Baseline) {
        return Ok(None);
    }
    let dir = trace_dir(cfg, out, horizon);
    if !dir.join(tsdistill::teacher::MANIFEST_FILE).is_file() {
        return Err(Error::Config(format!(
            "no teacher trace at {}; run gen-trace first",
            dir.display()
        )));
    }
    read_trace(&dir).map(Some)
}

/// `reports/run_record.json`: the resolved experiment plus the run record.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub experiment: &'a ExperimentConfig,
    pub record: &'a RunRecord,
}

#[derive(Debug, Serialize)]
struct Timing {
    stage: &'static str,
    wall_seconds: f64,
}

pub struct TrainSummary {
    pub record: RunRecord,
    pub wall_seconds: f64,
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let dataset = load_dataset(cfg, out)?;
    let data = load_bundle(cfg, &dataset, cfg.data.horizon)?;
    let trace = load_trace_for(cfg, out, cfg.data.horizon, &[cfg.train.kd_variant])?;
    let outcome = train(&cfg.train, &data, trace.as_ref())?;
    let ckpt = out.join(CHECKPOINT);
    ensure_parent(&ckpt)?;
    checkpoint_save(&ckpt, &outcome.model, &outcome.record.config)?;
    write_json(
        &out.join(RUN_RECORD),
        &RunReport {
            experiment: cfg,
            record: &outcome.record,
        },
    )?;
    write_text(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    let wall_seconds = outcome.wall_time.as_secs_f64();
    write_json(
        &out.join("reports/timing.json"),
        &Timing {
            stage: "train",
            wall_seconds,
        },
    )?;
    Ok(TrainSummary {
        record: outcome.record,
        wall_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub parameter_count: usize,
    pub metrics: MetricReport,
}

/// Test-split metrics of a checkpoint, de-normalized unless `normalized`.
pub fn eval_cmd(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, normalized: bool) -> Result<(EvalReport, f64)> {
    let started = Instant::now();
    let ckpt = checkpoint.map_or_else(|| out.join(CHECKPOINT), Path::to_path_buf);
    let (model, _) = checkpoint_load(&ckpt)?;
    let horizon = model.student.horizon();
    if model.student.lookback() != cfg.data.lookback {
        return Err(Error::Contract(format!(
            "checkpoint lookback {} differs from data.lookback {}",
            model.student.lookback(),
            cfg.data.lookback
        )));
    }
    let dataset = load_dataset(cfg, out)?;
    let data = load_bundle(cfg, &dataset, horizon)?;
    let metrics = model.evaluate(&data.test, !normalized)?;
    let report = EvalReport {
        checkpoint: ckpt.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        parameter_count: model.student.parameter_count(),
        metrics,
    };
    write_json(&out.join(EVAL_REPORT), &report)?;
    Ok((report, started.elapsed().as_secs_f64()))
}

/// Runs the ablation for each configured horizon and writes
/// `reports/ablation_runs.csv`, `reports/ablation_summary.csv` and
/// `reports/ablation.txt`.
pub fn ablate_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationTable>> {
    let dataset = load_dataset(cfg, out)?;
    let horizons = if cfg.ablate.horizons.is_empty() {
        vec![cfg.data.horizon]
    } else {
        cfg.ablate.horizons.clone()
    };
    let mut tables = Vec::new();
    for h in horizons {
        let data = load_bundle(cfg, &dataset, h)?;
        let trace = load_trace_for(cfg, out, h, &cfg.ablate.variants)?;
        tables.push(ablation_harness(&cfg.train, &data, trace.as_ref(), &cfg.ablate.variants, &cfg.ablate.seeds)?);
    }
    let join = |f: &dyn Fn(&AblationTable) -> Result<String>| -> Result<String> {
        let mut text = String::new();
        for (i, t) in tables.iter().enumerate() {
            let part = f(t)?;
            // keep a single header line across horizons
            let body = if i == 0 { part.as_str() } else { part.split_once('\n').map_or("", |(_, b)| b) };
            text.push_str(body);
        }
        Ok(text)
    };
    write_text(&out.join("reports/ablation_runs.csv"), &join(&|t| t.runs_csv())?)?;
    write_text(&out.join("reports/ablation_summary.csv"), &join(&|t| t.summary_csv())?)?;
    let human: Vec<String> = tables.iter().map(AblationTable::to_text).collect();
    write_text(&out.join("reports/ablation.txt"), &human.join("\n"))?;
    write_json(&out.join("reports/ablation.json"), &tables)?;
    Ok(tables)
}

pub fn grad_check_cmd(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    run_gradient_suite(instances, seed)
}

pub fn trace_validate_cmd(dir: &Path) -> Result<TraceReport> {
    validate_trace(dir)
}

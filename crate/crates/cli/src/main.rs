use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsdistill::Error;
use tsdistill_cli::commands;
use tsdistill_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "tsdistill", version, about = "Knowledge distillation for time-series forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Experiment {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set train.tau=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory all stages read from and write to.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

impl Experiment {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic seesaw series under <out>/data.
    GenSynth(Experiment),
    /// Record teacher traces for the training windows under <out>/traces.
    GenTrace(Experiment),
    /// Train one student and write its checkpoint and run record.
    Train(Experiment),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        exp: Experiment,
        /// Checkpoint to evaluate; defaults to <out>/checkpoints/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report metrics in normalized units instead of original units.
        #[arg(long)]
        normalized: bool,
    },
    /// Train every configured variant for every seed and tabulate.
    Ablate(Experiment),
    /// gen-synth (unless data.csv is set), gen-trace, train and eval.
    Pipeline(Experiment),
    /// Finite-difference check of every objective and student.
    GradCheck {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a trace directory against its manifest.
    TraceValidate { dir: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::GenTrace(_) => "gen-trace",
            Command::Train(_) => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate(_) => "ablate",
            Command::Pipeline(_) => "pipeline",
            Command::GradCheck { .. } => "grad-check",
            Command::TraceValidate { .. } => "trace-validate",
        }
    }
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn train_and_report(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let s = commands::train_cmd(cfg, out)?;
    let r = &s.record;
    println!(
        "{} seed {}: {} epochs (best {}), val mse {:.6}, test mse {:.6} mae {:.6} [{:.1}s]",
        r.variant,
        r.seed,
        r.epochs.len(),
        r.best_epoch,
        r.best_val_mse,
        r.test.mse,
        r.test.mae,
        s.wall_seconds
    );
    Ok(())
}

fn eval_and_report(cfg: &ExperimentConfig, out: &Path, ckpt: Option<&Path>, normalized: bool) -> Result<(), Error> {
    let (report, secs) = commands::eval_cmd(cfg, out, ckpt, normalized)?;
    let m = &report.metrics;
    let units = if m.denormalized { "original" } else { "normalized" };
    println!(
        "test ({} windows, {units} units): mse {:.6} mae {:.6} tail mse {:.6} [{secs:.1}s]",
        m.windows,
        m.mse,
        m.mae,
        m.tail_mse()
    );
    Ok(())
}

fn run(command: &Command) -> Result<bool, Error> {
    match command {
        Command::GenSynth(e) => list(&commands::gen_synth(&e.load()?, &e.out)?),
        Command::GenTrace(e) => list(&commands::gen_trace(&e.load()?, &e.out)?),
        Command::Train(e) => train_and_report(&e.load()?, &e.out)?,
        Command::Eval {
            exp,
            checkpoint,
            normalized,
        } => eval_and_report(&exp.load()?, &exp.out, checkpoint.as_deref(), *normalized)?,
        Command::Ablate(e) => {
            for table in commands::ablate_cmd(&e.load()?, &e.out)? {
                println!("{}", table.to_text());
            }
        }
        Command::Pipeline(e) => {
            let cfg = e.load()?;
            if cfg.data.csv.is_none() {
                list(&commands::gen_synth(&cfg, &e.out)?);
            }
            list(&commands::gen_trace(&cfg, &e.out)?);
            train_and_report(&cfg, &e.out)?;
            eval_and_report(&cfg, &e.out, None, false)?;
        }
        Command::GradCheck { instances, seed } => {
            let results = commands::grad_check_cmd(*instances, *seed)?;
            for r in &results {
                println!(
                    "{} {:<24} instances {:>3} coords {:>6} max rel err {:.3e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.instances,
                    r.coordinates,
                    r.max_rel_err
                );
            }
            return Ok(results.iter().all(|r| r.passed));
        }
        Command::TraceValidate { dir } => {
            let report = commands::trace_validate_cmd(dir)?;
            let m = &report.manifest;
            println!(
                "ok: {} windows, lookback {}, horizon {}, {} channels, hidden dim {}",
                m.window_count, m.lookback, m.horizon, m.channels, m.hidden_dim
            );
            for w in &report.warnings {
                println!("warning: {w}");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error[{}] in {}: {e}", e.class(), cli.command.name());
            ExitCode::FAILURE
        }
    }
}

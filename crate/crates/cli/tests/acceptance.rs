//! Acceptance criteria A1–A9. Runs as a plain binary so that each criterion
//! prints one PASS/FAIL line; exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsdistill::data::{make_windows, synth_seesaw, DataBundle, Normalization, SeesawConfig, Split};
use tsdistill::fta::{boundary_construction, fta_forward, AlignmentPair};
use tsdistill::gradsuite::run_gradient_suite;
use tsdistill::losses::HorizonWeights;
use tsdistill::students::{StudentConfig, StudentKind};
use tsdistill::teacher::{
    read_trace, synthetic_oracle, write_trace, TeacherTrace, TraceInfo, TraceManifest, HIDDEN_FILE, MANIFEST_FILE,
    PREDICTIONS_FILE,
};
use tsdistill::trainer::{ablation_harness, train, AblationTable, KdVariant, TrainConfig};
use tsdistill::{Array, Error, TraceError};
use tsdistill_cli::config::ExperimentConfig;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn a1_weight_law() -> Check {
    let mut checked = 0;
    for tau in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
        for t in [1usize, 2, 8, 96, 192] {
            let w = HorizonWeights::new(tau, t).map_err(|e| e.to_string())?;
            let w = w.as_slice();
            let mean = w.iter().sum::<f64>() / t as f64;
            ensure((mean - 1.0).abs() <= 1e-12, || format!("tau {tau} T {t}: mean {mean}"))?;
            if t >= 2 {
                if tau > 0.0 {
                    ensure(w.windows(2).all(|p| p[1] > p[0]), || format!("tau {tau} T {t}: not increasing"))?;
                }
                let ratio = w[t - 1] / w[0];
                ensure((ratio - tau.exp()).abs() <= 1e-9 * tau.exp(), || {
                    format!("tau {tau} T {t}: ratio {ratio} vs {}", tau.exp())
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (tau, T) pairs"))
}

fn a2_gradient_oracle() -> Check {
    let results = run_gradient_suite(5, 2024).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in &results {
        ensure(r.passed && r.instances >= 5, || format!("{}: max rel err {:.3e}", r.name, r.max_rel_err))?;
        worst = worst.max(r.max_rel_err);
    }
    ensure(results.len() == 8, || format!("expected 8 suites, got {}", results.len()))?;
    Ok(format!("{} suites x 5 instances, worst rel err {worst:.2e}", results.len()))
}

fn a3_exact_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (b, d, t) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..24));
        let x = Array::from_fn(vec![b, d, t], |_| rng.random_range(-50.0..50.0));
        let (module, h) = boundary_construction(&x).map_err(|e| e.to_string())?;
        let target = x.clone().reshape(vec![b, d, t, 1]).map_err(|e| e.to_string())?;
        let loss = AlignmentPair::new(h.clone(), target)
            .and_then(|p| p.loss(&module))
            .map_err(|e| e.to_string())?;
        ensure(loss < 1e-10, || format!("case {case}: fta loss {loss:e}"))?;
        worst = worst.max(loss);

        let base = fta_forward(&module, &h).map_err(|e| e.to_string())?;
        let k = rng.random_range(0..x.len());
        let delta = 0.25;
        let mut bumped = h.clone();
        bumped.data_mut()[k] += delta;
        let moved = fta_forward(&module, &bumped).map_err(|e| e.to_string())?;
        let changed: Vec<usize> = (0..base.len()).filter(|&i| moved.data()[i] != base.data()[i]).collect();
        ensure(changed.len() == 1, || format!("case {case}: {} entries changed", changed.len()))?;
        let shift = moved.data()[changed[0]] - base.data()[changed[0]];
        ensure((shift - delta).abs() < 1e-12, || format!("case {case}: entry moved by {shift}"))?;
    }
    Ok(format!("100 sequences, max loss {worst:.1e}, single-entry perturbation"))
}

fn random_trace(rng: &mut ChaCha8Rng) -> TeacherTrace {
    let (n, t, c) = (rng.random_range(1..12), rng.random_range(1..40), rng.random_range(1..5));
    let d = rng.random_range(1..9);
    let p = Array::from_fn(vec![n, t, c], |_| rng.random_range(-1e3..1e3));
    let hidden = rng.random_bool(0.7).then(|| Array::from_fn(vec![n, c, t, d], |_| rng.random_range(-5.0..5.0)));
    TeacherTrace::new(TraceInfo::new("random", rng.random_range(1..64)), p, hidden).unwrap()
}

fn expect_trace_error(dir: &Path, case: &str, want: fn(&TraceError) -> bool) -> Result<(), String> {
    match read_trace(dir) {
        Err(Error::Trace(e)) if want(&e) => Ok(()),
        other => Err(format!("{case}: got {other:?}")),
    }
}

fn a7_trace_roundtrip() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..50 {
        let trace = random_trace(&mut rng);
        let dir = root.path().join(format!("trace{i}"));
        write_trace(&trace, &dir).map_err(|e| e.to_string())?;
        let back = read_trace(&dir).map_err(|e| e.to_string())?;
        let bits = |a: &Array| a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(back.predictions()) == bits(trace.predictions()), || format!("trace {i}: predictions differ"))?;
        ensure(back.hidden().map(bits) == trace.hidden().map(bits), || format!("trace {i}: hidden differ"))?;
        ensure(back == trace, || format!("trace {i}: manifest differs"))?;
    }

    let fresh = |name: &str| -> Result<std::path::PathBuf, String> {
        let dir = root.path().join(name);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trace = random_trace(&mut rng);
        while trace.hidden().is_none() {
            trace = random_trace(&mut rng);
        }
        write_trace(&trace, &dir).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let edit_manifest = |dir: &Path, f: &dyn Fn(&mut TraceManifest)| {
        let path = dir.join(MANIFEST_FILE);
        let mut m: TraceManifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        f(&mut m);
        fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    };

    let dir = fresh("missing")?;
    fs::remove_file(dir.join(HIDDEN_FILE)).unwrap();
    expect_trace_error(&dir, "missing blob", |e| matches!(e, TraceError::MissingBlob(_)))?;

    let dir = fresh("truncated")?;
    let bytes = fs::read(dir.join(PREDICTIONS_FILE)).unwrap();
    fs::write(dir.join(PREDICTIONS_FILE), &bytes[..bytes.len() - 1]).unwrap();
    expect_trace_error(&dir, "truncated blob", |e| matches!(e, TraceError::Truncated { .. }) && e.is_integrity())?;

    let dir = fresh("padded")?;
    let mut bytes = fs::read(dir.join(HIDDEN_FILE)).unwrap();
    bytes.extend_from_slice(&[0; 4]);
    fs::write(dir.join(HIDDEN_FILE), bytes).unwrap();
    expect_trace_error(&dir, "padded blob", |e| matches!(e, TraceError::Truncated { .. }) && e.is_integrity())?;

    let dir = fresh("flipped")?;
    let mut bytes = fs::read(dir.join(PREDICTIONS_FILE)).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x10;
    fs::write(dir.join(PREDICTIONS_FILE), bytes).unwrap();
    expect_trace_error(&dir, "flipped byte", |e| matches!(e, TraceError::ChecksumMismatch { .. }))?;

    let dir = fresh("extent")?;
    edit_manifest(&dir, &|m| m.window_count += 1);
    expect_trace_error(&dir, "extent edit", |e| matches!(e, TraceError::ExtentMismatch { .. }))?;

    let dir = fresh("version")?;
    edit_manifest(&dir, &|m| m.schema_version = 99);
    expect_trace_error(&dir, "schema version", |e| matches!(e, TraceError::Version { found: 99, .. }))?;

    let dir = fresh("garbled")?;
    fs::write(dir.join(MANIFEST_FILE), "{\"schema_version\": 1,").unwrap();
    expect_trace_error(&dir, "garbled manifest", |e| matches!(e, TraceError::Manifest(_)))?;

    Ok("50 random traces bit-exact; 7 corruption cases classified".into())
}

/// The seesaw setting shared by A4–A6.
struct Seesaw {
    data: DataBundle,
    trace: TeacherTrace,
    base: TrainConfig,
}

fn seesaw() -> Seesaw {
    let (lookback, horizon) = (96, 48);
    let series = synth_seesaw(&SeesawConfig {
        channels: 3,
        lookback,
        horizon,
        length: 3000,
        hard_snr: 2.0,
        seed: 0,
        ..SeesawConfig::default()
    })
    .unwrap();
    let data = DataBundle::build(&series.observed, lookback, horizon, 1, Normalization::PerWindow).unwrap();
    let latent = make_windows(&series.latent, lookback, horizon, 1, Split::Train).unwrap();
    let trace = synthetic_oracle(&latent, 0.05, 8, 7).unwrap();
    let base = TrainConfig {
        student: StudentConfig {
            kind: StudentKind::Variate,
            trend_kernel: 25,
            d_model: 16,
            d_ff: 32,
        },
        epochs: 8,
        ..TrainConfig::default()
    };
    Seesaw { data, trace, base }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn harness(s: &Seesaw, base: &TrainConfig, variants: &[KdVariant]) -> Result<(AblationTable, Duration), String> {
    let started = Instant::now();
    let table = ablation_harness(base, &s.data, Some(&s.trace), variants, &SEEDS).map_err(|e| e.to_string())?;
    Ok((table, started.elapsed()))
}

fn a4_horizon_weighting(s: &Seesaw) -> Check {
    let hw = |tau| TrainConfig {
        tau,
        ..s.base.clone()
    };
    let (t2, d2) = harness(s, &hw(2.0), &[KdVariant::OnlyHw])?;
    let (t0, d0) = harness(s, &hw(0.0), &[KdVariant::OnlyHw])?;
    let (a, b) = (&t2.summary[0], &t0.summary[0]);
    let secs = (d2 + d0).as_secs_f64();
    let detail = format!(
        "tail mse tau2 {:.4} vs tau0 {:.4}; overall {:.4} vs {:.4} ({:+.2}%); {secs:.0}s",
        a.tail_mse_mean,
        b.tail_mse_mean,
        a.mse_mean,
        b.mse_mean,
        100.0 * (a.mse_mean / b.mse_mean - 1.0)
    );
    ensure(a.tail_mse_mean < b.tail_mse_mean, || detail.clone())?;
    ensure(a.mse_mean <= 1.05 * b.mse_mean, || detail.clone())?;
    ensure(secs < 300.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn valid_stats(table: &AblationTable) -> Result<(), String> {
    for v in &table.summary {
        let runs: Vec<f64> = table.runs_for(v.variant).map(|r| r.mse).collect();
        ensure(v.runs == SEEDS.len() && runs.len() == SEEDS.len(), || format!("{}: {} runs", v.variant, v.runs))?;
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let std = (runs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs.len() - 1) as f64).sqrt();
        ensure(
            (v.mse_mean - mean).abs() <= 1e-12 * mean && (v.mse_std - std).abs() <= 1e-9 * std.max(1e-12),
            || format!("{}: summary {} ± {} vs {mean} ± {std}", v.variant, v.mse_mean, v.mse_std),
        )?;
        ensure(
            [v.mse_mean, v.mse_std, v.mae_mean, v.mae_std, v.tail_mse_mean].iter().all(|x| x.is_finite() && *x >= 0.0),
            || format!("{}: non-finite statistics", v.variant),
        )?;
    }
    Ok(())
}

fn a5_a6(s: &Seesaw) -> (Check, Check) {
    let variants = [KdVariant::Distilts, KdVariant::Baseline, KdVariant::FdKd, KdVariant::TKd];
    let (table, elapsed) = match harness(s, &s.base, &variants) {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let per_seed = |v| table.runs_for(v).map(|r| r.mse).collect::<Vec<_>>();
    let mean = |v| table.summary_for(v).map_or(f64::NAN, |s| s.mse_mean);
    let secs = elapsed.as_secs_f64();

    let (d, b) = (mean(KdVariant::Distilts), mean(KdVariant::Baseline));
    let detail = format!("distilts {d:.4} vs baseline {b:.4}; {secs:.0}s for 4 variants x 5 seeds");
    let a5 = ensure(d < b && secs < 600.0, || detail.clone()).map(|_| detail);

    let a6 = valid_stats(&table).and_then(|_| {
        let (dist, fd, tk) = (per_seed(KdVariant::Distilts), per_seed(KdVariant::FdKd), per_seed(KdVariant::TKd));
        let worse = (0..SEEDS.len()).filter(|&i| dist[i] > fd[i] && dist[i] > tk[i]).count();
        let detail = format!(
            "distilts {:.4}, fd_kd {:.4}, t_kd {:.4}; distilts worse than both on {worse}/5 seeds",
            d,
            mean(KdVariant::FdKd),
            mean(KdVariant::TKd)
        );
        ensure(worse <= 2 && !table.summary_csv().unwrap_or_default().is_empty(), || detail.clone()).map(|_| detail)
    });
    (a5, a6)
}

const PIPELINE_CONFIG: &str = r#"
[data]
lookback = 32
horizon = 16

[synth]
length = 900
seed = 3

[train]
epochs = 3
batch_size = 32
kd_variant = "distilts"

[train.student]
kind = "variate"
d_model = 8
d_ff = 16
"#;

fn a8_pipeline_determinism() -> Check {
    let started = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("exp.toml");
    fs::write(&config, PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    for run in ["a", "b"] {
        let out = root.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_tsdistill"))
            .args(["pipeline", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("run {run} failed: {}", String::from_utf8_lossy(&status.stderr))
        })?;
        records.push(fs::read(out.join("reports/run_record.json")).map_err(|e| e.to_string())?);
        checkpoints.push(fs::read(out.join("checkpoints/model.ckpt")).map_err(|e| e.to_string())?);
    }
    ensure(records[0] == records[1], || "run records differ".into())?;
    ensure(checkpoints[0] == checkpoints[1], || "checkpoints differ".into())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("two pipelines took {secs:.0}s"))?;
    Ok(format!("run_record.json ({} bytes) and checkpoint identical; {secs:.1}s", records[0].len()))
}

fn a9_variant_lattice() -> Check {
    let exp = |variant: &str| {
        ExperimentConfig::from_toml(
            "[data]\nlookback = 24\nhorizon = 8\n",
            &[format!("train.kd_variant={variant}"), "train.tau=2".into()],
        )
        .map(|c| c.train.effective())
        .map_err(|e| e.to_string())
    };
    let (b, hw, fta) = (exp("baseline")?, exp("only_hw")?, exp("only_fta")?);
    ensure(b.loss.lambda_kd == 0.0 && b.loss.lambda_fta == 0.0 && b.tau == 0.0, || format!("baseline {b:?}"))?;
    ensure(hw.loss.lambda_fta == 0.0 && hw.tau == 2.0 && hw.loss.lambda_kd > 0.0, || format!("only_hw {hw:?}"))?;
    ensure(fta.tau == 0.0 && fta.loss.lambda_fta > 0.0, || format!("only_fta {fta:?}"))?;

    let series = synth_seesaw(&SeesawConfig {
        channels: 2,
        lookback: 24,
        horizon: 8,
        length: 500,
        seed: 9,
        ..SeesawConfig::default()
    })
    .unwrap();
    let data = DataBundle::build(&series.observed, 24, 8, 2, Normalization::PerWindow).unwrap();
    let trace = synthetic_oracle(&make_windows(&series.latent, 24, 8, 2, Split::Train).unwrap(), 0.05, 4, 1).unwrap();
    let base = TrainConfig {
        student: StudentConfig {
            kind: StudentKind::Variate,
            trend_kernel: 5,
            d_model: 8,
            d_ff: 16,
        },
        epochs: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let run = |variant, trace: Option<&TeacherTrace>, f: &dyn Fn(&mut TrainConfig)| {
        let mut cfg = TrainConfig {
            kd_variant: variant,
            ..base.clone()
        };
        f(&mut cfg);
        train(&cfg, &data, trace).map(|o| o.record).map_err(|e| e.to_string())
    };

    let baseline = run(KdVariant::Baseline, Some(&trace), &|_| {})?;
    let kd_free = run(KdVariant::Distilts, None, &|c| {
        c.loss.lambda_kd = 0.0;
        c.loss.lambda_fta = 0.0;
        c.tau = 0.0;
    })?;
    ensure(baseline.epochs == kd_free.epochs && baseline.test == kd_free.test, || {
        "baseline differs from the KD-free run".into()
    })?;
    for e in &baseline.epochs {
        let t = &e.train;
        ensure(t.kd.is_none() && t.fta.is_none() && t.total == t.supervised, || format!("baseline breakdown {t:?}"))?;
    }

    let only_hw = run(KdVariant::OnlyHw, Some(&trace), &|_| {})?;
    for e in &only_hw.epochs {
        let t = &e.train;
        let kd = t.kd.ok_or("only_hw has no kd term")?;
        let recomposed = t.supervised + only_hw.config.loss.lambda_kd * kd;
        ensure(t.fta.is_none() && (t.total - recomposed).abs() <= 1e-9 * t.total, || format!("only_hw breakdown {t:?}"))?;
    }
    let only_fta = run(KdVariant::OnlyFta, Some(&trace), &|_| {})?;
    ensure(only_fta.config.tau == 0.0, || "only_fta record keeps tau".into())?;
    for e in &only_fta.epochs {
        ensure(e.train.kd.is_some() && e.train.fta.is_some(), || format!("only_fta breakdown {:?}", e.train))?;
    }
    let uniform = HorizonWeights::new(only_fta.config.tau, 8).map_err(|e| e.to_string())?;
    ensure(uniform.as_slice().iter().all(|&w| w == 1.0), || "only_fta weights not uniform".into())?;
    Ok("baseline = KD-free path; only_hw drops fta; only_fta has uniform weights".into())
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, title: &str, started: Instant, result: Check| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{id} PASS  {title}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {title}: {detail} [{secs:.2}s]");
            }
        }
    };

    let t = Instant::now();
    let r = a1_weight_law().and_then(|d| ensure(t.elapsed().as_secs_f64() < 1.0, || "over 1s".into()).map(|_| d));
    report("A1", "horizon weight law", t, r);

    let t = Instant::now();
    let r = a2_gradient_oracle().and_then(|d| ensure(t.elapsed().as_secs_f64() < 30.0, || "over 30s".into()).map(|_| d));
    report("A2", "gradient oracle", t, r);

    let t = Instant::now();
    let r = a3_exact_recovery().and_then(|d| ensure(t.elapsed().as_secs_f64() < 1.0, || "over 1s".into()).map(|_| d));
    report("A3", "exact alignment recovery", t, r);

    let s = seesaw();
    let t = Instant::now();
    report("A4", "horizon weighting moves error off the tail", t, a4_horizon_weighting(&s));

    let t = Instant::now();
    let (a5, a6) = a5_a6(&s);
    report("A5", "distillation beats supervised baseline", t, a5);
    report("A6", "variant harness vs t_kd / fd_kd", t, a6);

    let t = Instant::now();
    let r = a7_trace_roundtrip().and_then(|d| ensure(t.elapsed().as_secs_f64() < 10.0, || "over 10s".into()).map(|_| d));
    report("A7", "trace round-trip and corruption", t, r);

    let t = Instant::now();
    report("A8", "pipeline determinism", t, a8_pipeline_determinism());

    let t = Instant::now();
    report("A9", "variant lattice collapse", t, a9_variant_lattice());

    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

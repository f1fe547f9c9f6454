//! Training loop, optimizer, checkpoints and the variant ablation harness.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataBundle, WindowSet};
use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::fta::{fta_loss, FtaConfig, FtaModule};
use crate::losses::{
    diff_term, freq_term, kd_loss, supervised_loss, total_loss, trend_term, Composition, HorizonWeights,
    LossBreakdown, LossComponents, LossWeights, TrendProjector,
};
use crate::metrics::{mse, MetricReport};
use crate::students::{Student, StudentConfig};
use crate::teacher::TeacherTrace;

const EVAL_BATCH: usize = 256;

/// Which distillation objective a run trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdVariant {
    /// Horizon-weighted KD plus temporal alignment.
    Distilts,
    /// Trend-projection KD.
    TKd,
    /// Frequency-amplitude plus first-difference KD.
    FdKd,
    /// Supervised loss only.
    Baseline,
    /// Horizon-weighted KD without alignment.
    OnlyHw,
    /// Unweighted KD plus alignment.
    OnlyFta,
}

impl KdVariant {
    pub const ALL: [KdVariant; 6] = [
        KdVariant::Distilts,
        KdVariant::TKd,
        KdVariant::FdKd,
        KdVariant::Baseline,
        KdVariant::OnlyHw,
        KdVariant::OnlyFta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KdVariant::Distilts => "distilts",
            KdVariant::TKd => "t_kd",
            KdVariant::FdKd => "fd_kd",
            KdVariant::Baseline => "baseline",
            KdVariant::OnlyHw => "only_hw",
            KdVariant::OnlyFta => "only_fta",
        }
    }

    pub fn composition(self) -> Composition {
        match self {
            KdVariant::TKd => Composition::TrendKd,
            KdVariant::FdKd => Composition::FreqDiffKd,
            _ => Composition::Standard,
        }
    }
}

impl fmt::Display for KdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KdVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KdVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = KdVariant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown kd_variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Adaptive-moment optimizer settings and gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub student: StudentConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub kd_variant: KdVariant,
    /// Horizon-weight temperature.
    pub tau: f64,
    /// Moving-average kernel of the trend-projection variant.
    pub trend_kernel: usize,
    pub loss: LossWeights,
    pub fta: FtaConfig,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            student: StudentConfig::default(),
            epochs: 10,
            batch_size: 64,
            patience: 3,
            seed: 0,
            kd_variant: KdVariant::Distilts,
            tau: 2.0,
            trend_kernel: 5,
            loss: LossWeights::default(),
            fta: FtaConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !self.tau.is_finite() {
            return Err(Error::config("tau must be finite"));
        }
        let o = &self.optim;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and > 0"));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::config("optimizer betas must lie in [0, 1)"));
        }
        if o.eps.is_nan() || o.eps <= 0.0 {
            return Err(Error::config("optimizer eps must be > 0"));
        }
        if !(o.clip_norm >= 0.0 && o.clip_norm.is_finite()) {
            return Err(Error::config("clip_norm must be finite and >= 0"));
        }
        TrendProjector::new(self.trend_kernel)?;
        self.loss.validate()
    }

    /// The configuration with the variant's overrides applied: `baseline`
    /// zeroes both teacher coefficients and τ, `only_hw` zeroes λ_FTA and
    /// `only_fta` zeroes τ.
    pub fn effective(&self) -> TrainConfig {
        let mut c = self.clone();
        match c.kd_variant {
            KdVariant::Baseline => {
                c.loss.lambda_kd = 0.0;
                c.loss.lambda_fta = 0.0;
                c.tau = 0.0;
            }
            KdVariant::OnlyHw => c.loss.lambda_fta = 0.0,
            KdVariant::OnlyFta => c.tau = 0.0,
            KdVariant::Distilts | KdVariant::TKd | KdVariant::FdKd => {}
        }
        c
    }

    /// Confirms that `effective` carries the overrides of its variant.
    pub fn check_derivation(&self, effective: &TrainConfig) -> Result<()> {
        let fail = |what: &str| Err(Error::contract(format!("variant {} must have {what}", self.kd_variant)));
        match self.kd_variant {
            KdVariant::Baseline if effective.loss.lambda_kd != 0.0 || effective.loss.lambda_fta != 0.0 => {
                fail("lambda_kd = lambda_fta = 0")
            }
            KdVariant::OnlyHw if effective.loss.lambda_fta != 0.0 => fail("lambda_fta = 0"),
            KdVariant::OnlyFta if effective.tau != 0.0 => fail("tau = 0"),
            _ => Ok(()),
        }
    }
}

/// Which graph terms a (resolved) configuration computes.
#[derive(Clone, Debug)]
struct Objective {
    composition: Composition,
    loss: LossWeights,
    weights: HorizonWeights,
    projector: TrendProjector,
    kd: bool,
    fta: bool,
}

impl Objective {
    fn new(eff: &TrainConfig, horizon: usize) -> Result<Self> {
        let composition = eff.kd_variant.composition();
        let l = &eff.loss;
        let kd = match composition {
            Composition::Standard => l.lambda_kd > 0.0,
            Composition::TrendKd => l.alpha > 0.0,
            Composition::FreqDiffKd => l.alpha * l.beta > 0.0 || l.alpha * l.gamma > 0.0,
        };
        Ok(Self {
            composition,
            loss: l.clone(),
            weights: HorizonWeights::new(eff.tau, horizon)?,
            projector: TrendProjector::new(eff.trend_kernel)?,
            kd,
            fta: composition == Composition::Standard && l.lambda_fta > 0.0,
        })
    }

    fn needs_trace(&self) -> bool {
        self.kd || self.fta
    }
}

/// First- and second-moment estimates for [`adaptive_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    pub fn new(params: &[&Array]) -> Self {
        let zeros = || params.iter().map(|p| Array::zeros(p.shape().to_vec())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected adaptive-moment step, applied in place.
pub fn adaptive_update(
    params: &mut [&mut Array],
    grads: &[Array],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "optimizer got {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() {
            return Err(Error::dim("adaptive_update", p.shape(), g.shape()));
        }
        let (pd, gd) = (p.data_mut(), g.data());
        for (((x, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// A student and, when alignment was trained, its projection module.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub student: Student,
    pub fta: Option<FtaModule>,
}

impl TrainedModel {
    /// Forecasts `[N × T × C]` for inputs `[N × L × C]` in batches.
    pub fn predict(&self, inputs: &Array) -> Result<Array> {
        let n = inputs.shape()[0];
        let mut data = Vec::new();
        let mut shape = None;
        for start in (0..n).step_by(EVAL_BATCH) {
            let rows: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
            let out = self.student.predict(&inputs.select_rows(&rows))?.forecast;
            shape.get_or_insert_with(|| out.shape().to_vec());
            data.extend_from_slice(out.data());
        }
        let mut shape = shape.ok_or_else(|| Error::contract("cannot predict on zero windows"))?;
        shape[0] = n;
        Array::new(shape, data)
    }

    /// Test metrics, in original units when `denormalize` is set.
    pub fn evaluate(&self, windows: &WindowSet, denormalize: bool) -> Result<MetricReport> {
        let pred = self.predict(&windows.inputs)?;
        if denormalize {
            let p = windows.denormalize(&pred)?;
            let y = windows.denormalize(&windows.targets)?;
            MetricReport::compute(&p, &y, windows.stats.is_some())
        } else {
            MetricReport::compute(&pred, &windows.targets, false)
        }
    }

    fn parameters(&self) -> Vec<&Array> {
        let mut p = self.student.parameters();
        if let Some(f) = &self.fta {
            p.extend(f.parameters());
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array> {
        let mut p = self.student.parameters_mut();
        if let Some(f) = &mut self.fta {
            p.extend(f.parameters_mut());
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Window-weighted mean of the per-batch terms.
    pub train: LossBreakdown,
    /// Unweighted supervised MSE on the validation split, normalized units.
    pub val_mse: f64,
    pub improved: bool,
}

/// Everything about a run except wall-clock time, so that identical runs
/// produce identical records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: KdVariant,
    pub seed: u64,
    /// Resolved configuration, variant overrides applied.
    pub config: TrainConfig,
    pub teacher: Option<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub student_parameters: usize,
    pub fta_parameters: usize,
    pub test: MetricReport,
    pub test_normalized: MetricReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub record: RunRecord,
    pub wall_time: Duration,
}

/// Inputs of one training run that do not change between steps.
struct Batches<'a> {
    train: &'a WindowSet,
    teacher_y: Option<Array>,
    teacher_h: Option<&'a Array>,
}

fn training_step(
    model: &TrainedModel,
    obj: &Objective,
    src: &Batches<'_>,
    rows: &[usize],
) -> Result<(Vec<Array>, LossBreakdown)> {
    let mut g = Graph::new();
    let sp = model.student.bind(&mut g);
    let fv = model.fta.as_ref().map(|f| f.bind(&mut g));
    let x = g.constant(src.train.inputs.select_rows(rows));
    let y = g.constant(src.train.targets.select_rows(rows));
    let out = model.student.forward(&mut g, &sp, x)?;

    let sup_w = obj.loss.weight_supervised.then_some(&obj.weights);
    let sup = supervised_loss(&mut g, out.forecast, y, sup_w)?;
    let mut parts = LossComponents::default_for(sup);
    if obj.kd {
        let yt = src.teacher_y.as_ref().expect("teacher predictions are loaded when kd is active");
        let yt = g.constant(yt.select_rows(rows));
        match obj.composition {
            Composition::Standard => parts.kd = Some(kd_loss(&mut g, out.forecast, yt, &obj.weights)?),
            Composition::TrendKd => parts.trend = Some(trend_term(&mut g, out.forecast, yt, &obj.projector)?),
            Composition::FreqDiffKd => {
                if obj.loss.beta > 0.0 {
                    parts.freq = Some(freq_term(&mut g, out.forecast, yt)?);
                }
                if obj.loss.gamma > 0.0 {
                    parts.diff = Some(diff_term(&mut g, out.forecast, yt)?);
                }
            }
        }
    }
    let mut fta_vars: Vec<Var> = Vec::new();
    if let (Some(f), Some(v)) = (&model.fta, fv) {
        let th = src.teacher_h.expect("teacher hidden states are loaded when alignment is active");
        let pred = f.forward(&mut g, v, out.hidden)?;
        let th = g.constant(th.select_rows(rows));
        parts.fta = Some(fta_loss(&mut g, pred, th)?);
        fta_vars = vec![v.w_s, v.e, v.w_out];
    }
    let (total, breakdown) = total_loss(&mut g, &parts, &obj.loss, obj.composition)?;
    g.backward(total)?;
    let grads = sp.iter().chain(&fta_vars).map(|&v| g.grad_or_zeros(v)).collect();
    Ok((grads, breakdown))
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains a student on `data.train`, selecting the epoch with the lowest
/// validation MSE, and reports test metrics of that epoch's parameters.
///
/// `trace` must cover exactly the training windows; it may be `None` only
/// when the resolved objective has no teacher terms.
pub fn train(config: &TrainConfig, data: &DataBundle, trace: Option<&TeacherTrace>) -> Result<TrainOutcome> {
    let started = Instant::now();
    config.validate()?;
    let eff = config.effective();
    config.check_derivation(&eff)?;
    let train = &data.train;
    let (lookback, horizon) = (train.lookback, train.horizon);
    if data.val.lookback != lookback || data.val.horizon != horizon || data.test.horizon != horizon {
        return Err(Error::contract("train, val and test windows disagree on lookback/horizon"));
    }
    let obj = Objective::new(&eff, horizon)?;

    let mut src = Batches {
        train,
        teacher_y: None,
        teacher_h: None,
    };
    let mut teacher_name = None;
    let mut teacher_dim = 0;
    if obj.needs_trace() {
        let trace = trace.ok_or_else(|| {
            Error::contract(format!("kd_variant {} needs a teacher trace", eff.kd_variant))
        })?;
        trace.check_alignment(train)?;
        if obj.kd {
            src.teacher_y = Some(train.normalize_like(trace.predictions())?);
        }
        if obj.fta {
            src.teacher_h = Some(trace.hidden().ok_or_else(|| {
                Error::contract("alignment is enabled (lambda_fta > 0) but the trace has no hidden states")
            })?);
            teacher_dim = trace.manifest().hidden_dim;
        }
        teacher_name = Some(trace.manifest().teacher_name.clone());
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(eff.seed);
    let student = Student::init(&eff.student, lookback, horizon, &mut init_rng)?;
    let fta = if obj.fta {
        Some(FtaModule::init(student.hidden_dim(), horizon, teacher_dim, &eff.fta, &mut init_rng)?)
    } else {
        None
    };
    let mut model = TrainedModel { student, fta };
    let mut adam = AdamState::new(&model.parameters());
    let mut order_rng = ChaCha8Rng::seed_from_u64(eff.seed);
    order_rng.set_stream(1);

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut since_best = 0usize;
    let mut step = 0usize;
    for epoch in 0..eff.epochs {
        order.shuffle(&mut order_rng);
        let mut acc = LossBreakdown::default();
        for rows in order.chunks(eff.batch_size) {
            let (mut grads, bd) = training_step(&model, &obj, &src, rows).map_err(|e| diverged(epoch, step, e))?;
            if !bd.total.is_finite() {
                return Err(diverged(epoch, step, Error::NonFinite("total loss")));
            }
            if eff.optim.clip_norm > 0.0 {
                clip_global_norm(&mut grads, eff.optim.clip_norm);
            }
            let o = &eff.optim;
            adaptive_update(&mut model.parameters_mut(), &grads, &mut adam, o.learning_rate, (o.beta1, o.beta2), o.eps)?;
            acc.accumulate(&bd, rows.len() as f64 / n as f64);
            step += 1;
        }
        let val_pred = model.predict(&data.val.inputs).map_err(|e| diverged(epoch, step, e))?;
        let val_mse = mse(&val_pred, &data.val.targets)?;
        if !val_mse.is_finite() {
            return Err(diverged(epoch, step, Error::NonFinite("validation forecast")));
        }
        let improved = val_mse < best.0;
        if improved {
            best = (val_mse, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train: acc,
            val_mse,
            improved,
        });
        if since_best >= eff.patience {
            break;
        }
    }

    let (best_val_mse, best_epoch, model) = best;
    let record = RunRecord {
        variant: eff.kd_variant,
        seed: eff.seed,
        teacher: teacher_name,
        stopped_early: epochs.len() < eff.epochs,
        epochs,
        best_epoch,
        best_val_mse,
        student_parameters: model.student.parameter_count(),
        fta_parameters: model.fta.as_ref().map_or(0, FtaModule::parameter_count),
        test: model.evaluate(&data.test, true)?,
        test_normalized: model.evaluate(&data.test, false)?,
        config: eff,
    };
    Ok(TrainOutcome {
        model,
        record,
        wall_time: started.elapsed(),
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    lookback: usize,
    horizon: usize,
    student_shapes: Vec<Vec<usize>>,
    fta_shapes: Option<Vec<Vec<usize>>>,
}

/// Writes `magic | u32 version | u64 header length | JSON header | f64 LE
/// parameters`, student tensors first, then alignment tensors.
pub fn checkpoint_save(path: &Path, model: &TrainedModel, config: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        config: config.clone(),
        lookback: model.student.lookback(),
        horizon: model.student.horizon(),
        student_shapes: model.student.parameters().iter().map(|p| p.shape().to_vec()).collect(),
        fta_shapes: model.fta.as_ref().map(|f| f.parameters().iter().map(|p| p.shape().to_vec()).collect()),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.parameters() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn fill(dst: Vec<&mut Array>, shapes: &[Vec<usize>], payload: &mut impl Iterator<Item = f64>) -> Result<()> {
    if dst.len() != shapes.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, header lists {}", dst.len(), shapes.len())));
    }
    for (p, s) in dst.into_iter().zip(shapes) {
        if p.shape() != s.as_slice() {
            return Err(Error::Checkpoint(format!("tensor shape {s:?} does not match model shape {:?}", p.shape())));
        }
        for v in p.data_mut() {
            *v = payload.next().ok_or_else(|| Error::Checkpoint("payload is truncated".into()))?;
        }
    }
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<(TrainedModel, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| Error::Checkpoint("header is truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let payload = &bytes[20 + hlen..];
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload length is not a multiple of 8".into()));
    }
    let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut student = Student::init(&header.config.student, header.lookback, header.horizon, &mut rng)?;
    fill(student.parameters_mut(), &header.student_shapes, &mut values)?;
    let fta = match &header.fta_shapes {
        Some(shapes) if shapes.len() == 3 && shapes.iter().all(|s| s.len() == 2) => {
            let mut f = FtaModule::new(
                Array::zeros(shapes[0].clone()),
                Array::zeros(shapes[1].clone()),
                Array::zeros(shapes[2].clone()),
                header.config.fta.phi,
            )?;
            fill(f.parameters_mut(), shapes, &mut values)?;
            Some(f)
        }
        Some(_) => return Err(Error::Checkpoint("alignment tensors must be three matrices".into())),
        None => None,
    };
    if values.next().is_some() {
        return Err(Error::Checkpoint("payload has trailing values".into()));
    }
    Ok((TrainedModel { student, fta }, header.config))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: KdVariant,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub tail_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: KdVariant,
    pub runs: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub tail_mse_mean: f64,
}

/// Per-seed results and per-variant mean ± sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub horizon: usize,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<VariantSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn summary_for(&self, variant: KdVariant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn runs_for(&self, variant: KdVariant) -> impl Iterator<Item = &AblationRun> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    /// One row per run.
    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::contract(format!("csv write: {e}"));
        w.write_record(["horizon", "variant", "seed", "mse", "mae", "tail_mse", "best_epoch", "epochs_run"])
            .map_err(err)?;
        for r in &self.runs {
            w.write_record([
                self.horizon.to_string(),
                r.variant.to_string(),
                r.seed.to_string(),
                r.mse.to_string(),
                r.mae.to_string(),
                r.tail_mse.to_string(),
                r.best_epoch.to_string(),
                r.epochs_run.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::contract(format!("csv write: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One row per variant.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::contract(format!("csv write: {e}"));
        w.write_record(["horizon", "variant", "runs", "mse_mean", "mse_std", "mae_mean", "mae_std", "tail_mse_mean"])
            .map_err(err)?;
        for s in &self.summary {
            w.write_record([
                self.horizon.to_string(),
                s.variant.to_string(),
                s.runs.to_string(),
                s.mse_mean.to_string(),
                s.mse_std.to_string(),
                s.mae_mean.to_string(),
                s.mae_std.to_string(),
                s.tail_mse_mean.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::contract(format!("csv write: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width text table of the summary.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "horizon {}\n{:<10} {:>4}  {:>21}  {:>21}\n",
            self.horizon, "variant", "runs", "MSE", "MAE"
        );
        for s in &self.summary {
            out.push_str(&format!(
                "{:<10} {:>4}  {:>10.4} ± {:<8.4}  {:>10.4} ± {:<8.4}\n",
                s.variant.name(),
                s.runs,
                s.mse_mean,
                s.mse_std,
                s.mae_mean,
                s.mae_std
            ));
        }
        out
    }
}

/// Trains every `(variant, seed)` pair from `base`, in parallel, and
/// tabulates test metrics in original units.
pub fn ablation_harness(
    base: &TrainConfig,
    data: &DataBundle,
    trace: Option<&TeacherTrace>,
    variants: &[KdVariant],
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::config("ablation needs at least one variant and one seed"));
    }
    let jobs: Vec<(KdVariant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let cfg = TrainConfig {
                kd_variant: variant,
                seed,
                ..base.clone()
            };
            cfg.check_derivation(&cfg.effective())?;
            let out = train(&cfg, data, trace)?;
            let r = out.record;
            Ok(AblationRun {
                variant,
                seed,
                mse: r.test.mse,
                mae: r.test.mae,
                tail_mse: r.test.tail_mse(),
                best_epoch: r.best_epoch,
                epochs_run: r.epochs.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = variants
        .iter()
        .map(|&variant| {
            let rs: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == variant).collect();
            let (mse_mean, mse_std) = mean_std(&rs.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (mae_mean, mae_std) = mean_std(&rs.iter().map(|r| r.mae).collect::<Vec<_>>());
            let (tail_mse_mean, _) = mean_std(&rs.iter().map(|r| r.tail_mse).collect::<Vec<_>>());
            VariantSummary {
                variant,
                runs: rs.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
                tail_mse_mean,
            }
        })
        .collect();
    Ok(AblationTable {
        horizon: data.train.horizon,
        runs,
        summary,
    })
}

//! Series ingestion, splitting, sliding windows and z-score normalization,
//! plus the synthetic "seesaw" task.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Array;
use crate::error::{Error, Result};

/// Lower bound on the standard deviation used for z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

const ETT_HOURS_PER_MONTH: usize = 30 * 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// How a series is cut into train/val/test ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// Fractions of the series, in order; must sum to at most 1.
    Ratio { train: f64, val: f64, test: f64 },
    /// 12/4/4 months of hourly rows.
    EttHourly,
    /// 12/4/4 months of 15-minute rows.
    EttMinute,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratio {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

impl SplitSpec {
    pub fn ranges(&self, len: usize) -> Result<SplitRanges> {
        let (a, b, c) = match *self {
            SplitSpec::Ratio { train, val, test } => {
                for (name, v) in [("train", train), ("val", val), ("test", test)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::config(format!("split ratio {name} = {v} outside [0, 1]")));
                    }
                }
                if train + val + test > 1.0 + 1e-9 {
                    return Err(Error::config("split ratios sum to more than 1"));
                }
                let at = |f: f64| ((len as f64 * f).round() as usize).min(len);
                (at(train), at(train + val), at(train + val + test))
            }
            SplitSpec::EttHourly | SplitSpec::EttMinute => {
                let per_month = if *self == SplitSpec::EttHourly {
                    ETT_HOURS_PER_MONTH
                } else {
                    4 * ETT_HOURS_PER_MONTH
                };
                let (a, b, c) = (12 * per_month, 16 * per_month, 20 * per_month);
                if len < c {
                    return Err(Error::config(format!(
                        "ETT split needs {c} rows, series has {len}"
                    )));
                }
                (a, b, c)
            }
        };
        Ok(SplitRanges {
            train: 0..a,
            val: a..b,
            test: b..c,
        })
    }
}

/// A multichannel series with split boundaries. `values` is `[time × C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub channel_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    values: Array,
    splits: SplitRanges,
}

impl SeriesDataset {
    pub fn new(name: impl Into<String>, values: Array, split: &SplitSpec) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::dim("series values", values.shape(), &[0, 0]));
        }
        if !values.is_finite() {
            return Err(Error::contract("series values must be finite"));
        }
        let splits = split.ranges(values.shape()[0])?;
        let channels = values.shape()[1];
        Ok(Self {
            name: name.into(),
            channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
            timestamps: None,
            values,
            splits,
        })
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn splits(&self) -> &SplitRanges {
        &self.splits
    }

    /// Writes `timestamp,<channels...>` rows; row indices stand in for missing
    /// timestamps.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["date".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header).map_err(csv_write_err)?;
        let c = self.channels();
        for (i, row) in self.values.data().chunks(c).enumerate() {
            let mut rec = vec![match &self.timestamps {
                Some(ts) => ts[i].clone(),
                None => i.to_string(),
            }];
            // `{:?}` prints the shortest representation that round-trips
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_write_err)?;
        }
        w.flush().map_err(|e| Error::contract(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::contract(format!("csv write: {e}"))
}

/// Parses a CSV whose first column is a timestamp (kept as text) and whose
/// remaining columns are numeric channels. The first row is a header.
pub fn parse_csv(reader: impl Read, name: &str, split: &SplitSpec) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Csv {
            line: 1,
            message: "need a timestamp column and at least one channel".into(),
        });
    }
    let channels = header.len() - 1;
    let mut data = Vec::new();
    let mut timestamps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        timestamps.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                line,
                message: format!("column `{}` is not numeric: {cell:?}", &header[j + 1]),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    message: format!("column `{}` is not finite: {cell:?}", &header[j + 1]),
                });
            }
            data.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Csv {
            line: 1,
            message: "file has no data rows".into(),
        });
    }
    let values = Array::new(vec![timestamps.len(), channels], data)?;
    let mut ds = SeriesDataset::new(name, values, split)?;
    ds.channel_names = header.iter().skip(1).map(str::to_string).collect();
    ds.timestamps = Some(timestamps);
    Ok(ds)
}

pub fn load_csv(path: &Path, split: &SplitSpec) -> Result<SeriesDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map_or_else(|| "series".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(std::io::BufReader::new(f), &name, split)
}

/// Per-window, per-channel z-score statistics, each `[N × C]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: Array,
    pub std: Array,
}

impl WindowStats {
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            mean: self.mean.select_rows(rows),
            std: self.std.select_rows(rows),
        }
    }

    fn apply(&self, values: &Array, f: impl Fn(f64, f64, f64) -> f64) -> Result<Array> {
        let s = values.shape();
        if s.len() != 3 || s[0] != self.mean.shape()[0] || s[2] != self.mean.shape()[1] {
            return Err(Error::dim("window statistics", s, self.mean.shape()));
        }
        let (steps, c) = (s[1], s[2]);
        Ok(Array::from_fn(s.to_vec(), |i| {
            let (n, ch) = (i / (steps * c), i % c);
            let k = n * c + ch;
            f(values.data()[i], self.mean.data()[k], self.std.data()[k])
        }))
    }

    /// `(x - mean) / std` for `[N × steps × C]` values.
    pub fn normalize(&self, values: &Array) -> Result<Array> {
        self.apply(values, |x, m, s| (x - m) / s)
    }

    /// `x·std + mean` for `[N × steps × C]` values.
    pub fn denormalize(&self, values: &Array) -> Result<Array> {
        self.apply(values, |x, m, s| x * s + m)
    }
}

/// Per-channel statistics of one split, used by [`Normalization::PerSplit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(dataset: &SeriesDataset, split: Split) -> Result<Self> {
        let r = dataset.splits().get(split);
        if r.is_empty() {
            return Err(Error::contract(format!("{} split is empty", split.name())));
        }
        let c = dataset.channels();
        let rows = &dataset.values().data()[r.start * c..r.end * c];
        let (mean, std) = column_stats(rows, c);
        Ok(Self { mean, std })
    }
}

fn column_stats(rows: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (rows.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for row in rows.chunks(c) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for row in rows.chunks(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each lookback window z-scored per channel with its own statistics.
    #[default]
    PerWindow,
    /// Statistics of the training split applied to every window.
    PerSplit,
}

/// Sliding `(lookback, target)` pairs from one split.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub split: Split,
    /// Absolute series index of each window's first lookback step.
    pub starts: Vec<usize>,
    /// `[N × L × C]`
    pub inputs: Array,
    /// `[N × T × C]`
    pub targets: Array,
    /// Present once the set has been normalized.
    pub stats: Option<WindowStats>,
}

/// `⌊(len − L − T) / stride⌋ + 1`, or 0 if the split is too short.
pub fn window_count(len: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || lookback + horizon > len {
        0
    } else {
        (len - lookback - horizon) / stride + 1
    }
}

pub fn make_windows(
    dataset: &SeriesDataset,
    lookback: usize,
    horizon: usize,
    stride: usize,
    split: Split,
) -> Result<WindowSet> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::contract("lookback, horizon and stride must be >= 1"));
    }
    let range = dataset.splits().get(split);
    let n = window_count(range.len(), lookback, horizon, stride);
    if n == 0 {
        return Err(Error::contract(format!(
            "{} split has {} rows, fewer than lookback {lookback} + horizon {horizon}",
            split.name(),
            range.len()
        )));
    }
    let c = dataset.channels();
    let src = dataset.values().data();
    let starts: Vec<usize> = (0..n).map(|i| range.start + i * stride).collect();
    let mut inputs = Vec::with_capacity(n * lookback * c);
    let mut targets = Vec::with_capacity(n * horizon * c);
    for &s in &starts {
        inputs.extend_from_slice(&src[s * c..(s + lookback) * c]);
        targets.extend_from_slice(&src[(s + lookback) * c..(s + lookback + horizon) * c]);
    }
    Ok(WindowSet {
        lookback,
        horizon,
        stride,
        split,
        starts,
        inputs: Array::new(vec![n, lookback, c], inputs)?,
        targets: Array::new(vec![n, horizon, c], targets)?,
        stats: None,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Z-scores inputs and targets with statistics taken from each lookback
    /// (`PerWindow`) or from `train_stats` (`PerSplit`).
    pub fn normalize(&self, mode: Normalization, train_stats: Option<&ChannelStats>) -> Result<WindowSet> {
        if self.is_empty() {
            return Err(Error::contract("cannot normalize an empty window set"));
        }
        if self.stats.is_some() {
            return Err(Error::contract("window set is already normalized"));
        }
        let (n, l, c) = (self.len(), self.lookback, self.channels());
        let stats = match mode {
            Normalization::PerWindow => {
                let mut mean = Vec::with_capacity(n * c);
                let mut std = Vec::with_capacity(n * c);
                for w in self.inputs.data().chunks(l * c) {
                    let (m, s) = column_stats(w, c);
                    mean.extend(m);
                    std.extend(s);
                }
                WindowStats {
                    mean: Array::new(vec![n, c], mean)?,
                    std: Array::new(vec![n, c], std)?,
                }
            }
            Normalization::PerSplit => {
                let cs = train_stats
                    .ok_or_else(|| Error::config("per-split normalization needs training-split statistics"))?;
                if cs.mean.len() != c {
                    return Err(Error::dim("channel statistics", &[cs.mean.len()], &[c]));
                }
                WindowStats {
                    mean: Array::from_fn(vec![n, c], |i| cs.mean[i % c]),
                    std: Array::from_fn(vec![n, c], |i| cs.std[i % c]),
                }
            }
        };
        Ok(WindowSet {
            inputs: stats.normalize(&self.inputs)?,
            targets: stats.normalize(&self.targets)?,
            stats: Some(stats),
            ..self.clone()
        })
    }

    /// Maps `[N × T × C]` values in normalized units back to raw units; the
    /// identity for an unnormalized set.
    pub fn denormalize(&self, values: &Array) -> Result<Array> {
        match &self.stats {
            Some(s) => s.denormalize(values),
            None => Ok(values.clone()),
        }
    }

    /// Applies this set's statistics to raw-unit `[N × T × C]` values.
    pub fn normalize_like(&self, values: &Array) -> Result<Array> {
        match &self.stats {
            Some(s) => s.normalize(values),
            None => Ok(values.clone()),
        }
    }

    /// Windows `rows` as a new set (inputs, targets and statistics).
    pub fn select(&self, rows: &[usize]) -> WindowSet {
        WindowSet {
            starts: rows.iter().map(|&r| self.starts[r]).collect(),
            inputs: self.inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
            stats: self.stats.as_ref().map(|s| s.select_rows(rows)),
            ..self.clone()
        }
    }
}

/// Normalized train/val/test windows of one dataset. Validation and test
/// windows always use stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBundle {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub normalization: Normalization,
}

impl DataBundle {
    pub fn build(
        dataset: &SeriesDataset,
        lookback: usize,
        horizon: usize,
        train_stride: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        let stats = match normalization {
            Normalization::PerSplit => Some(ChannelStats::fit(dataset, Split::Train)?),
            Normalization::PerWindow => None,
        };
        let build = |split, stride| make_windows(dataset, lookback, horizon, stride, split)?.normalize(normalization, stats.as_ref());
        Ok(Self {
            train: build(Split::Train, train_stride)?,
            val: build(Split::Val, 1)?,
            test: build(Split::Test, 1)?,
            normalization,
        })
    }

    pub fn split(&self, split: Split) -> &WindowSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Parameters of the synthetic seesaw series.
///
/// For channel `c` and time `i` the latent series is
///
/// ```text
/// latent[i, c] = easy_amp · sin(2πi / P_s + φ_c)
///              + sin(2πi / P_l + ψ_c)
///              + w[i, c],     w[i, c] = w[i-1, c] + η,  η ~ N(0, σ_w²)
/// observed[i, c] = latent[i, c] + ε,                    ε ~ N(0, σ_ε²)
/// ```
///
/// with `P_s = max(L / 4, 4)`, `P_l = 4·(L + T)`, `σ_ε = 1 / hard_snr` and
/// `σ_w = σ_ε / sqrt(T)`. Given the latent state, the best predictor of the
/// observation `h` steps ahead has error `σ_ε² + h·σ_w²`, which grows along
/// the horizon; with `hard_snr = ∞` the series is noiseless and an exact
/// linear recurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeesawConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub length: usize,
    pub easy_amp: f64,
    pub hard_snr: f64,
    pub seed: u64,
    pub split: SplitSpec,
}

impl Default for SeesawConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            lookback: 96,
            horizon: 96,
            length: 2000,
            easy_amp: 2.0,
            hard_snr: 2.0,
            seed: 0,
            split: SplitSpec::default(),
        }
    }
}

/// Observed series and the noise-free-observation latent it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSeries {
    pub observed: SeriesDataset,
    pub latent: SeriesDataset,
}

pub fn synth_seesaw(config: &SeesawConfig) -> Result<SynthSeries> {
    let SeesawConfig {
        channels,
        lookback,
        horizon,
        length,
        easy_amp,
        hard_snr,
        seed,
        ..
    } = *config;
    if horizon < 4 {
        return Err(Error::contract("seesaw task needs horizon >= 4"));
    }
    if channels == 0 || length == 0 || lookback == 0 {
        return Err(Error::contract("seesaw task needs channels, length and lookback >= 1"));
    }
    if hard_snr.is_nan() || hard_snr <= 0.0 {
        return Err(Error::contract("hard_snr must be positive"));
    }
    let obs_sigma = 1.0 / hard_snr;
    let walk_sigma = obs_sigma / (horizon as f64).sqrt();
    let short_period = (lookback as f64 / 4.0).max(4.0);
    let long_period = 4.0 * (lookback + horizon) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tau = std::f64::consts::TAU;
    let phases: Vec<(f64, f64)> = (0..channels)
        .map(|_| (rng.random_range(0.0..tau), rng.random_range(0.0..tau)))
        .collect();

    let mut latent = Vec::with_capacity(length * channels);
    let mut observed = Vec::with_capacity(length * channels);
    let mut walk = vec![0.0; channels];
    for i in 0..length {
        let t = i as f64;
        for (c, &(phi, psi)) in phases.iter().enumerate() {
            walk[c] += walk_sigma * std_normal.sample(&mut rng);
            let v = easy_amp * (tau * t / short_period + phi).sin() + (tau * t / long_period + psi).sin() + walk[c];
            latent.push(v);
            observed.push(v + obs_sigma * std_normal.sample(&mut rng));
        }
    }
    let name = format!("seesaw-c{channels}-l{lookback}-t{horizon}-s{seed}");
    Ok(SynthSeries {
        observed: SeriesDataset::new(name.clone(), Array::new(vec![length, channels], observed)?, &config.split)?,
        latent: SeriesDataset::new(format!("{name}-latent"), Array::new(vec![length, channels], latent)?, &config.split)?,
    })
}

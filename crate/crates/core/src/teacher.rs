//! Teacher traces: recorded predictions and point-wise hidden states of a
//! teacher over a fixed list of dataset windows.
//!
//! On disk a trace is a directory with three files:
//!
//! * `manifest.json`: a [`TraceManifest`]
//! * `predictions.f32`: little-endian `f32`, row-major `[N × T × C]`
//! * `hidden.f32`: little-endian `f32`, row-major `[N × C × T × d_T]`, only
//!   when `hidden_dim > 0`
//!
//! See `docs/trace-format.md` for the byte-level contract.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Split, WindowSet, STD_FLOOR};
use crate::diffcore::Array;
use crate::error::{Error, Result, TraceError};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.f32";
pub const HIDDEN_FILE: &str = "hidden.f32";
pub const DEFAULT_LAYER_TAG: &str = "last";

/// Size and SHA-256 of one blob file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRecord {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Which dataset windows a trace was recorded over: window `i` starts at
/// series row `first_start + i·stride` inside `split`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowAlignment {
    pub split: Split,
    pub first_start: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceManifest {
    pub schema_version: u32,
    pub teacher_name: String,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    /// 0 when the trace carries no hidden states.
    pub hidden_dim: usize,
    pub hidden_layer_tag: String,
    pub window_count: usize,
    pub normalization_note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<WindowAlignment>,
    pub predictions: BlobRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<BlobRecord>,
}

impl TraceManifest {
    fn prediction_len(&self) -> u64 {
        (self.window_count * self.horizon * self.channels) as u64
    }

    fn hidden_len(&self) -> u64 {
        (self.window_count * self.channels * self.horizon * self.hidden_dim) as u64
    }

    fn check(&self) -> Result<(), TraceError> {
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return Err(TraceError::Version {
                found: self.schema_version,
                expected: TRACE_SCHEMA_VERSION,
            });
        }
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("window_count", self.window_count),
        ] {
            if v == 0 {
                return Err(TraceError::Manifest(format!("{name} must be >= 1")));
            }
        }
        if (self.hidden_dim > 0) != self.hidden.is_some() {
            return Err(TraceError::Manifest(format!(
                "hidden_dim = {} but hidden blob is {}",
                self.hidden_dim,
                if self.hidden.is_some() { "present" } else { "absent" }
            )));
        }
        if let Some(a) = &self.alignment {
            if a.stride == 0 {
                return Err(TraceError::Manifest("alignment stride must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Descriptive fields of a trace; extents come from the arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceInfo {
    pub teacher_name: String,
    pub lookback: usize,
    pub hidden_layer_tag: String,
    pub normalization_note: String,
    pub alignment: Option<WindowAlignment>,
}

impl TraceInfo {
    pub fn new(teacher_name: impl Into<String>, lookback: usize) -> Self {
        Self {
            teacher_name: teacher_name.into(),
            lookback,
            hidden_layer_tag: DEFAULT_LAYER_TAG.into(),
            normalization_note: "raw units".into(),
            alignment: None,
        }
    }
}

/// An in-memory trace. Values are held as `f64` but are always exactly
/// representable as `f32`, so a write/read cycle is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTrace {
    manifest: TraceManifest,
    /// `[N × T × C]`, raw units
    predictions: Array,
    /// `[N × C × T × d_T]`
    hidden: Option<Array>,
}

fn to_f32_grid(a: &Array, name: &str) -> Result<Array, TraceError> {
    let out = a.map(|v| v as f32 as f64);
    if !out.is_finite() {
        return Err(TraceError::Validation(format!("{name} contain values that are not finite as f32")));
    }
    Ok(out)
}

fn encode(a: &Array) -> Vec<u8> {
    a.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn blob_record(file: &str, bytes: &[u8]) -> BlobRecord {
    BlobRecord {
        file: file.into(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

impl TeacherTrace {
    pub fn new(info: TraceInfo, predictions: Array, hidden: Option<Array>) -> Result<Self> {
        let s = predictions.shape().to_vec();
        if s.len() != 3 || s.contains(&0) {
            return Err(TraceError::Validation(format!("predictions must be a non-empty [N, T, C] array, got {s:?}")).into());
        }
        let (n, t, c) = (s[0], s[1], s[2]);
        if info.lookback == 0 {
            return Err(TraceError::Validation("lookback must be >= 1".into()).into());
        }
        let predictions = to_f32_grid(&predictions, "predictions")?;
        let hidden = match hidden {
            Some(h) => {
                let hs = h.shape();
                if hs.len() != 4 || hs[..3] != [n, c, t] || hs[3] == 0 {
                    return Err(Error::dim("trace hidden states", hs, &[n, c, t, 0]));
                }
                Some(to_f32_grid(&h, "hidden states")?)
            }
            None => None,
        };
        let manifest = TraceManifest {
            schema_version: TRACE_SCHEMA_VERSION,
            teacher_name: info.teacher_name,
            lookback: info.lookback,
            horizon: t,
            channels: c,
            hidden_dim: hidden.as_ref().map_or(0, |h| h.shape()[3]),
            hidden_layer_tag: info.hidden_layer_tag,
            window_count: n,
            normalization_note: info.normalization_note,
            alignment: info.alignment,
            predictions: blob_record(PREDICTIONS_FILE, &encode(&predictions)),
            hidden: hidden.as_ref().map(|h| blob_record(HIDDEN_FILE, &encode(h))),
        };
        Ok(Self {
            manifest,
            predictions,
            hidden,
        })
    }

    pub fn manifest(&self) -> &TraceManifest {
        &self.manifest
    }

    pub fn predictions(&self) -> &Array {
        &self.predictions
    }

    pub fn hidden(&self) -> Option<&Array> {
        self.hidden.as_ref()
    }

    pub fn len(&self) -> usize {
        self.manifest.window_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that this trace was recorded over exactly `windows`: same
    /// lookback, horizon, channel count and window count, and, when the
    /// manifest records an alignment, the same split and window starts.
    pub fn check_alignment(&self, windows: &WindowSet) -> Result<()> {
        let m = &self.manifest;
        let pairs = [
            ("lookback", m.lookback, windows.lookback),
            ("horizon", m.horizon, windows.horizon),
            ("channels", m.channels, windows.channels()),
            ("window count", m.window_count, windows.len()),
        ];
        for (name, trace, win) in pairs {
            if trace != win {
                return Err(Error::contract(format!("trace {name} is {trace} but the windows have {win}")));
            }
        }
        if let Some(a) = &m.alignment {
            if a.split != windows.split {
                return Err(Error::contract(format!(
                    "trace was recorded on the {} split, windows come from {}",
                    a.split.name(),
                    windows.split.name()
                )));
            }
            for (i, &s) in windows.starts.iter().enumerate() {
                let expected = a.first_start + i * a.stride;
                if s != expected {
                    return Err(Error::contract(format!(
                        "trace window {i} starts at row {expected}, dataset window starts at row {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Writes `trace` into directory `dir`, creating it if needed.
pub fn write_trace(trace: &TeacherTrace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    put(PREDICTIONS_FILE, &encode(&trace.predictions))?;
    if let Some(h) = &trace.hidden {
        put(HIDDEN_FILE, &encode(h))?;
    }
    let json = serde_json::to_string_pretty(&trace.manifest)
        .map_err(|e| TraceError::Manifest(e.to_string()))?;
    put(MANIFEST_FILE, format!("{json}\n").as_bytes())
}

fn read_blob(dir: &Path, rec: &BlobRecord, expected_values: u64, shape: Vec<usize>) -> Result<Array> {
    if rec.file.contains(['/', '\\']) || rec.file == ".." {
        return Err(TraceError::Manifest(format!("blob file name `{}` must be a plain file name", rec.file)).into());
    }
    let path = dir.join(&rec.file);
    if !path.is_file() {
        return Err(TraceError::MissingBlob(rec.file.clone()).into());
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != rec.bytes {
        return Err(TraceError::Truncated {
            name: rec.file.clone(),
            recorded: rec.bytes,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    if !digest.eq_ignore_ascii_case(&rec.sha256) {
        return Err(TraceError::ChecksumMismatch {
            name: rec.file.clone(),
            expected: rec.sha256.clone(),
            actual: digest,
        }
        .into());
    }
    if bytes.len() % 4 != 0 || bytes.len() as u64 / 4 != expected_values {
        return Err(TraceError::ExtentMismatch {
            name: rec.file.clone(),
            expected: expected_values,
            actual: bytes.len() as u64 / 4,
        }
        .into());
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TraceError::Validation(format!("blob `{}` contains non-finite values", rec.file)).into());
    }
    Array::new(shape, data)
}

/// Reads and fully validates the trace directory `dir`.
pub fn read_trace(dir: &Path) -> Result<TeacherTrace> {
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.is_file() {
        return Err(TraceError::MissingBlob(MANIFEST_FILE.into()).into());
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: TraceManifest =
        serde_json::from_str(&text).map_err(|e| TraceError::Manifest(e.to_string()))?;
    manifest.check()?;
    let (n, t, c, d) = (manifest.window_count, manifest.horizon, manifest.channels, manifest.hidden_dim);
    let predictions = read_blob(dir, &manifest.predictions, manifest.prediction_len(), vec![n, t, c])?;
    let hidden = match &manifest.hidden {
        Some(rec) => Some(read_blob(dir, rec, manifest.hidden_len(), vec![n, c, t, d])?),
        None => None,
    };
    Ok(TeacherTrace {
        manifest,
        predictions,
        hidden,
    })
}

/// Outcome of [`validate_trace`]: the manifest plus non-fatal findings.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    pub manifest: TraceManifest,
    pub warnings: Vec<String>,
}

/// Reads `dir` as [`read_trace`] does and additionally reports metadata
/// that is legal but likely unintended.
pub fn validate_trace(dir: &Path) -> Result<TraceReport> {
    let trace = read_trace(dir)?;
    let m = trace.manifest;
    let mut warnings = Vec::new();
    if m.teacher_name.trim().is_empty() {
        warnings.push("teacher_name is empty".to_string());
    }
    if m.normalization_note.trim().is_empty() {
        warnings.push("normalization_note is empty".to_string());
    }
    if m.hidden_dim > 0 && m.hidden_layer_tag.trim().is_empty() {
        warnings.push("hidden_layer_tag is empty".to_string());
    }
    if m.alignment.is_none() {
        warnings.push("no window alignment recorded; only extents can be checked".to_string());
    }
    Ok(TraceReport { manifest: m, warnings })
}

const ORACLE_FEATURES: usize = 5;

/// An ε-accurate stand-in teacher built from the true targets of `windows`.
///
/// Predictions are the raw-unit targets plus `N(0, noise_sigma²)` noise.
/// Hidden state `(i, c, t)` is a fixed random linear map of
/// `[y_{t,c}, x_{L-1,c}, (x_{L-1,c} − x_{0,c}), t/(T−1), 1]`, with values
/// z-scored by the window's own lookback statistics so hidden states are
/// scale-free.
pub fn synthetic_oracle(windows: &WindowSet, noise_sigma: f64, hidden_dim: usize, seed: u64) -> Result<TeacherTrace> {
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::contract("noise_sigma must be finite and >= 0"));
    }
    if windows.is_empty() {
        return Err(Error::contract("synthetic oracle needs at least one window"));
    }
    let inputs = windows.denormalize(&windows.inputs)?;
    let targets = windows.denormalize(&windows.targets)?;
    let (n, l, t, c) = (windows.len(), windows.lookback, windows.horizon, windows.channels());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let map_scale = 1.0 / (ORACLE_FEATURES as f64).sqrt();
    let map: Vec<f64> = (0..hidden_dim * ORACLE_FEATURES)
        .map(|_| map_scale * unit.sample(&mut rng))
        .collect();

    let predictions = if noise_sigma == 0.0 {
        targets.clone()
    } else {
        let y = targets.data();
        Array::from_fn(targets.shape().to_vec(), |i| y[i] + noise_sigma * unit.sample(&mut rng))
    };

    let hidden = if hidden_dim == 0 {
        None
    } else {
        let mut h = Vec::with_capacity(n * c * t * hidden_dim);
        let x = inputs.data();
        let y = targets.data();
        for i in 0..n {
            for ch in 0..c {
                let col = |s: usize| x[(i * l + s) * c + ch];
                let mean = (0..l).map(col).sum::<f64>() / l as f64;
                let std = ((0..l).map(|s| (col(s) - mean).powi(2)).sum::<f64>() / l as f64)
                    .sqrt()
                    .max(STD_FLOOR);
                let last = (col(l - 1) - mean) / std;
                let slope = (col(l - 1) - col(0)) / std;
                for step in 0..t {
                    let pos = if t > 1 { step as f64 / (t - 1) as f64 } else { 0.0 };
                    let value = (y[(i * t + step) * c + ch] - mean) / std;
                    let feats = [value, last, slope, pos, 1.0];
                    for row in map.chunks(ORACLE_FEATURES) {
                        h.push(row.iter().zip(&feats).map(|(a, f)| a * f).sum());
                    }
                }
            }
        }
        Some(Array::new(vec![n, c, t, hidden_dim], h)?)
    };

    let mut info = TraceInfo::new(format!("synthetic-oracle(sigma={noise_sigma})"), l);
    info.normalization_note = "raw units; hidden states from per-window z-scored values".into();
    info.alignment = Some(WindowAlignment {
        split: windows.split,
        first_start: windows.starts[0],
        stride: windows.stride,
    });
    TeacherTrace::new(info, predictions, hidden)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::data::{make_windows, SeriesDataset, SplitSpec};

    fn random_trace(seed: u64, hidden: bool) -> TeacherTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, t, c) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..4));
        let d = rng.random_range(1..5);
        let p = Array::from_fn(vec![n, t, c], |_| rng.random_range(-10.0..10.0));
        let h = hidden.then(|| Array::from_fn(vec![n, c, t, d], |_| rng.random_range(-3.0..3.0)));
        TeacherTrace::new(TraceInfo::new("random", 4), p, h).unwrap()
    }

    fn windows(len: usize, l: usize, t: usize) -> WindowSet {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals = Array::from_fn(vec![len, 2], |_| rng.random_range(-2.0..2.0));
        let ds = SeriesDataset::new("w", vals, &SplitSpec::default()).unwrap();
        make_windows(&ds, l, t, 1, Split::Train).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (seed, hidden) in [(1, true), (2, false)] {
            let trace = random_trace(seed, hidden);
            let p = dir.path().join(format!("t{seed}"));
            write_trace(&trace, &p).unwrap();
            assert_eq!(read_trace(&p).unwrap(), trace);
            let bytes = fs::read(p.join(PREDICTIONS_FILE)).unwrap();
            assert_eq!(bytes, encode(trace.predictions()));
        }
    }

    #[test]
    fn blob_layout_is_window_step_channel() {
        let p = Array::from_fn(vec![2, 3, 2], |i| i as f64);
        let trace = TeacherTrace::new(TraceInfo::new("layout", 1), p, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace(&trace, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(bytes.len(), 48);
        assert_eq!(&bytes[4..8], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[44..48], &11.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        write_trace(&random_trace(3, true), dir.path()).unwrap();
        let p = dir.path().join(HIDDEN_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match read_trace(dir.path()) {
            Err(Error::Trace(e)) => {
                assert!(matches!(e, TraceError::Truncated { .. }));
                assert!(e.is_integrity());
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        write_trace(&random_trace(4, false), dir.path()).unwrap();
        let p = dir.path().join(PREDICTIONS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 0x01;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_trace(dir.path()), Err(Error::Trace(TraceError::ChecksumMismatch { .. }))));
    }

    #[test]
    fn horizon_edit_is_an_extent_error() {
        let p = Array::zeros(vec![2, 48, 1]);
        let trace = TeacherTrace::new(TraceInfo::new("h48", 8), p, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace(&trace, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let mut m: TraceManifest = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        m.horizon = 96;
        fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        match read_trace(dir.path()) {
            Err(Error::Trace(TraceError::ExtentMismatch { expected, actual, .. })) => {
                assert_eq!((expected, actual), (192, 96));
            }
            other => panic!("expected extent error, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_and_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_trace(dir.path()), Err(Error::Trace(TraceError::MissingBlob(_)))));
        write_trace(&random_trace(5, true), dir.path()).unwrap();
        fs::remove_file(dir.path().join(HIDDEN_FILE)).unwrap();
        assert!(matches!(read_trace(dir.path()), Err(Error::Trace(TraceError::MissingBlob(f))) if f == HIDDEN_FILE));

        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap();
        fs::write(&mpath, text.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
        assert!(matches!(read_trace(dir.path()), Err(Error::Trace(TraceError::Version { found: 7, .. }))));
        fs::write(&mpath, "{ not json").unwrap();
        assert!(matches!(read_trace(dir.path()), Err(Error::Trace(TraceError::Manifest(_)))));
    }

    #[test]
    fn construction_rejects_bad_payloads() {
        let bad = Array::from_fn(vec![1, 2, 1], |i| if i == 1 { 1e300 } else { 0.0 });
        assert!(matches!(
            TeacherTrace::new(TraceInfo::new("x", 1), bad, None),
            Err(Error::Trace(TraceError::Validation(_)))
        ));
        let h = Array::zeros(vec![1, 1, 3, 2]);
        assert!(TeacherTrace::new(TraceInfo::new("x", 1), Array::zeros(vec![1, 2, 1]), Some(h)).is_err());
    }

    #[test]
    fn oracle_with_zero_noise_matches_truth() {
        let w = windows(200, 8, 4);
        let trace = synthetic_oracle(&w, 0.0, 6, 1).unwrap();
        let truth = w.targets.map(|v| v as f32 as f64);
        assert_eq!(trace.predictions(), &truth);
        assert_eq!(trace.hidden().unwrap().shape(), &[w.len(), 2, 4, 6]);
        trace.check_alignment(&w).unwrap();
    }

    #[test]
    fn oracle_is_deterministic() {
        let w = windows(120, 6, 4);
        assert_eq!(synthetic_oracle(&w, 0.3, 4, 11).unwrap(), synthetic_oracle(&w, 0.3, 4, 11).unwrap());
        assert_ne!(synthetic_oracle(&w, 0.3, 4, 11).unwrap(), synthetic_oracle(&w, 0.3, 4, 12).unwrap());
    }

    #[test]
    fn oracle_noise_level() {
        let w = windows(2000, 8, 8);
        let trace = synthetic_oracle(&w, 0.1, 0, 2).unwrap();
        let n = w.targets.len() as f64;
        assert!(n >= 1e4);
        let msd = trace
            .predictions()
            .data()
            .iter()
            .zip(w.targets.data())
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / n;
        assert!((msd - 0.01).abs() < 0.001, "mean squared deviation {msd}");
    }

    #[test]
    fn oracle_hidden_state_tracks_the_target() {
        let w = windows(100, 6, 3);
        let base = synthetic_oracle(&w, 0.0, 3, 5).unwrap();
        let mut bumped = w.clone();
        let k = bumped.targets.len() - 1;
        bumped.targets.data_mut()[k] += 1.0;
        let other = synthetic_oracle(&bumped, 0.0, 3, 5).unwrap();
        let (a, b) = (base.hidden().unwrap().data(), other.hidden().unwrap().data());
        let changed: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        // last window, last channel, last step: the final d_T entries
        assert!(!changed.is_empty() && changed.iter().all(|&i| i >= a.len() - 3));
    }

    #[test]
    fn alignment_mismatches_are_contract_errors() {
        let w = windows(100, 6, 3);
        let trace = synthetic_oracle(&w, 0.0, 0, 0).unwrap();
        let shorter = w.select(&(0..w.len() - 1).collect::<Vec<_>>());
        assert!(matches!(trace.check_alignment(&shorter), Err(Error::Contract(_))));
        let shifted = w.select(&(1..w.len()).chain([0]).collect::<Vec<_>>());
        assert!(matches!(trace.check_alignment(&shifted), Err(Error::Contract(_))));
    }

    #[test]
    fn validate_reports_missing_alignment() {
        let dir = tempfile::tempdir().unwrap();
        write_trace(&random_trace(6, true), dir.path()).unwrap();
        let report = validate_trace(dir.path()).unwrap();
        assert_eq!(report.warnings.len(), 1);
        let w = windows(80, 6, 3);
        write_trace(&synthetic_oracle(&w, 0.1, 2, 0).unwrap(), dir.path()).unwrap();
        assert!(validate_trace(dir.path()).unwrap().warnings.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_read_roundtrip(seed in any::<u64>(), hidden in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let trace = random_trace(seed, hidden);
            write_trace(&trace, dir.path()).unwrap();
            let back = read_trace(dir.path()).unwrap();
            let same_bits = back.predictions().data().iter().zip(trace.predictions().data())
                .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(back, trace);
        }
    }
}

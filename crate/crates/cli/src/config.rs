//! Experiment configuration: a TOML file with one table per pipeline stage,
//! plus `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsdistill::data::{Normalization, SplitSpec};
use tsdistill::trainer::{KdVariant, TrainConfig};
use tsdistill::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Input series; when absent the output of `gen-synth` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub train_stride: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub split: SplitSpec,
}

fn one() -> usize {
    1
}

/// Seesaw generator settings; lookback and horizon come from `[data]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub channels: usize,
    pub length: usize,
    pub easy_amp: f64,
    pub hard_snr: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            length: 3000,
            easy_amp: 2.0,
            hard_snr: 2.0,
            seed: 0,
        }
    }
}

/// Series the synthetic oracle reads its "true" future values from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    /// The noise-free latent series when `gen-synth` wrote one, else the
    /// observed series.
    #[default]
    Auto,
    Latent,
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Trace directory stem under `traces/`.
    pub name: String,
    pub noise_sigma: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub source: TeacherSource,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            name: "oracle".into(),
            noise_sigma: 0.05,
            hidden_dim: 8,
            seed: 0,
            source: TeacherSource::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<KdVariant>,
    pub seeds: Vec<u64>,
    /// Horizons to sweep; empty means `[data].horizon` only.
    pub horizons: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: vec![KdVariant::Distilts, KdVariant::OnlyHw, KdVariant::OnlyFta, KdVariant::Baseline],
            seeds: (0..5).collect(),
            horizons: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides` and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, Error> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.data.lookback == 0 || self.data.horizon == 0 {
            return Err(Error::Config("data.lookback and data.horizon must be >= 1".into()));
        }
        if self.data.train_stride == 0 {
            return Err(Error::Config("data.train_stride must be >= 1".into()));
        }
        if self.teacher.noise_sigma.is_nan() || self.teacher.noise_sigma < 0.0 {
            return Err(Error::Config("teacher.noise_sigma must be >= 0".into()));
        }
        if self.ablate.horizons.contains(&0) {
            return Err(Error::Config("ablate.horizons must be >= 1".into()));
        }
        self.train.validate()
    }

    /// Horizons for which traces are generated: `[data].horizon` first,
    /// then any other ablation horizons.
    pub fn horizons(&self) -> Vec<usize> {
        let mut hs = vec![self.data.horizon];
        for &h in &self.ablate.horizons {
            if !hs.contains(&h) {
                hs.push(h);
            }
        }
        hs
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }
}

/// Sets `a.b.c = value` in `doc`. The value is read as a TOML literal when
/// it parses as one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use tsdistill::students::StudentKind;

    use super::*;

    const MINIMAL: &str = "[data]\nlookback = 32\nhorizon = 8\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL, &[]).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.data.train_stride, 1);
        assert_eq!(c.horizons(), vec![8]);
    }

    #[test]
    fn lookback_is_mandatory() {
        let e = ExperimentConfig::from_toml("[data]\nhorizon = 8\n", &[]).unwrap_err();
        assert!(e.to_string().contains("lookback"), "{e}");
    }

    #[test]
    fn overrides_are_typed() {
        let sets = [
            "train.tau=1.5".to_string(),
            "train.kd_variant=only_fta".to_string(),
            "train.student.kind = variate".to_string(),
            "train.optim.clip_norm=2".to_string(),
            "ablate.seeds=[3, 4]".to_string(),
        ];
        let c = ExperimentConfig::from_toml(MINIMAL, &sets).unwrap();
        assert_eq!(c.train.tau, 1.5);
        assert_eq!(c.train.kd_variant, KdVariant::OnlyFta);
        assert_eq!(c.train.student.kind, StudentKind::Variate);
        assert_eq!(c.train.optim.clip_norm, 2.0);
        assert_eq!(c.ablate.seeds, vec![3, 4]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml(MINIMAL, &["train.tua=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml(MINIMAL, &["train.epochs=0".into()]).is_err());
        assert!(ExperimentConfig::from_toml(MINIMAL, &["train.kd_variant=distil".into()]).is_err());
        assert!(ExperimentConfig::from_toml(MINIMAL, &["novalue".into()]).is_err());
        assert!(ExperimentConfig::from_toml(MINIMAL, &["data.lookback.x=1".into()]).is_err());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = ExperimentConfig::from_toml(MINIMAL, &["ablate.horizons=[8, 16]".into()]).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.horizons(), vec![8, 16]);
    }
}

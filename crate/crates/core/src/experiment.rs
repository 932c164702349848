//! Experiment files: a TOML document naming a dataset, a model, a training
//! preset with overrides, and optional diagnostics and sweep axes.
//!
//! Resolution layers the user document over a default document built from
//! the preset and dataset, then deserializes the merged tree strictly. Unknown
//! keys and type errors are reported with their dotted key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attack::{AttackConfig, AttackSchedule};
use crate::data::{self, generate_synthetic, split_holdout, stratified_subset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelSpec};
use crate::rng;
use crate::tensor::Real;
use crate::train::{BoatConfig, KdConfig, TrainConfig, WaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "pgd-at")]
    PgdAt,
    #[serde(rename = "rebat")]
    Rebat,
    #[serde(rename = "rebat++")]
    RebatPlusPlus,
    #[serde(rename = "rebat-kd")]
    RebatKd,
}

pub const PRESET_EPOCHS: usize = 200;
pub const PRESET_MILESTONES: [usize; 2] = [100, 150];

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PgdAt => "pgd-at",
            Preset::Rebat => "rebat",
            Preset::RebatPlusPlus => "rebat++",
            Preset::RebatKd => "rebat-kd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into()))
            .map_err(|_| Error::invalid(format!("unknown preset `{s}` (pgd-at, rebat, rebat++, rebat-kd)")))
    }

    pub fn decay_factor(self) -> f64 {
        match self {
            Preset::PgdAt => 10.0,
            Preset::Rebat | Preset::RebatKd => 1.5,
            Preset::RebatPlusPlus => 1.7,
        }
    }

    /// Preset at the reference length: 200 epochs, decays at 100 and 150.
    pub fn config(self) -> TrainConfig {
        self.config_for(PRESET_EPOCHS, PRESET_MILESTONES.to_vec())
    }

    /// Preset on a different schedule length. Epoch-indexed settings (WA
    /// start, the rebat++ attack switch, λ stages) follow the milestones.
    pub fn config_for(self, epochs: usize, milestones: Vec<usize>) -> TrainConfig {
        let first = milestones.first().copied();
        let mut cfg = TrainConfig::pgd_at(epochs, milestones, self.decay_factor());
        if self == Preset::PgdAt {
            return cfg;
        }
        cfg.wa = WaConfig {
            enabled: true,
            start_epoch: None,
            gamma: 0.999,
        };
        cfg.boat = BoatConfig {
            lambda: 1.0,
            lambda2: None,
        };
        match self {
            Preset::RebatPlusPlus => {
                if let Some(m) = first {
                    let base = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 10);
                    cfg.attack = AttackSchedule::switch_at(base, m, AttackConfig::pgd(10.0 / 255.0, 2.0 / 255.0, 12));
                }
            }
            Preset::RebatKd => {
                cfg.kd = Some(KdConfig {
                    lambda_st: 0.4,
                    teacher: None,
                })
            }
            _ => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding the raw files (cifar10, mnist).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Training examples after subsetting (and after the validation holdout).
    pub train_size: usize,
    pub test_size: usize,
    /// Held out of the training pool for best-checkpoint selection.
    pub val_size: usize,
    pub data_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetConfig {
    pub fn default_for(kind: DatasetKind) -> Self {
        let (train_size, test_size, val_size) = match kind {
            DatasetKind::Synthetic => (4000, 2000, 1000),
            DatasetKind::Cifar10 | DatasetKind::Mnist => (5000, 1000, 500),
        };
        Self {
            kind,
            path: None,
            train_size,
            test_size,
            val_size,
            data_seed: 0,
            synthetic: (kind == DatasetKind::Synthetic).then(SyntheticSpec::default),
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        match self.kind {
            DatasetKind::Synthetic => {
                let side = self.synthetic.as_ref().map_or(SyntheticSpec::default().side, |s| s.side);
                [1, side, side]
            }
            DatasetKind::Cifar10 => [3, 32, 32],
            DatasetKind::Mnist => [1, 28, 28],
        }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            DatasetKind::Synthetic => self.synthetic.as_ref().map_or(10, |s| s.classes),
            _ => 10,
        }
    }

    /// Materialize `(train, val, test)`.
    pub fn load<T: Real>(&self) -> Result<(Dataset<T>, Option<Dataset<T>>, Dataset<T>)> {
        let pool = self.train_size + self.val_size;
        let (train, test) = match self.kind {
            DatasetKind::Synthetic => {
                let spec = self.synthetic.clone().unwrap_or_default();
                let (tr, te, _) = generate_synthetic(&spec, pool, self.test_size, self.data_seed)?;
                (tr, te)
            }
            DatasetKind::Cifar10 | DatasetKind::Mnist => {
                let dir = self
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Config {
                        path: "dataset.path".into(),
                        message: "required for this dataset kind".into(),
                    })?;
                let (tr, te) = if self.kind == DatasetKind::Cifar10 {
                    data::load_cifar10(dir)?
                } else {
                    data::load_mnist(dir)?
                };
                let tr = stratified_subset(&tr, pool, rng::derive(self.data_seed, &[rng::stream::SHUFFLE, 0]))?;
                let te = stratified_subset(&te, self.test_size, rng::derive(self.data_seed, &[rng::stream::SHUFFLE, 1]))?;
                (tr, te)
            }
        };
        if self.val_size == 0 {
            return Ok((train, None, test));
        }
        let (train, val) = split_holdout(&train, self.val_size, self.data_seed)?;
        Ok((train, Some(val), test))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::SmallCnn,
            widths: vec![16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Confusion,
    Symmetry,
    Landscape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DecayFactor,
    /// Training ε in units of 1/255; steps follow the ε rule.
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn str_at<'a>(doc: &'a Value, path: &[&str]) -> Result<Option<&'a str>> {
    let mut v = doc;
    for key in path {
        match v.get(key) {
            Some(next) => v = next,
            None => return Ok(None),
        }
    }
    v.as_str()
        .map(Some)
        .ok_or_else(|| config_err(path.join("."), "expected a string"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "document".into());
            config_err(at, e.message().to_string())
        })?;
        let user = serde_json::to_value(table)?;
        Self::resolve(user)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Merge a user document over preset and dataset defaults.
    pub fn resolve(user: Value) -> Result<Self> {
        if !user.is_object() {
            return Err(config_err("", "expected a table"));
        }
        let preset = str_at(&user, &["preset"])?.map(Preset::parse).transpose().map_err(|e| config_err("preset", e.to_string()))?;
        let kind = match str_at(&user, &["dataset", "kind"])? {
            None => DatasetKind::Synthetic,
            Some(k) => serde_json::from_value(Value::String(k.into()))
                .map_err(|_| config_err("dataset.kind", format!("unknown dataset kind `{k}`")))?,
        };
        // epoch-indexed preset settings follow the file's schedule length
        let epochs = user.pointer("/train/epochs").and_then(Value::as_u64).map(|e| e as usize);
        let milestones: Option<Vec<usize>> =
            user.pointer("/train/lr/milestones").and_then(|m| serde_json::from_value(m.clone()).ok());
        let train = match (epochs, milestones) {
            (None, None) => preset.unwrap_or(Preset::PgdAt).config(),
            (e, m) => preset.unwrap_or(Preset::PgdAt).config_for(
                e.unwrap_or(PRESET_EPOCHS),
                m.unwrap_or_else(|| PRESET_MILESTONES.to_vec()),
            ),
        };
        let mut doc = serde_json::json!({
            "seed": 0,
            "out_dir": "runs",
            "dataset": DatasetConfig::default_for(kind),
            "model": ModelConfig::default(),
            "train": train,
        });
        let user_seed = user.get("train").and_then(|t| t.get("seed")).cloned();
        merge(&mut doc, user);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(&doc).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })?;
        if user_seed.is_some_and(|s| s.as_u64() != Some(cfg.seed)) {
            return Err(config_err("train.seed", "set the run seed with the top-level `seed` key"));
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| config_err("train", e.to_string()))?;
        if self.dataset.train_size == 0 || self.dataset.test_size == 0 {
            return Err(config_err("dataset", "train_size and test_size must be positive"));
        }
        if let Some(s) = &self.dataset.synthetic {
            if self.dataset.kind != DatasetKind::Synthetic {
                return Err(config_err("dataset.synthetic", "only valid for the synthetic kind"));
            }
            s.validate().map_err(|e| config_err("dataset.synthetic", e.to_string()))?;
        }
        self.model_spec().layout().map_err(|e| config_err("model", e.to_string()))?;
        if let Some(kd) = &self.train.kd {
            if kd.lambda_st > 0.0 && kd.teacher.is_none() {
                return Err(config_err("train.kd.teacher", "a teacher checkpoint is required when lambda_st > 0"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(config_err("sweep.values", "empty sweep axis"));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(config_err("sweep.values", "values must be finite"));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            arch: self.model.arch,
            widths: self.model.widths.clone(),
            input_shape: self.dataset.image_shape(),
            classes: self.dataset.classes(),
        }
    }

    /// One resolved training config per sweep value, labelled for the run
    /// directory name.
    pub fn sweep_points(&self) -> Result<Vec<(String, TrainConfig)>> {
        let sweep = self.sweep.as_ref().ok_or_else(|| config_err("sweep", "no sweep section"))?;
        if sweep.values.is_empty() {
            return Err(config_err("sweep.values", "empty sweep axis"));
        }
        sweep
            .values
            .iter()
            .map(|&v| {
                let mut cfg = self.train.clone();
                let label = match sweep.axis {
                    SweepAxis::DecayFactor => {
                        cfg.lr.decay_factor = v;
                        format!("d_{v}")
                    }
                    SweepAxis::Epsilon => {
                        let eps = v / 255.0;
                        cfg.attack = AttackSchedule::constant(AttackConfig::pgd_scaled(eps));
                        format!("eps_{v}")
                    }
                };
                cfg.validate().map_err(|e| config_err("sweep.values", e.to_string()))?;
                Ok((label, cfg))
            })
            .collect()
    }
}

/// Serialize a config back to TOML.
pub fn to_toml<C: Serialize>(cfg: &C) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::invalid(format!("toml serialization: {e}")))
}

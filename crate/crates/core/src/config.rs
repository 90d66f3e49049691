//! Run configuration: one TOML document, overridable from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::NUM_STAGES;
use crate::train::PipelineConfig;

/// Prefix of environment overrides; `__` separates key path segments, so
/// `SOMNO_PIPELINE__TRAIN__SEED=3` sets `pipeline.train.seed`.
pub const ENV_PREFIX: &str = "SOMNO_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled_manifest: Option<PathBuf>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Epochs whose uncertainty reaches this value are flagged for review.
    pub uncertainty_threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            uncertainty_threshold: 1.0,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_folds() -> usize {
    20
}

fn default_val_fraction() -> f64 {
    0.1
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        RunConfig {
            data: DataConfig {
                manifest: manifest.into(),
                unlabeled_manifest: None,
                folds: default_folds(),
                val_fraction: default_val_fraction(),
            },
            pipeline: PipelineConfig::default(),
            predict: PredictConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Parses `text`, applies `overrides` (name, value) whose names carry
    /// [`ENV_PREFIX`], and validates.
    pub fn parse<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, value) in overrides {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                apply_override(&mut doc, rest, &value)?;
            }
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file with the process environment as overrides. Relative
    /// paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, std::env::vars())
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.root())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.manifest);
        if let Some(u) = cfg.data.unlabeled_manifest.as_mut() {
            resolve(u);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.data.folds < 2 {
            return Err(Error::Config("data.folds must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config("data.val_fraction must lie in [0, 1)".into()));
        }
        let t = self.predict.uncertainty_threshold;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(
                "predict.uncertainty_threshold must be nonnegative".into(),
            ));
        }
        if t > (NUM_STAGES as f64).ln() + 1.0 {
            log::warn!("predict.uncertainty_threshold {t} exceeds the entropy bound; nothing will be flagged");
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!(
            "malformed override {ENV_PREFIX}{key}"
        )));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {ENV_PREFIX}{key}: {p} is not a table"))
        })?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

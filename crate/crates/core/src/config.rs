//! Run configuration: a named preset overlaid by a TOML file and then by
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabelRange, SnrProfile};
use crate::error::{Error, Result};
use crate::harness::{CorruptionMode, Modality, TrainConfig};
use crate::model::{ModalShapes, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; generated in memory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub samples: usize,
    /// Generator seed, independent of the run seed.
    pub seed: u64,
    pub shapes: ModalShapes,
    pub snr: SnrProfile,
    pub label_range: LabelRange,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed missing rate for `eval`.
    #[serde(default)]
    pub missing_rate: f64,
    /// Modalities erased entirely, e.g. `"t"` or `"t,a"`; overrides the rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete_missing: Option<String>,
}

impl EvalConfig {
    pub fn mode(&self) -> Result<CorruptionMode> {
        let mode = match &self.complete_missing {
            Some(s) => CorruptionMode::CompleteMissing(Modality::parse_set(s)?),
            None => CorruptionMode::TestFixed(self.missing_rate),
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let shapes = ModalShapes::preset(name)?;
        let (lambda, samples, label_range) = match name {
            "mosi" => (0.7, 100, LabelRange::English),
            "mosei" => (0.3, 100, LabelRange::English),
            "sims" => (1.0, 100, LabelRange::Sims),
            _ => (0.7, 256, LabelRange::English),
        };
        Ok(Self {
            preset: name.to_string(),
            seed: 0,
            output_dir: PathBuf::from("runs").join(name),
            data: DataConfig {
                path: None,
                samples,
                seed: 0,
                shapes,
                snr: SnrProfile::default(),
                label_range,
            },
            model,
            train: TrainConfig {
                lambda,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        })
    }

    /// Resolves `preset`, then the file, then `overrides` (`a.b=value`).
    pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let v: toml::Table = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Some(v)
            }
            None => None,
        };
        let file_preset = file_value
            .as_ref()
            .and_then(|t| t.get("preset"))
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let name = preset.map(str::to_string).or(file_preset).unwrap_or_else(|| "desk".into());
        let base = Self::preset(&name)?;
        let mut merged = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(format!("preset serialization: {e}")))?;
        if let Some(f) = file_value {
            merge(&mut merged, f);
        }
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        merged.insert("preset".into(), toml::Value::String(name));
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.shapes.text.0 != self.model.seq_len {
            return Err(Error::Config(format!(
                "model.seq_len {} must equal the text length {}",
                self.model.seq_len, self.data.shapes.text.0
            )));
        }
        self.eval.mode()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        table = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` in `{path}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

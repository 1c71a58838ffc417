//! Run configuration files.
//!
//! A run is described by one TOML document:
//!
//! ```toml
//! schema_version = 1   # optional, only 1 is understood
//! seed = 0             # required
//!
//! [models]    # toy benchmark parameters (`ToyConfig`)
//! [attack]    # `AttackConfig`
//! [metrics]   # `MetricsConfig`
//! [output]    # `OutputConfig`
//! ```
//!
//! Every section and key is optional except `seed`; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::error::{ConfigViolation, Error, Result};
use crate::metrics::MetricsConfig;
use crate::toy::ToyConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write every selected image as a PNG.
    pub images: bool,
    /// Write one image grid per class.
    pub grids: bool,
    pub grid_columns: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/default"),
            images: true,
            grids: true,
            grid_columns: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub models: ToyConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            models: ToyConfig::default(),
            attack: AttackConfig::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Semantic checks on an already typed config.
    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(ConfigViolation {
                key: "schema_version".into(),
                message: format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            });
        }
        out.extend(self.models.violations("models."));
        out.extend(self.attack.violations("attack."));
        if self.metrics.k == 0 {
            out.push(ConfigViolation {
                key: "metrics.k".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.output.grid_columns == 0 {
            out.push(ConfigViolation {
                key: "output.grid_columns".into(),
                message: "must be positive".into(),
            });
        }
        let classes = self.models.classes.len();
        if let Some(&c) = self.attack.target_classes.iter().find(|&&c| c >= classes) {
            out.push(ConfigViolation {
                key: "attack.target_classes".into(),
                message: format!("class {c} out of range for {classes} classes"),
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// SHA-256 over a canonical JSON rendering of every field that affects
    /// results (the output section is excluded).
    pub fn hash(&self) -> String {
        let v = serde_json::json!({
            "schema_version": self.schema_version,
            "seed": self.seed,
            "models": self.models,
            "attack": self.attack,
            "metrics": self.metrics,
        });
        hex::encode(Sha256::digest(canonical_json(&v).as_bytes()))
    }
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Removes keys of `given` that do not occur in `known` and reports them,
/// recursing into tables present in both.
fn strip_unknown_keys(given: &mut toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<ConfigViolation>) {
    let unknown: Vec<String> = given.keys().filter(|k| !known.contains_key(*k)).cloned().collect();
    for k in unknown {
        given.remove(&k);
        out.push(ConfigViolation {
            key: format!("{prefix}{k}"),
            message: "unknown key".into(),
        });
    }
    for (k, v) in given.iter_mut() {
        if let (toml::Value::Table(gt), Some(toml::Value::Table(kt))) = (v, known.get(k)) {
            strip_unknown_keys(gt, kt, &format!("{prefix}{k}."), out);
        }
    }
}

fn section<T: DeserializeOwned + Default>(
    table: &toml::Table,
    key: &str,
    out: &mut Vec<ConfigViolation>,
) -> T {
    match table.get(key) {
        None => T::default(),
        Some(v) => match v.clone().try_into::<T>() {
            Ok(t) => t,
            Err(e) => {
                out.push(ConfigViolation {
                    key: key.into(),
                    message: e.to_string().trim().to_string(),
                });
                T::default()
            }
        },
    }
}

/// Parses and validates a config document, collecting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: "<config>".into(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let known = match toml::Value::try_from(RunConfig::new(0)) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("default config serializes to a table"),
    };
    strip_unknown_keys(&mut table, &known, "", &mut out);

    let seed = match table.get("seed") {
        None => {
            out.push(ConfigViolation {
                key: "seed".into(),
                message: "missing required key".into(),
            });
            0
        }
        Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(other) => {
            out.push(ConfigViolation {
                key: "seed".into(),
                message: format!("expected a non-negative integer, found {other}"),
            });
            0
        }
    };
    let schema_version = match table.get("schema_version") {
        None => SCHEMA_VERSION,
        Some(toml::Value::Integer(i)) if *i >= 0 => *i as u32,
        Some(other) => {
            out.push(ConfigViolation {
                key: "schema_version".into(),
                message: format!("expected an integer, found {other}"),
            });
            SCHEMA_VERSION
        }
    };
    let config = RunConfig {
        schema_version,
        seed,
        models: section(&table, "models", &mut out),
        attack: section(&table, "attack", &mut out),
        metrics: section(&table, "metrics", &mut out),
        output: section(&table, "output", &mut out),
    };
    // Sections that failed to parse were replaced by defaults; checking
    // those would only add noise.
    let failed: Vec<String> = out
        .iter()
        .filter(|v| v.message != "unknown key")
        .map(|v| format!("{}.", v.key))
        .collect();
    out.extend(
        config
            .violations()
            .into_iter()
            .filter(|v| !failed.iter().any(|f| v.key.starts_with(f.as_str()))),
    );
    if out.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(out))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

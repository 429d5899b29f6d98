//! Layered configuration: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cacao_core::cacao::DEFAULT_TILT_AMPLITUDE;
use cacao_core::experiments::{default_gap_scan_config, BenchmarkConfig, Method, ScalingConfig};
use cacao_core::{CacaoConfig, QuantumConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::manifest::MANIFEST_FORMAT;
use crate::UsageError;

/// Top-level tables a config file may contain.
pub const SECTIONS: [&str; 8] = [
    "generate",
    "solve",
    "cacao",
    "quantum",
    "two_spin",
    "gap_scan",
    "benchmark",
    "scaling",
];

/// Parsed config file, kept as JSON so it can be laid over any command's defaults.
#[derive(Debug, Clone, Default)]
pub struct FileConfig(Map<String, Value>);

impl FileConfig {
    /// Reads a TOML config file, or the `config` object of a run manifest (`.json`).
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value = if path.extension().is_some_and(|e| e == "json") {
            let v: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            if v.get("format").and_then(Value::as_str) != Some(MANIFEST_FORMAT) {
                bail!(UsageError(format!(
                    "{}: JSON configs must be run manifests ({MANIFEST_FORMAT})",
                    path.display()
                )));
            }
            v["config"].clone()
        } else {
            let t: toml::Table = toml::from_str(&text)
                .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t)?
        };
        let Value::Object(map) = value else {
            bail!(UsageError(format!("{}: expected a table", path.display())));
        };
        if let Some(k) = map.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            bail!(UsageError(format!(
                "{}: unknown section `{k}` (expected one of {})",
                path.display(),
                SECTIONS.join(", ")
            )));
        }
        Ok(Self(map))
    }

    /// Lays the sections named by `T`'s fields over `base`.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, base: T) -> anyhow::Result<T> {
        let mut value = serde_json::to_value(base)?;
        if let Value::Object(fields) = &mut value {
            for (key, slot) in fields.iter_mut() {
                if let Some(overlay) = self.0.get(key) {
                    merge(slot, overlay.clone());
                }
            }
        }
        serde_json::from_value(value).map_err(|e| UsageError(format!("config: {e}")).into())
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
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

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSettings {
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ising_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub generate: GenerateSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSettings {
    pub method: Option<Method>,
    pub instance: Option<PathBuf>,
    /// Horizon for every method.
    #[serde(rename = "T")]
    pub t: f64,
    /// Seed for random initial tilts (CACAO only); `None` starts untilted.
    pub seed: Option<u64>,
    pub tilt_amplitude: f64,
    pub save_state: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            method: None,
            instance: None,
            t: 50.0,
            seed: None,
            tilt_amplitude: DEFAULT_TILT_AMPLITUDE,
            save_state: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub solve: SolveSettings,
    pub cacao: CacaoConfig,
    pub quantum: QuantumConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSpinSettings {
    pub h2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSpinConfig {
    pub two_spin: TwoSpinSettings,
    pub cacao: CacaoConfig,
}

impl Default for TwoSpinConfig {
    fn default() -> Self {
        Self {
            two_spin: TwoSpinSettings {
                h2: vec![0.9, 0.99],
            },
            cacao: CacaoConfig {
                record_controls: true,
                ..CacaoConfig::with_horizon(150.0)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapScanSettings {
    pub threshold: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    pub count: usize,
    /// Explicit `h2` values; replaces the log-spaced gap grid when set.
    pub h2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScanConfig {
    pub gap_scan: GapScanSettings,
    pub cacao: CacaoConfig,
}

impl Default for GapScanConfig {
    fn default() -> Self {
        Self {
            gap_scan: GapScanSettings {
                threshold: 0.99,
                min_gap: 0.02,
                max_gap: 0.5,
                count: 20,
                h2: None,
            },
            cacao: default_gap_scan_config(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFileConfig {
    pub benchmark: BenchmarkConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingFileConfig {
    pub scaling: ScalingConfig,
}

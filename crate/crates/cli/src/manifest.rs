use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FORMAT: &str = "cacao-manifest-v1";

/// Record of one CLI invocation. Passing it back through `--config` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub artifact_paths: Vec<PathBuf>,
    pub results: Value,
    pub warnings: Vec<String>,
    pub started: String,
    pub finished: String,
    pub wall_seconds: f64,
}

pub struct Recorder {
    command: String,
    started: DateTime<Utc>,
    artifacts: Vec<PathBuf>,
    warnings: Vec<String>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Utc::now(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn warn(&mut self, msgs: impl IntoIterator<Item = String>) {
        for m in msgs {
            eprintln!("warning: {m}");
            self.warnings.push(m);
        }
    }

    /// Writes `<dir>/<stem>_manifest.json` and returns its path.
    pub fn finish(
        self,
        dir: &Path,
        stem: &str,
        config: &impl Serialize,
        seeds: Vec<u64>,
        results: Value,
    ) -> anyhow::Result<PathBuf> {
        let finished = Utc::now();
        let path = dir.join(format!("{stem}_manifest.json"));
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            seeds,
            artifact_paths: self.artifacts,
            results,
            warnings: self.warnings,
            started: stamp(self.started),
            finished: stamp(finished),
            wall_seconds: (finished - self.started)
                .to_std()
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

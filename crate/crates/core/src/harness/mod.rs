//! Experiment runners and report writing.

mod config;
mod investigate;
pub mod stats;
mod stego_bench;
mod wm_bench;

pub use config::{
    ExperimentConfig, FixtureName, HashSpec, InvestigateSpec, ModelSpec, PromptSpec, Resources,
    StegoSpec, WatermarkSpec,
};
pub use investigate::run_investigation;
pub use stego_bench::run_stego_bench;
pub use wm_bench::{calibrate_q, run_wm_bench, QCalibration};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Cells with this many samples or fewer are flagged, not summarized.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Consistency(#[from] crate::consistency::ConsistencyError),
    #[error(transparent)]
    Stego(#[from] crate::stego::StegoError),
    #[error(transparent)]
    Watermark(#[from] crate::watermark::WatermarkError),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    Lm(#[from] crate::lm::LmError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column across rows.
    pub fn values(&self, name: &str) -> Vec<&Value> {
        let i = self.column(name).unwrap_or_else(|| panic!("no column {name} in {}", self.name));
        self.rows.iter().map(|r| &r[i]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| match v {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub started_unix: u64,
}

impl Environment {
    pub fn capture() -> Self {
        Environment {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub environment: Environment,
    pub tables: Vec<Table>,
    /// Scalar results that do not fit a table, such as test statistics.
    pub summary: serde_json::Map<String, Value>,
    pub runtime_secs: f64,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// `report.json` plus one CSV per table.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join("report.json");
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, body + "\n").map_err(|e| HarnessError::io(&json, e))?;
        for t in &self.tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        Ok(())
    }
}

/// Mean, or null when there is nothing to average.
pub(crate) fn mean_value(xs: &[f64]) -> Value {
    if xs.is_empty() {
        Value::Null
    } else {
        serde_json::json!(stats::mean(xs))
    }
}

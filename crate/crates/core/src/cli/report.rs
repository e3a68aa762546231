//! Run reports, invariant checks and CSV tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Result;

use super::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub pass: bool,
    #[serde(deserialize_with = "nullable")]
    pub value: f64,
    #[serde(deserialize_with = "nullable")]
    pub threshold: f64,
    /// Recorded but never fails the run.
    #[serde(default)]
    pub informational: bool,
    pub detail: String,
}

/// Non-finite numbers are written as `null`; read them back as NaN.
fn nullable<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(id: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { id: id.into(), pass: value <= threshold, value, threshold, informational: false, detail: detail.into() }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(id: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { id: id.into(), pass: value >= threshold, value, threshold, informational: false, detail: detail.into() }
    }

    pub fn flag(id: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            pass,
            value: if pass { 1.0 } else { 0.0 },
            threshold: 1.0,
            informational: false,
            detail: detail.into(),
        }
    }

    pub fn record(id: &str, value: f64, detail: impl Into<String>) -> Self {
        Self { id: id.into(), pass: true, value, threshold: f64::NAN, informational: true, detail: detail.into() }
    }

    pub fn fails(&self) -> bool {
        !self.informational && !self.pass
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    SolverFailure,
    InvariantFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::ConfigError => 2,
            Self::SolverFailure => 3,
            Self::InvariantFailure => 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub study: String,
    pub status: Status,
    pub config: Option<ExperimentConfig>,
    pub version: String,
    pub threads: usize,
    pub thread_source: String,
    pub wall_time_s: f64,
    pub summary: Map<String, Value>,
    /// Per-sample solver statistics, keyed by sample index and operation.
    pub samples: Vec<Value>,
    pub tables: Vec<String>,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(study: &str, config: Option<ExperimentConfig>, threads: usize, thread_source: &str) -> Self {
        Self {
            study: study.into(),
            status: Status::Ok,
            config,
            version: env!("CARGO_PKG_VERSION").into(),
            threads,
            thread_source: thread_source.into(),
            wall_time_s: 0.0,
            summary: Map::new(),
            samples: Vec::new(),
            tables: Vec::new(),
            checks: Vec::new(),
            error: None,
        }
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.fails()).collect()
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A CSV table with a fixed header; numbers use the shortest round-trip form.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let tables = dir.join("tables");
        fs::create_dir_all(&tables)?;
        let mut w = csv::Writer::from_path(tables.join(format!("{}.csv", self.name)))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Column names `prefix_1 .. prefix_d`.
pub fn columns(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec![num(0.1), opt(None)]);
        t.push(vec![num(1e-300), num(-2.5)]);
        t.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("tables/demo.csv")).unwrap();
        assert_eq!(text, "a,b\n1e-1,\n1e-300,-2.5e0\n");
    }

    #[test]
    fn check_semantics() {
        assert!(Check::at_most("x", 1.0, 1.0, "").pass);
        assert!(!Check::at_least("x", 0.5, 0.8, "").pass);
        let r = Check::record("x", f64::NAN, "");
        assert!(!r.fails());
        assert_eq!(Status::InvariantFailure.exit_code(), 4);
    }
}

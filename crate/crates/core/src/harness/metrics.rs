use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One row of an experiment's metrics stream. Optional fields are omitted
/// from the JSON line when absent, never written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Milliseconds since the experiment started; the only nondeterministic field.
    pub wall_ms: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dom_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_var: Option<f64>,
    #[serde(flatten)]
    pub extras: BTreeMap<String, Value>,
}

impl MetricsRecord {
    pub fn new(step: u64, wall_ms: f64, loss: f64, lr: f64) -> Self {
        Self {
            step,
            wall_ms,
            loss,
            accuracy: None,
            lr,
            sin_theta: None,
            dom_var: None,
            bulk_var: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extras.insert(key.to_string(), value.into());
        self
    }

    /// The `run` tag separating series that share one file.
    pub fn run(&self) -> &str {
        self.extras.get("run").and_then(Value::as_str).unwrap_or("")
    }

    /// Numeric value of a named field, looking in the extras last.
    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "step" => Some(self.step as f64),
            "wall_ms" => Some(self.wall_ms),
            "loss" => Some(self.loss),
            "accuracy" => self.accuracy,
            "lr" => Some(self.lr),
            "sin_theta" => self.sin_theta,
            "dom_var" => self.dom_var,
            "bulk_var" => self.bulk_var,
            other => self.extras.get(other).and_then(Value::as_f64),
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        let fields = [
            Some(self.wall_ms),
            Some(self.loss),
            Some(self.lr),
            self.accuracy,
        ]
        .into_iter()
        .chain([self.sin_theta, self.dom_var, self.bulk_var])
        .flatten();
        if fields.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::Poisoned(format!(
                "non-finite metric at step {}",
                self.step
            )));
        }
        serde_json::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Checks that steps strictly increase within every `run` series.
pub fn check_monotone(records: &[MetricsRecord]) -> Result<()> {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        if let Some(&prev) = last.get(r.run()) {
            if r.step <= prev {
                return Err(Error::Validation(format!(
                    "run {:?}: step {} follows step {prev}",
                    r.run(),
                    r.step
                )));
            }
        }
        last.insert(r.run(), r.step);
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", r.to_json_line()?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// The JSONL text with every `wall_ms` field removed, for determinism checks.
pub fn strip_wall_time(jsonl: &str) -> Result<String> {
    let mut out = String::new();
    for (i, line) in jsonl.lines().enumerate() {
        let mut v: serde_json::Map<String, Value> =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        v.remove("wall_ms");
        out.push_str(&serde_json::to_string(&v).map_err(|e| Error::Io(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

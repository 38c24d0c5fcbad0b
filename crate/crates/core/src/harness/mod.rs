//! Config-driven experiment runner: parsing, seeded experiment recipes,
//! JSONL metrics and SVG charts.

mod config;
mod experiments;
mod metrics;
mod plots;
mod runs;

pub use config::{
    ExperimentConfig, ExperimentKind, InitKind, OptimConfig, ProbeConfig, ProblemConfig,
    ProblemKind, ScheduleConfig, ScheduleKind, SpectrumKind,
};
pub use experiments::{run_experiment, Outcome, DEGENERACY_GAP, DIVERGENCE_FACTOR, SPIKE_RATIO};
pub use metrics::{check_monotone, read_jsonl, strip_wall_time, write_jsonl, MetricsRecord};
pub use plots::{available_charts, emit_plots, fitted_slope, render, CHARTS};
pub use runs::{schedule, train, tune_baseline, Model, Setup, StepView, Trace, Tuned};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

impl Outcome {
    /// Writes the metrics stream to `path` and the summary next to it as
    /// `<stem>.summary.json`; returns the summary path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        write_jsonl(path, &self.records)?;
        let summary = path.with_extension("summary.json");
        let text =
            serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&summary, text + "\n")?;
        Ok(summary)
    }
}

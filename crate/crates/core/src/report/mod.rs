//! Experiment orchestration, correlation analysis and report files.

mod config;
mod run;
mod stats;
mod tables;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{CorrelationConfig, DataConfig, ExperimentConfig, MetricsConfig, ModelConfig};
pub use run::{
    run_experiment, trial_seed, CorrelationRow, LayerInfo, LayerRiskReport, Manifest, SummaryRow, TrialResult,
};
pub use stats::{delta_r, mean_ci, median, pearson, pearson_pvalue};
pub use tables::correlate_tables;

/// File names written by [`write_report`].
pub const REPORT_FILES: [&str; 6] = [
    "summary.csv",
    "correlations.csv",
    "metrics.csv",
    "attack.csv",
    "manifest.json",
    "report.json",
];

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))
}

#[derive(Serialize)]
struct TrialSummary {
    trial: usize,
    seed: u64,
    main_accuracy: f64,
}

#[derive(Serialize)]
struct Bundle<'a> {
    manifest: &'a Manifest,
    layers: &'a [LayerInfo],
    trials: Vec<TrialSummary>,
    summary: &'a [SummaryRow],
    correlations: &'a [CorrelationRow],
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the CSV tables, the manifest and a JSON bundle into `dir`.
pub fn write_report(dir: &Path, report: &LayerRiskReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "summary.csv", &csv_bytes(&report.summary)?)?;
    write(dir, "correlations.csv", &csv_bytes(&report.correlations)?)?;
    write(dir, "metrics.csv", &csv_bytes(&report.metric_rows())?)?;
    write(dir, "attack.csv", &csv_bytes(&report.attack_rows())?)?;
    write(dir, "manifest.json", &serde_json::to_vec_pretty(&report.manifest)?)?;
    let bundle = Bundle {
        manifest: &report.manifest,
        layers: &report.layers,
        trials: report
            .trials
            .iter()
            .map(|t| TrialSummary {
                trial: t.trial,
                seed: t.seed,
                main_accuracy: t.main_accuracy,
            })
            .collect(),
        summary: &report.summary,
        correlations: &report.correlations,
    };
    write(dir, "report.json", &serde_json::to_vec_pretty(&bundle)?)
}

/// Parses either an experiment config or a previously written manifest.
pub fn load_experiment(text: &str) -> Result<ExperimentConfig> {
    if let Ok(m) = serde_json::from_str::<Manifest>(text) {
        m.experiment.validate()?;
        return Ok(m.experiment);
    }
    ExperimentConfig::from_json(text)
}

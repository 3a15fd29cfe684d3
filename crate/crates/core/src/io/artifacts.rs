//! JSON artifacts and plain-text/CSV reports.
//!
//! JSON is written with fields in declaration order and floats in shortest
//! round-trip form, so the same result always produces the same bytes.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{ReplicationReport, TuneResult};
use crate::model::{accuracy, check_beta, log_likelihood, ChoiceDataset, Coefficients, ModelSpec};
use crate::optimizer::{Estimator, FitResult};
use crate::robust_feature::NormSplit;

/// What `fit` writes: the model, the estimator, the result, and training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: ModelSpec,
    pub estimator: Estimator,
    pub beta: Coefficients,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub train_log_likelihood: f64,
    pub train_accuracy: f64,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<NormSplit>,
}

impl FitReport {
    pub fn new(spec: &ModelSpec, estimator: &Estimator, fit: FitResult, train: &ChoiceDataset) -> Result<Self> {
        Ok(FitReport {
            spec: spec.clone(),
            estimator: estimator.clone(),
            train_log_likelihood: log_likelihood(spec, &fit.beta, train)?,
            train_accuracy: accuracy(spec, &fit.beta, train)?,
            beta: fit.beta,
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            gradient_norm: fit.gradient_norm,
            objective_trace: fit.objective_trace,
            split: fit.split,
        })
    }
}

/// Coefficients together with the model they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFile {
    pub spec: ModelSpec,
    pub beta: Coefficients,
}

impl BetaFile {
    pub fn new(spec: &ModelSpec, beta: &Coefficients) -> Result<Self> {
        check_beta(spec, beta)?;
        Ok(BetaFile { spec: spec.clone(), beta: beta.clone() })
    }
}

/// Reads `spec` and `beta` from any JSON object holding them (a [`BetaFile`] or a
/// [`FitReport`]) and checks that they agree.
pub fn read_beta(path: impl AsRef<Path>) -> Result<BetaFile> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    parse_beta(&text).map_err(|e| e.context(format!("coefficients file {}", path.display())))
}

pub fn parse_beta(text: &str) -> Result<BetaFile> {
    let file: BetaFile = serde_json::from_str(text)?;
    check_beta(&file.spec, &file.beta)?;
    Ok(file)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Features down, alternatives across; pinned coefficients shown as `-`.
pub fn coefficient_table(spec: &ModelSpec, beta: &Coefficients) -> String {
    let name_w = spec.features().iter().map(|f| f.len()).max().unwrap_or(0).max(7);
    let col_w = spec.alternatives().iter().map(|a| a.len()).max().unwrap_or(0).max(12);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "feature");
    for a in spec.alternatives() {
        let _ = write!(out, "  {a:>col_w$}");
    }
    out.push('\n');
    for (k, f) in spec.features().iter().enumerate() {
        let _ = write!(out, "{f:<name_w$}");
        for i in 0..spec.n_alternatives() {
            if spec.includes(i, k) {
                let _ = write!(out, "  {:>col_w$.6}", beta.get(i, k));
            } else {
                let _ = write!(out, "  {:>col_w$}", "-");
            }
        }
        out.push('\n');
    }
    out
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Per-replication rows, one line per model and replication.
pub fn replication_rows_csv(report: &ReplicationReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["model", "replication", "train_accuracy", "train_ll", "test_accuracy", "test_ll"])?;
        for r in &report.rows {
            w.write_record([
                r.model.clone(),
                r.replication.to_string(),
                r.train_accuracy.to_string(),
                r.train_ll.to_string(),
                r.test_accuracy.to_string(),
                r.test_ll.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Mean and standard deviation per model and metric.
pub fn replication_summary_csv(report: &ReplicationReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["model", "metric", "mean", "std"])?;
        for a in &report.aggregates {
            w.write_record([a.model.clone(), a.metric.clone(), a.mean.to_string(), a.std.to_string()])?;
        }
        Ok(())
    })
}

pub fn pricing_csv(report: &ReplicationReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["model", "replication", "alpha_star", "predicted_revenue", "actual_revenue"])?;
        for p in &report.pricing {
            w.write_record([
                p.model.clone(),
                p.replication.to_string(),
                p.alpha_star.to_string(),
                p.predicted_revenue.to_string(),
                p.actual_revenue.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn tune_csv(result: &TuneResult) -> Result<String> {
    csv_string(|w| {
        w.write_record(["value", "validation_ll", "converged", "selected"])?;
        for row in &result.table {
            w.write_record([
                row.value.to_string(),
                row.validation_ll.to_string(),
                row.converged.to_string(),
                (row.value == result.best_value).to_string(),
            ])?;
        }
        Ok(())
    })
}

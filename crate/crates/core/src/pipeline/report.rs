//! Per-push rows, grouped statistics and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Group key standing for "every object" or "every action".
pub const ALL: &str = "all";

/// One scored push for one predictor. Error rows keep their identifying
/// columns and leave the metrics empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub object: String,
    pub link: String,
    pub action: String,
    pub query: usize,
    pub repeat: usize,
    pub predictor: String,
    pub friction: Option<f64>,
    pub d_lin: Option<f64>,
    pub d_ang: Option<f64>,
    pub d_norm: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub test_x: Option<f64>,
    pub test_y: Option<f64>,
    pub test_z: Option<f64>,
    pub test_qw: Option<f64>,
    pub test_qx: Option<f64>,
    pub test_qy: Option<f64>,
    pub test_qz: Option<f64>,
    pub pred_x: Option<f64>,
    pub pred_y: Option<f64>,
    pub pred_z: Option<f64>,
    pub pred_qw: Option<f64>,
    pub pred_qx: Option<f64>,
    pub pred_qy: Option<f64>,
    pub pred_qz: Option<f64>,
    pub error: Option<String>,
}

impl EvaluationRow {
    pub fn set_truth(&mut self, p: &Pose) {
        let [w, x, y, z] = p.wxyz();
        (self.test_x, self.test_y, self.test_z) = (Some(p.p().x), Some(p.p().y), Some(p.p().z));
        (self.test_qw, self.test_qx, self.test_qy, self.test_qz) = (Some(w), Some(x), Some(y), Some(z));
    }

    pub fn set_prediction(&mut self, p: &Pose) {
        let [w, x, y, z] = p.wxyz();
        (self.pred_x, self.pred_y, self.pred_z) = (Some(p.p().x), Some(p.p().y), Some(p.p().z));
        (self.pred_qw, self.pred_qx, self.pred_qy, self.pred_qz) = (Some(w), Some(x), Some(y), Some(z));
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Mean and sample standard deviation of the metrics over one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub object: String,
    pub predictor: String,
    pub action: String,
    /// Rows with metrics.
    pub n: usize,
    pub errors: usize,
    pub mean_d_lin: Option<f64>,
    pub std_d_lin: Option<f64>,
    pub mean_d_ang: Option<f64>,
    pub std_d_ang: Option<f64>,
    pub mean_d_norm: Option<f64>,
    pub std_d_norm: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (Some(mean), Some(std))
}

/// Groups by (object, predictor, action), plus per-object totals over
/// actions and per-predictor totals over everything (keyed [`ALL`]).
/// Sums run in row order.
pub fn summarize(rows: &[EvaluationRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&EvaluationRow>> = BTreeMap::new();
    for r in rows {
        for (o, a) in [(r.object.as_str(), r.action.as_str()), (r.object.as_str(), ALL), (ALL, ALL)] {
            groups.entry((o.to_string(), r.predictor.clone(), a.to_string())).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((object, predictor, action), rs)| {
            let ok: Vec<&&EvaluationRow> = rs.iter().filter(|r| !r.is_error() && r.d_norm.is_some()).collect();
            let col = |f: fn(&EvaluationRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (mean_d_lin, std_d_lin) = mean_std(&col(|r| r.d_lin));
            let (mean_d_ang, std_d_ang) = mean_std(&col(|r| r.d_ang));
            let (mean_d_norm, std_d_norm) = mean_std(&col(|r| r.d_norm));
            SummaryRow {
                object,
                predictor,
                action,
                n: ok.len(),
                errors: rs.len() - ok.len(),
                mean_d_lin,
                std_d_lin,
                mean_d_ang,
                std_d_ang,
                mean_d_norm,
                std_d_norm,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub training_size: usize,
    pub seed: u64,
    pub config_hash: String,
    pub push_length: f64,
    pub rows: Vec<EvaluationRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    format: &'static str,
    version: u32,
    training_size: usize,
    seed: u64,
    config_hash: &'a str,
    push_length: f64,
    rows: usize,
    error_rows: usize,
    groups: &'a [SummaryRow],
}

#[derive(Serialize)]
struct PlotRow<'a> {
    object: &'a str,
    predictor: &'a str,
    n: usize,
    mean_d_norm: Option<f64>,
    std_d_norm: Option<f64>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

impl EvaluationReport {
    pub fn group(&self, object: &str, predictor: &str, action: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.object == object && s.predictor == predictor && s.action == action)
    }

    /// Mean d_norm of a predictor over every object and action.
    pub fn total_mean(&self, predictor: &str) -> Option<f64> {
        self.group(ALL, predictor, ALL).and_then(|s| s.mean_d_norm)
    }

    pub fn error_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.is_error()).count()
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn parse_rows_csv(text: &str) -> Result<Vec<EvaluationRow>> {
        csv::Reader::from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(csv_err)).collect()
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SummaryDocument {
            format: "pushxfer-report",
            version: 1,
            training_size: self.training_size,
            seed: self.seed,
            config_hash: &self.config_hash,
            push_length: self.push_length,
            rows: self.rows.len(),
            error_rows: self.error_rows(),
            groups: &self.summary,
        })?)
    }

    /// Mean ± std of d_norm per (object, predictor) over all actions, for
    /// bar plots.
    pub fn plot_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in self.summary.iter().filter(|s| s.action == ALL) {
            w.serialize(PlotRow {
                object: &s.object,
                predictor: &s.predictor,
                n: s.n,
                mean_d_norm: s.mean_d_norm,
                std_d_norm: s.std_d_norm,
            })
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// File names written by [`Self::write_dir`].
    pub fn file_names(&self) -> [String; 3] {
        let n = self.training_size;
        [format!("pushes-{n}.csv"), format!("summary-{n}.json"), format!("plot-{n}.csv")]
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let [rows, summary, plot] = self.file_names();
        fs::write(dir.join(rows), self.rows_csv()?)?;
        fs::write(dir.join(summary), self.summary_json()?)?;
        fs::write(dir.join(plot), self.plot_csv()?)?;
        Ok(())
    }

    /// Rebuilds a report from its per-push CSV, recomputing the summary.
    pub fn from_rows(training_size: usize, seed: u64, config_hash: &str, push_length: f64, rows: Vec<EvaluationRow>) -> Self {
        Self { training_size, seed, config_hash: config_hash.into(), push_length, summary: summarize(&rows), rows }
    }
}

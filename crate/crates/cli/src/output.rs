//! CSV schemas. Floats are written with 17 significant digits so every value
//! round-trips exactly.

use std::io::Write;
use std::path::Path;

use harp::experiment::AggregateCurve;
use harp::RunRecord;

use crate::CliError;

pub const ITERATION_COLUMNS: [&str; 6] =
    ["replicate", "iteration", "cumulative_queries", "loss", "distance", "normalized_distance"];
pub const CURVE_COLUMNS: [&str; 6] =
    ["algorithm", "iteration", "cumulative_queries", "mean_normalized_distance", "rms_distance", "replicates_used"];
pub const SUMMARY_COLUMNS: [&str; 12] = [
    "algorithm",
    "scheme",
    "replicates",
    "finished",
    "diverged_replicates",
    "mean_terminal_loss",
    "sd_terminal_loss",
    "mean_terminal_magnitude",
    "mean_terminal_attack",
    "mean_terminal_normalized_distance",
    "sd_terminal_normalized_distance",
    "total_queries",
];

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub fn write_iterations(path: &Path, records: &[(usize, RunRecord)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ITERATION_COLUMNS)?;
    for (r, rec) in records {
        for i in 0..rec.len() {
            w.write_record([
                r.to_string(),
                rec.iteration[i].to_string(),
                rec.cumulative_queries[i].to_string(),
                float(rec.loss[i]),
                float(rec.distance[i]),
                float(rec.normalized_distance[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves(path: &Path, curves: &[(String, AggregateCurve)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_COLUMNS)?;
    for (label, c) in curves {
        for i in 0..c.iteration.len() {
            w.write_record([
                label.clone(),
                c.iteration[i].to_string(),
                c.cumulative_queries[i].to_string(),
                float(c.mean_normalized_distance[i]),
                float(c.rms_distance[i]),
                c.replicates_used.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One summary line; statistics cover the finished replicates only.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub scheme: String,
    pub replicates: usize,
    pub finished: usize,
    pub diverged: Vec<usize>,
    pub mean_terminal_loss: Option<f64>,
    /// Absent for fewer than two finished replicates.
    pub sd_terminal_loss: Option<f64>,
    pub mean_terminal_magnitude: Option<f64>,
    pub mean_terminal_attack: Option<f64>,
    pub mean_terminal_normalized_distance: Option<f64>,
    pub sd_terminal_normalized_distance: Option<f64>,
    pub total_queries: u64,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let diverged = r.diverged.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.algorithm.clone(),
            r.scheme.clone(),
            r.replicates.to_string(),
            r.finished.to_string(),
            diverged,
            opt_float(r.mean_terminal_loss),
            opt_float(r.sd_terminal_loss),
            opt_float(r.mean_terminal_magnitude),
            opt_float(r.mean_terminal_attack),
            opt_float(r.mean_terminal_normalized_distance),
            opt_float(r.sd_terminal_normalized_distance),
            r.total_queries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

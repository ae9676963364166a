//! CSV emission and ingestion for logs, sweep rows and summaries. Every file
//! written here is readable by [`read_rows`] (the self-round-trip contract).

use std::path::Path;

use anyhow::{anyhow, Context, Result};

use crate::sweep::{SummaryRow, SweepRow};
use crate::train::EpochLog;

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a CSV written by this module: header plus string rows.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header = reader
        .headers()
        .map_err(|e| anyhow!("csv header: {e}"))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub const TRAIN_LOG_HEADER: [&str; 5] = ["epoch", "reconstruction", "kl", "constraint", "total"];

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|l| {
            vec![
                l.epoch.to_string(),
                fmt_f64(l.reconstruction),
                fmt_f64(l.kl),
                fmt_f64(l.constraint),
                fmt_f64(l.total),
            ]
        })
        .collect();
    write_rows(path, &TRAIN_LOG_HEADER, &rows)
}

pub const SWEEP_HEADER: [&str; 12] = [
    "beta",
    "beta_index",
    "model_index",
    "seed",
    "final_reconstruction",
    "final_kl",
    "constraint",
    "ln_lambda_min",
    "original_cost",
    "truncated",
    "failed",
    "wall_clock_s",
];

pub fn write_sweep_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.beta),
                r.beta_index.to_string(),
                r.model_index.to_string(),
                r.seed.to_string(),
                fmt_f64(r.final_recon),
                fmt_f64(r.final_kl),
                fmt_f64(r.constraint),
                fmt_f64(r.ln_lambda_min),
                fmt_f64(r.original_cost),
                r.truncated.to_string(),
                r.failed.to_string(),
                fmt_f64(r.wall_clock_s),
            ]
        })
        .collect();
    write_rows(path, &SWEEP_HEADER, &body)
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "beta",
    "median_cost",
    "mean_cost",
    "pct_change_median",
    "pct_change_mean",
    "median_ln_lambda_min",
    "n_ok",
];

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.beta),
                fmt_f64(r.median_cost),
                fmt_f64(r.mean_cost),
                fmt_f64(r.pct_change_median),
                fmt_f64(r.pct_change_mean),
                fmt_f64(r.median_ln_lambda_min),
                r.n_ok.to_string(),
            ]
        })
        .collect();
    write_rows(path, &SUMMARY_HEADER, &body)
}

/// Shortest round-trippable decimal representation.
pub fn fmt_f64(v: f64) -> String {
    let mut buffer = ryu_like(v);
    if buffer == "-0" {
        buffer = "0".into();
    }
    buffer
}

fn ryu_like(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    // {} on f64 prints the shortest representation that round-trips
    format!("{v}")
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::experiments::Outcome;

pub const RESULT_SCHEMA: &str = "ldp-lab/result/v1";
pub const CSV_VERSION: &str = "v1";

#[derive(Debug, Serialize)]
pub struct ResultRecord<'a> {
    pub schema: &'static str,
    pub experiment: &'static str,
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub result: &'a Outcome,
}

impl<'a> ResultRecord<'a> {
    pub fn new(config: &'a ExperimentConfig, result: &'a Outcome) -> Self {
        ResultRecord {
            schema: RESULT_SCHEMA,
            experiment: config.experiment.name(),
            config_hash: config.hash(),
            config,
            result,
        }
    }
}

/// Plot data: a versioned comment line, a column header, then rows.
pub fn csv(cfg: &ExperimentConfig, outcome: &Outcome) -> String {
    let mut out = format!(
        "# ldp-lab {} csv {CSV_VERSION} config={}\n",
        cfg.experiment.name(),
        cfg.hash()
    );
    match outcome {
        Outcome::RareEvent(r) => {
            out.push_str("n,p_hat,lo,hi,neg_log_p_over_n,hits,samples\n");
            for e in &r.estimates {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    e.n,
                    e.p_hat,
                    e.lo,
                    e.hi,
                    e.empirical_rate(),
                    e.hits,
                    e.samples
                );
            }
        }
        Outcome::Averaging(r) => {
            out.push_str("n,dt,median,p90,mean\n");
            for row in &r.rows {
                let _ = writeln!(out, "{},{},{},{},{}", row.n, row.dt, row.median, row.p90, row.mean);
            }
        }
        Outcome::OperatorConvergence(r) => {
            out.push_str("n,gap\n");
            for row in &r.rows {
                let _ = writeln!(out, "{},{}", row.n, row.gap);
            }
        }
        Outcome::ResolventCheck(r) => {
            let d = r.grid.dim();
            let coords: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
            let _ = writeln!(out, "index,{},value", coords.join(","));
            for i in 0..r.grid.len() {
                let z: Vec<String> = r.grid.coords(i).iter().map(f64::to_string).collect();
                let _ = writeln!(out, "{i},{},{}", z.join(","), r.grid.values[i]);
            }
        }
        Outcome::RateCurve(r) => {
            out.push_str("radius,rate\n");
            for row in &r.rows {
                let _ = writeln!(out, "{},{}", row.radius, row.rate);
            }
        }
    }
    out
}

/// Output prefix: the configured one, else the config path without its
/// extension.
pub fn output_prefix(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    cfg.output
        .clone()
        .map(|p| match config_path.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        })
        .unwrap_or_else(|| config_path.with_extension(""))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>.json` and `<prefix>.csv`; returns their paths.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &Outcome, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let json_path = with_suffix(prefix, ".json");
    let csv_path = with_suffix(prefix, ".csv");
    let mut json = serde_json::to_string_pretty(&ResultRecord::new(cfg, outcome)).expect("record serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| LabError::io(&json_path, e))?;
    std::fs::write(&csv_path, csv(cfg, outcome)).map_err(|e| LabError::io(&csv_path, e))?;
    Ok((json_path, csv_path))
}

//! Experiment orchestration for large-deviation studies of slow-fast
//! switching diffusions: rare-event Monte Carlo, rate extraction, averaging
//! and operator-convergence studies, resolvent checks, configuration and
//! result persistence.

pub mod config;
pub mod error;
pub mod experiments;
pub mod family;
pub mod output;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use experiments::{
    averaging_study, estimate_rare_event, execute, operator_convergence, rate_curve, resolvent_check,
    theoretical_rate, Event, Outcome,
};
pub use stats::{extract_rate, Estimate, RateFit};

use std::path::Path;

/// Runs the experiment described by a config file and writes its JSON
/// record and CSV next to the configured output prefix.
pub fn run(config_path: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let cfg = config::load(config_path)?;
    let outcome = execute(&cfg)?;
    let prefix = output::output_prefix(&cfg, config_path);
    output::write_outputs(&cfg, &outcome, &prefix)
}

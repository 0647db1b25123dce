//! `eval` subcommand.

use std::path::PathBuf;

use crate::error::{ArtError, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::dataset::load_splits;
use crate::harness::train::{evaluate, evaluate_baseline};
use crate::head::MetricReport;
use crate::model::{ArtModel, ForwardOptions};

pub const METRICS_CSV: &str = "metrics.csv";
pub const BASELINE_CSV: &str = "metrics_baseline.csv";

/// Loads the configured checkpoint and checks it against `cfg`.
pub fn load_model(cfg: &RunConfig) -> Result<ArtModel> {
    Checkpoint::load(&cfg.checkpoint_path())?.into_model(cfg)
}

pub(crate) fn write_output(cfg: &RunConfig, name: &str, text: &str) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| ArtError::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| ArtError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// Metrics over the validation split, written to `output.dir`. With
/// `eval.baseline = true` the constant-velocity extrapolation is scored and
/// no checkpoint is read.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(MetricReport, PathBuf)> {
    let splits = load_splits(&cfg.data)?;
    let (report, name) = if cfg.baseline {
        (evaluate_baseline(&splits.val, cfg.data.t_f)?, BASELINE_CSV)
    } else {
        let model = load_model(cfg)?;
        (
            evaluate(&model, &splits.val, ForwardOptions::default(), cfg.train.threads)?,
            METRICS_CSV,
        )
    };
    let path = write_output(cfg, name, &report.to_csv())?;
    Ok((report, path))
}

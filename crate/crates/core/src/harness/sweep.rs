//! Top-p sweep: error and mean neighborhood size as functions of p.
//!
//! Default mode evaluates one checkpoint at every p. With
//! `sweep.retrain = true` a fresh model is trained per p (into
//! `<output.dir>/p_<p>/`) and evaluated at the same p.

use std::path::PathBuf;

use crate::data::Scene;
use crate::error::{ArtError, Result};
use crate::harness::config::RunConfig;
use crate::harness::dataset::load_splits;
use crate::harness::eval::{load_model, write_output};
use crate::harness::svg::{LineChart, Series};
use crate::harness::train::{ordered_map, train_on};
use crate::head::{scene_metrics, MetricReport};
use crate::model::{ArtModel, ForwardOptions};

pub const SWEEP_CSV: &str = "sweep_p.csv";
pub const SWEEP_SVG: &str = "sweep_p.svg";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    /// Kept neighbors per agent, averaged over every agent of every scene.
    pub mean_k_star: f64,
}

/// Metrics and mean k* of `model` on `scenes` with the threshold `p`.
pub fn evaluate_at(model: &ArtModel, scenes: &[Scene], p: f64, threads: usize) -> Result<SweepRow> {
    let indexed: Vec<(usize, &Scene)> = scenes.iter().enumerate().collect();
    let rows = ordered_map(&indexed, threads, |(i, scene)| {
        let future = scene
            .future()
            .ok_or_else(|| ArtError::Contract(format!("scene {i} has no future")))?;
        let pred = model.predict(scene, ForwardOptions { p: Some(p) }, false)?;
        let k_sum: usize = pred.pruned.k_star.iter().sum();
        Ok((scene_metrics(*i, &pred.predictions, future)?, k_sum))
    })?;
    let agents: usize = rows.iter().map(|(m, _)| m.m).sum();
    let kept: usize = rows.iter().map(|(_, k)| k).sum();
    let report = MetricReport::from_scenes(rows.into_iter().map(|(m, _)| m).collect());
    Ok(SweepRow {
        p,
        min_ade: report.min_ade,
        min_fde: report.min_fde,
        mean_k_star: if agents == 0 { 0.0 } else { kept as f64 / agents as f64 },
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p,minADE,minFDE,mean_k_star\n");
    for r in rows {
        out.push_str(&format!("{},{:.9},{:.9},{:.6}\n", r.p, r.min_ade, r.min_fde, r.mean_k_star));
    }
    out
}

pub fn sweep_chart(rows: &[SweepRow]) -> LineChart {
    LineChart {
        title: "Error vs top-p threshold".into(),
        x_label: "p".into(),
        y_label: "error (m)".into(),
        series: vec![
            Series {
                name: "minADE".into(),
                points: rows.iter().map(|r| (r.p, r.min_ade)).collect(),
            },
            Series {
                name: "minFDE".into(),
                points: rows.iter().map(|r| (r.p, r.min_fde)).collect(),
            },
        ],
    }
}

pub fn cmd_sweep_p(cfg: &RunConfig) -> Result<(Vec<SweepRow>, PathBuf)> {
    if cfg.sweep_p.is_empty() {
        return Err(ArtError::Config("sweep.p_values is empty".into()));
    }
    if !cfg.model.aip {
        return Err(ArtError::Config("sweep-p needs model.aip = true".into()));
    }
    let splits = load_splits(&cfg.data)?;
    let threads = cfg.train.threads;
    let rows = if cfg.sweep_retrain {
        cfg.sweep_p
            .iter()
            .map(|&p| {
                let run = cfg.with("model.p", &p.to_string())?;
                let dir = cfg.output_dir.join(format!("p_{p}"));
                let trained = train_on(&run, &splits, Some(&dir))?;
                evaluate_at(&trained.model, &splits.val, p, threads)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let model = load_model(cfg)?;
        cfg.sweep_p
            .iter()
            .map(|&p| evaluate_at(&model, &splits.val, p, threads))
            .collect::<Result<Vec<_>>>()?
    };
    let path = write_output(cfg, SWEEP_CSV, &sweep_csv(&rows))?;
    write_output(cfg, SWEEP_SVG, &sweep_chart(&rows).render())?;
    Ok((rows, path))
}

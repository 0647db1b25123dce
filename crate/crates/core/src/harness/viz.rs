//! Time-resolved attention of one agent pair, with their distance per step.

use std::path::PathBuf;

use crate::data::Scene;
use crate::error::{ArtError, Result};
use crate::harness::config::RunConfig;
use crate::harness::dataset::load_splits;
use crate::harness::eval::{load_model, write_output};
use crate::harness::svg::{LineChart, Series};
use crate::model::{ArtModel, ForwardOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct PairAttention {
    pub scene: usize,
    pub pair: (usize, usize),
    /// `[head][t]`
    pub per_head: Vec<Vec<f64>>,
    /// Head average per step.
    pub mean: Vec<f64>,
    pub distance: Vec<f64>,
}

impl PairAttention {
    /// Step of the largest head-averaged weight (first on ties).
    pub fn peak_step(&self) -> usize {
        argmax(&self.mean)
    }

    /// Step of the smallest distance (first on ties).
    pub fn closest_step(&self) -> usize {
        let neg: Vec<f64> = self.distance.iter().map(|d| -d).collect();
        argmax(&neg)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn pair_attention(model: &ArtModel, scene: &Scene, scene_id: usize, i: usize, j: usize) -> Result<PairAttention> {
    let m = scene.num_agents();
    if i >= m || j >= m {
        return Err(ArtError::Index(format!("pair ({i}, {j}) out of range for {m} agents")));
    }
    let pred = model.predict(scene, ForwardOptions::default(), true)?;
    let alpha = pred.per_time_scores.expect("scores were requested");
    let (heads, t_h) = (alpha.shape()[0], alpha.shape()[3]);
    let per_head: Vec<Vec<f64>> = (0..heads)
        .map(|h| (0..t_h).map(|t| alpha.at(&[h, i, j, t])).collect())
        .collect();
    let mean = (0..t_h)
        .map(|t| per_head.iter().map(|row| row[t]).sum::<f64>() / heads as f64)
        .collect();
    let distance = (0..t_h)
        .map(|t| {
            let (a, b) = (scene.observed_at(i, t), scene.observed_at(j, t));
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .collect();
    Ok(PairAttention {
        scene: scene_id,
        pair: (i, j),
        per_head,
        mean,
        distance,
    })
}

/// Long format: `series,t,alpha,distance` with `T_h` rows per head and `T_h`
/// rows for the head mean.
pub fn attention_csv(pa: &PairAttention) -> String {
    let mut out = String::from("series,t,alpha,distance\n");
    let rows = pa
        .per_head
        .iter()
        .enumerate()
        .map(|(h, r)| (format!("head{h}"), r))
        .chain(std::iter::once(("mean".to_string(), &pa.mean)));
    for (name, row) in rows {
        for (t, a) in row.iter().enumerate() {
            out.push_str(&format!("{name},{t},{a:.12},{:.12}\n", pa.distance[t]));
        }
    }
    out
}

pub fn attention_chart(pa: &PairAttention) -> LineChart {
    let dmax = pa.distance.iter().cloned().fold(0.0, f64::max);
    let scale = if dmax > 0.0 { 1.0 / dmax } else { 1.0 };
    let mut series: Vec<Series> = pa
        .per_head
        .iter()
        .enumerate()
        .map(|(h, r)| Series {
            name: format!("head {h}"),
            points: r.iter().enumerate().map(|(t, &a)| (t as f64, a)).collect(),
        })
        .collect();
    series.push(Series {
        name: "head mean".into(),
        points: pa.mean.iter().enumerate().map(|(t, &a)| (t as f64, a)).collect(),
    });
    series.push(Series {
        name: "distance / max".into(),
        points: pa.distance.iter().enumerate().map(|(t, &d)| (t as f64, d * scale)).collect(),
    });
    LineChart {
        title: format!("Attention of agent {} on {} over time (scene {})", pa.pair.0, pa.pair.1, pa.scene),
        x_label: "observed step t".into(),
        y_label: "alpha".into(),
        series,
    }
}

/// `viz-attention` subcommand on validation scene `viz.scene`.
pub fn cmd_viz_attention(cfg: &RunConfig) -> Result<(PairAttention, PathBuf)> {
    let model = load_model(cfg)?;
    let splits = load_splits(&cfg.data)?;
    let s = cfg.viz_scene;
    let scene = splits
        .val
        .get(s)
        .ok_or_else(|| ArtError::Index(format!("scene {s} out of range for {} validation scenes", splits.val.len())))?;
    let (i, j) = cfg.viz_pair;
    let pa = pair_attention(&model, scene, s, i, j)?;
    let stem = format!("attention_s{s}_{i}_{j}");
    let path = write_output(cfg, &format!("{stem}.csv"), &attention_csv(&pa))?;
    write_output(cfg, &format!("{stem}.svg"), &attention_chart(&pa).render())?;
    Ok((pa, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticKind};
    use crate::model::ModelConfig;

    #[test]
    fn rows_and_normalization() {
        let cfg = ModelConfig {
            d: 8,
            heads: 2,
            k: 2,
            t_f: 3,
            ..ModelConfig::default()
        };
        let model = ArtModel::new(cfg, 0).unwrap();
        let scene = generate_synthetic(SyntheticKind::Crossing, 4, 6, 3, 1).unwrap();
        let pa = pair_attention(&model, &scene, 0, 0, 1).unwrap();
        for row in &pa.per_head {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let csv = attention_csv(&pa);
        assert_eq!(csv.lines().count(), 1 + 2 * 6 + 6);
        assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 6);
        assert!(matches!(pair_attention(&model, &scene, 0, 0, 4), Err(ArtError::Index(_))));
    }

    #[test]
    fn argmax_takes_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}

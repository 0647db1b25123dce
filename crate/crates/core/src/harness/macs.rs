//! Analytic multiply-accumulate accounting for one forward pass.
//!
//! Counts follow the implemented computation: a dense `[B, n] × [n, m]`
//! product is `B·n·m` MACs, a length-`n` dot product is `n`. Elementwise
//! additions, activations and softmax normalizations are not counted.
//! Top-p pruning performs comparisons and additions only; it is reported as
//! a separate non-MAC operation count.

use std::path::PathBuf;

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::dataset::load_splits;
use crate::harness::eval::{load_model, write_output};
use crate::model::{ArtModel, ForwardOptions, ModelConfig};

pub const MACS_CSV: &str = "macs.csv";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MacCounter {
    pub entries: Vec<(String, f64)>,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, module: &str, macs: f64) -> &mut Self {
        match self.entries.iter_mut().find(|(m, _)| m == module) {
            Some((_, n)) => *n += macs,
            None => self.entries.push((module.to_string(), macs)),
        }
        self
    }

    /// `batch` rows through a `d_in → d_out` linear map.
    pub fn linear(&mut self, module: &str, batch: u64, d_in: u64, d_out: u64) -> &mut Self {
        self.add(module, (batch * d_in * d_out) as f64)
    }

    pub fn get(&self, module: &str) -> f64 {
        self.entries.iter().find(|(m, _)| m == module).map_or(0.0, |e| e.1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Scene geometry and the measured neighborhood size the count is for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub m: usize,
    pub t_h: usize,
    pub t_f: usize,
    /// Mean kept neighbors per agent; `M − 1` for the dense graph.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacReport {
    pub workload: Workload,
    pub counter: MacCounter,
    /// Comparisons and additions spent on top-p selection.
    pub aip_ops: u64,
    pub parameters: usize,
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// Counts the forward pass of `cfg` on workload `w`. Neighbor-dependent
/// terms use `M·κ` edges, so they are fractional for a measured κ.
pub fn count(cfg: &ModelConfig, w: Workload) -> MacCounter {
    let (m, t, tf) = (w.m as u64, w.t_h as u64, w.t_f as u64);
    let d = cfg.d as u64;
    let edges = w.m as f64 * w.kappa;
    let df = cfg.d as f64;
    let mut c = MacCounter::new();
    c.linear("embed", m * t, 2, d);
    c.linear("targ_qkv", 3 * m * t, d, d);
    // same-step logits and time-weighted value sums, every ordered pair and head
    c.add("targ_attention", (2 * m * m * t * d) as f64);
    c.linear("targ_output", m * m, d, d);
    c.add("targ_edge_score", (m * m * 2 * d) as f64);
    for _ in 0..cfg.layers {
        c.linear("rt_node_qkv", 3 * m, d, d);
        // per neighbor edge: K_e and V_e projections, one logit, one value sum
        c.add("rt_attention", edges * (2.0 * df * df + 2.0 * df));
        c.add("rt_self", (m * (2 * d * d + 2 * d)) as f64);
        c.linear("rt_ffn", m, d, 4 * d);
        c.linear("rt_ffn", m, 4 * d, d);
        c.add("rt_edge_mlp", (edges + w.m as f64) * 5.0 * df * df);
    }
    let k = cfg.k as u64;
    c.linear("heads", k * m, 2 * d, 2 * d);
    c.linear("heads", k * m, 2 * d, 2 * d);
    c.linear("heads", k * m, 2 * d, 2 * tf);
    c
}

/// Sorting comparisons plus prefix additions for top-p on every row.
pub fn aip_ops(m: usize) -> u64 {
    let n = m.saturating_sub(1) as u64;
    m as u64 * (n * ceil_log2(n) + n)
}

/// Mean k* of `model` over `scenes`.
pub fn measure_kappa(model: &ArtModel, scenes: &[crate::data::Scene]) -> Result<f64> {
    let mut kept = 0usize;
    let mut agents = 0usize;
    for s in scenes {
        let p = model.predict(s, ForwardOptions::default(), false)?;
        kept += p.pruned.k_star.iter().sum::<usize>();
        agents += s.num_agents();
    }
    Ok(if agents == 0 { 0.0 } else { kept as f64 / agents as f64 })
}

fn fmt_count(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{n:.0}")
    } else {
        format!("{n:.3}")
    }
}

pub fn report_csv(r: &MacReport) -> String {
    let mut out = format!(
        "# M = {}, T_h = {}, T_f = {}, mean k* = {:.6}\nmodule,macs\n",
        r.workload.m, r.workload.t_h, r.workload.t_f, r.workload.kappa
    );
    for (name, n) in &r.counter.entries {
        out.push_str(&format!("{name},{}\n", fmt_count(*n)));
    }
    out.push_str(&format!("total,{}\n", fmt_count(r.counter.total())));
    out.push_str(&format!("aip_compare_ops (non-MAC),{}\n", r.aip_ops));
    out.push_str(&format!("parameters,{}\n", r.parameters));
    out
}

/// `macs` subcommand. k* is measured on the validation split with the
/// checkpoint from `eval.checkpoint` when set, else with a fresh model
/// seeded by `train.seed`.
pub fn cmd_macs(cfg: &RunConfig) -> Result<(MacReport, MacReport, PathBuf)> {
    let model = if cfg.checkpoint.is_some() {
        load_model(cfg)?
    } else {
        ArtModel::new(cfg.model.clone(), cfg.train.seed)?
    };
    let splits = load_splits(&cfg.data)?;
    let m = splits.val.first().map_or(cfg.data.m, |s| s.num_agents());
    let kappa = if cfg.model.aip { measure_kappa(&model, &splits.val)? } else { m.saturating_sub(1) as f64 };
    let sparse_w = Workload {
        m,
        t_h: cfg.data.t_h,
        t_f: cfg.data.t_f,
        kappa,
    };
    let dense_w = Workload {
        kappa: m.saturating_sub(1) as f64,
        ..sparse_w
    };
    let make = |w: Workload, aip: bool| MacReport {
        workload: w,
        counter: count(&cfg.model, w),
        aip_ops: if aip { aip_ops(w.m) } else { 0 },
        parameters: model.num_parameters(),
    };
    let sparse = make(sparse_w, cfg.model.aip);
    let dense = make(dense_w, false);
    let mut text = report_csv(&sparse);
    text.push_str("\n# dense graph (no pruning)\n");
    text.push_str(&report_csv(&dense));
    let path = write_output(cfg, MACS_CSV, &text)?;
    Ok((sparse, dense, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_formula() {
        let mut c = MacCounter::new();
        c.linear("fc", 7, 13, 5);
        assert_eq!(c.total(), (7 * 13 * 5) as f64);
        c.linear("fc", 1, 2, 3);
        assert_eq!(c.get("fc"), (7 * 13 * 5 + 6) as f64);
    }

    #[test]
    fn targ_attention_is_quadratic_in_agents() {
        let cfg = ModelConfig::default();
        let w = |m| Workload {
            m,
            t_h: 8,
            t_f: 12,
            kappa: 1.0,
        };
        assert_eq!(count(&cfg, w(8)).get("targ_attention"), 4.0 * count(&cfg, w(4)).get("targ_attention"));
        assert_eq!(count(&cfg, w(4)).get("targ_attention"), (2 * 16 * 8 * 64) as f64);
    }

    #[test]
    fn rt_attention_scales_with_kappa() {
        let cfg = ModelConfig::default();
        let base = Workload {
            m: 8,
            t_h: 8,
            t_f: 12,
            kappa: 7.0,
        };
        let dense = count(&cfg, base).get("rt_attention");
        let sparse = count(&cfg, Workload { kappa: 3.5, ..base }).get("rt_attention");
        assert_eq!(2.0 * sparse, dense);
    }

    #[test]
    fn aip_ops_counts() {
        assert_eq!(aip_ops(1), 0);
        assert_eq!(aip_ops(3), 3 * (2 + 2));
        assert_eq!(ceil_log2(7), 3);
        assert_eq!(ceil_log2(8), 3);
    }
}

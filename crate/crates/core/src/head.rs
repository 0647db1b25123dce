//! K parallel decoding heads, best-of-K losses and displacement metrics.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::data::Scene;
use crate::error::{ArtError, Result};
use crate::targ::glorot;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Default number of candidates per agent.
pub const DEFAULT_K: usize = 20;

/// Where the minimum over candidates is taken in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinScope {
    /// `min_k` inside the per-step sum: each step picks its best head.
    PerStep,
    /// One head per agent, chosen by mean error over the horizon.
    PerTrajectory,
}

impl FromStr for MinScope {
    type Err = ArtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_step" => Ok(Self::PerStep),
            "per_trajectory" => Ok(Self::PerTrajectory),
            other => Err(ArtError::Config(format!(
                "unknown loss.min_scope `{other}` (per_step | per_trajectory)"
            ))),
        }
    }
}

impl fmt::Display for MinScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerStep => "per_step",
            Self::PerTrajectory => "per_trajectory",
        })
    }
}

fn head_name(k: usize, part: &str) -> String {
    format!("head.{k}.{part}")
}

/// Registers `k` heads, each `2d → 2d → 2d → 2·T_f` with GELU between.
///
/// The output layer starts at a tenth of the Glorot scale so untrained
/// heads predict small displacements.
pub fn init_params(store: &mut ParamStore, d: usize, k: usize, t_f: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let w = 2 * d;
    for h in 0..k {
        store.insert(head_name(h, "w1"), glorot(&[w, w], rng))?;
        store.insert(head_name(h, "b1"), Tensor::zeros(&[w]))?;
        store.insert(head_name(h, "w2"), glorot(&[w, w], rng))?;
        store.insert(head_name(h, "b2"), Tensor::zeros(&[w]))?;
        let mut out = glorot(&[w, 2 * t_f], rng);
        out.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        store.insert(head_name(h, "w3"), out)?;
        store.insert(head_name(h, "b3"), Tensor::zeros(&[2 * t_f]))?;
    }
    Ok(())
}

/// Number of heads registered in `store`.
pub fn count_heads(store: &ParamStore) -> usize {
    (0..).take_while(|&k| store.id(&head_name(k, "w1")).is_some()).count()
}

fn dense(g: &mut Graph, store: &ParamStore, x: Var, k: usize, layer: u8) -> Result<Var> {
    let w = g.param_by_name(store, &head_name(k, &format!("w{layer}")))?;
    let b = g.param_by_name(store, &head_name(k, &format!("b{layer}")))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Decodes `[M, K, T_f, 2]` candidate positions.
///
/// Head `k` maps `[h⁽⁰⁾_i ‖ h⁽ᴸ⁾_i]` to `T_f` per-step displacements that
/// are accumulated from `last_observed` (`[M, 2]`).
pub fn decode(
    g: &mut Graph,
    store: &ParamStore,
    h0: Var,
    h_l: Var,
    last_observed: Var,
    k: usize,
    t_f: usize,
) -> Result<Var> {
    let m = g.shape(h0)[0];
    if g.shape(h_l) != g.shape(h0) || g.shape(last_observed) != [m, 2] {
        return Err(ArtError::shape("decode", g.shape(h0), g.shape(h_l)));
    }
    if k == 0 {
        return Err(ArtError::Config("K must be at least 1".into()));
    }
    let x = g.concat(&[h0, h_l], 1)?;
    let mut heads = Vec::with_capacity(k);
    for head in 0..k {
        let a = dense(g, store, x, head, 1)?;
        let a = g.gelu(a);
        let b = dense(g, store, a, head, 2)?;
        let b = g.gelu(b);
        let out = dense(g, store, b, head, 3)?;
        if g.shape(out)[1] != 2 * t_f {
            return Err(ArtError::shape("decode head width", g.shape(out), &[m, 2 * t_f]));
        }
        heads.push(g.reshape(out, &[m, 1, t_f, 2])?);
    }
    let steps = g.concat(&heads, 1)?;
    displacements_to_positions(g, steps, last_observed)
}

/// `[M, K, T_f, 2]` displacements → positions by running sum from `start`.
pub fn displacements_to_positions(g: &mut Graph, steps: Var, start: Var) -> Result<Var> {
    let s = g.shape(steps).to_vec();
    let path = g.cumsum(steps, 2)?;
    let origin = g.expand(start, 1, s[2])?; // [M, T_f, 2]
    let origin = g.expand(origin, 1, s[1])?; // [M, K, T_f, 2]
    g.add(path, origin)
}

/// Best-of-K regression loss over `[M, K, T_f, 2]` predictions and an
/// `[M, T_f, 2]` target.
///
/// `PerStep` averages `min_k ‖p_t − p̂_{k,t}‖` over agents and steps;
/// `PerTrajectory` averages `min_k mean_t ‖p_t − p̂_{k,t}‖` over agents.
/// Only the winning head of each minimum receives gradient.
pub fn best_of_k_loss(g: &mut Graph, predictions: Var, future: Var, scope: MinScope) -> Result<Var> {
    let sp = g.shape(predictions).to_vec();
    let sf = g.shape(future).to_vec();
    if sp.len() != 4 || sf != [sp[0], sp[2], sp[3]] || sp[3] != 2 {
        return Err(ArtError::Contract(format!(
            "best_of_k_loss shapes disagree: predictions {sp:?}, future {sf:?}"
        )));
    }
    let target = g.expand(future, 1, sp[1])?;
    let diff = g.sub(predictions, target)?;
    let dist = g.norm_last(diff)?; // [M, K, T_f]
    let best = match scope {
        MinScope::PerStep => g.min_axis(dist, 1)?,
        MinScope::PerTrajectory => {
            let per_head = g.mean_axis(dist, 2)?;
            g.min_axis(per_head, 1)?
        }
    };
    Ok(g.mean(best))
}

/// K candidate futures per agent in scene coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// `[M, K, T_f, 2]`
    pub candidates: Tensor,
    /// Per-agent candidate with the lowest ADE, when ground truth is known.
    pub best_index: Option<Vec<usize>>,
}

impl PredictionSet {
    pub fn new(candidates: Tensor) -> Result<Self> {
        let s = candidates.shape();
        if s.len() != 4 || s[3] != 2 || s[1] == 0 {
            return Err(ArtError::shape("PredictionSet", s, &[0, 1, 0, 2]));
        }
        Ok(Self {
            candidates,
            best_index: None,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.candidates.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.candidates.shape()[1]
    }

    pub fn t_f(&self) -> usize {
        self.candidates.shape()[2]
    }

    pub fn point(&self, agent: usize, k: usize, t: usize) -> [f64; 2] {
        let o = self.candidates.offset(&[agent, k, t, 0]);
        let d = self.candidates.data();
        [d[o], d[o + 1]]
    }

    /// Fills `best_index` from per-agent ADE against `future`.
    pub fn select_best(&mut self, future: &Tensor) -> Result<()> {
        let errors = displacement_errors(self, future)?;
        self.best_index = Some(errors.iter().map(|a| argmin(a.iter().map(|e| e.0))).collect());
        Ok(())
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best })
        .0
}

/// Per agent, per candidate: `(ADE, FDE)`.
fn displacement_errors(pred: &PredictionSet, future: &Tensor) -> Result<Vec<Vec<(f64, f64)>>> {
    let (m, k, t_f) = (pred.num_agents(), pred.k(), pred.t_f());
    if future.shape() != [m, t_f, 2] {
        return Err(ArtError::Contract(format!(
            "future shape {:?} does not match predictions {:?}",
            future.shape(),
            pred.candidates.shape()
        )));
    }
    Ok((0..m)
        .map(|i| {
            (0..k)
                .map(|c| {
                    let mut total = 0.0;
                    let mut last = 0.0;
                    for t in 0..t_f {
                        let p = pred.point(i, c, t);
                        let o = future.offset(&[i, t, 0]);
                        let gt = &future.data()[o..o + 2];
                        last = (p[0] - gt[0]).hypot(p[1] - gt[1]);
                        total += last;
                    }
                    (total / t_f as f64, last)
                })
                .collect()
        })
        .collect())
}

/// Metrics for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    pub scene_id: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub k: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Agent-weighted mean over scenes.
    pub min_ade: f64,
    pub min_fde: f64,
    pub k_used: usize,
    pub per_scene: Vec<SceneMetrics>,
}

impl MetricReport {
    /// Aggregates scene rows, weighting each by its agent count.
    pub fn from_scenes(per_scene: Vec<SceneMetrics>) -> Self {
        let agents: usize = per_scene.iter().map(|s| s.m).sum();
        let weighted = |f: fn(&SceneMetrics) -> f64| {
            if agents == 0 {
                0.0
            } else {
                per_scene.iter().map(|s| f(s) * s.m as f64).sum::<f64>() / agents as f64
            }
        };
        Self {
            min_ade: weighted(|s| s.min_ade),
            min_fde: weighted(|s| s.min_fde),
            k_used: per_scene.first().map_or(0, |s| s.k),
            per_scene,
        }
    }

    /// `scene_id,min_ade,min_fde,k,M` rows plus an `all` aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,min_ade,min_fde,k,M\n");
        for s in &self.per_scene {
            out.push_str(&format!("{},{:.9},{:.9},{},{}\n", s.scene_id, s.min_ade, s.min_fde, s.k, s.m));
        }
        let agents: usize = self.per_scene.iter().map(|s| s.m).sum();
        out.push_str(&format!("all,{:.9},{:.9},{},{}\n", self.min_ade, self.min_fde, self.k_used, agents));
        out
    }
}

/// minADE / minFDE of one scene. The minimum over candidates is taken
/// separately for each metric, then averaged over agents.
pub fn min_ade_fde(pred: &PredictionSet, future: &Tensor) -> Result<(f64, f64)> {
    let errors = displacement_errors(pred, future)?;
    let m = errors.len() as f64;
    let ade = errors
        .iter()
        .map(|a| a.iter().map(|e| e.0).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / m;
    let fde = errors
        .iter()
        .map(|a| a.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / m;
    Ok((ade, fde))
}

pub fn scene_metrics(scene_id: usize, pred: &PredictionSet, future: &Tensor) -> Result<SceneMetrics> {
    let (min_ade, min_fde) = min_ade_fde(pred, future)?;
    Ok(SceneMetrics {
        scene_id,
        min_ade,
        min_fde,
        k: pred.k(),
        m: pred.num_agents(),
    })
}

/// Extrapolates each agent's last observed step for `t_f` steps (a single
/// candidate). With one observed frame the agent is held in place.
pub fn constant_velocity_baseline(scene: &Scene, t_f: usize) -> PredictionSet {
    let m = scene.num_agents();
    let t_h = scene.t_h();
    let mut out = Tensor::zeros(&[m, 1, t_f, 2]);
    for i in 0..m {
        let last = scene.observed_at(i, t_h - 1);
        let v = if t_h >= 2 {
            let prev = scene.observed_at(i, t_h - 2);
            [last[0] - prev[0], last[1] - prev[1]]
        } else {
            [0.0, 0.0]
        };
        for t in 0..t_f {
            let s = (t + 1) as f64;
            out.set(&[i, 0, t, 0], last[0] + v[0] * s);
            out.set(&[i, 0, t, 1], last[1] + v[1] * s);
        }
    }
    PredictionSet::new(out).expect("valid shape")
}

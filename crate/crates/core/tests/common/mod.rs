#![allow(dead_code)]

use art_core::aip::prune;
use art_core::head::{self, MinScope};
use art_core::model::{ArtModel, ModelConfig};
use art_core::rt::{self, RtState};
use art_core::targ::{self, TargConfig, Weighting};
use art_core::tensor::{relative_error, Graph, ParamStore, Tensor};
use art_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients of order
/// 1e-9 are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares analytic gradients against central differences at `probes`
/// random coordinates of the parameters in `store`.
pub fn probe_gradients<F>(store: &ParamStore, probes: usize, seed: u64, eval: F) -> GradReport
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<Option<Vec<f64>>>)>,
{
    let (_, grads) = eval(store).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, usize)> = store.iter().map(|p| (p.name.clone(), p.tensor.numel())).collect();
    let mut report = GradReport {
        probes: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for _ in 0..probes {
        let pi = rng.gen_range(0..names.len());
        let (name, n) = &names[pi];
        let idx = rng.gen_range(0..*n);
        let analytic = grads[pi].as_ref().map_or(0.0, |g| g[idx]);
        let mut s = store.clone();
        let at = |s: &mut ParamStore, v: f64| {
            s.by_name_mut(name).unwrap().tensor.data_mut()[idx] = v;
        };
        let base = store.by_name(name).unwrap().tensor.data()[idx];
        at(&mut s, base + FD_EPS);
        let plus = eval(&s).unwrap().0;
        at(&mut s, base - FD_EPS);
        let minus = eval(&s).unwrap().0;
        let numeric = (plus - minus) / (2.0 * FD_EPS);
        let err = relative_error(analytic, numeric, FD_FLOOR);
        report.probes += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{name}[{idx}]: analytic {analytic:e}, numeric {numeric:e}");
        }
    }
    report
}

/// `Σ c ⊙ x` for a fixed random `c`, so every output coordinate matters.
pub fn weighted_sum(g: &mut Graph, x: art_core::tensor::Var, seed: u64) -> Result<art_core::tensor::Var> {
    let shape = g.shape(x).to_vec();
    let c = g.constant(uniform(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(x, c)?;
    Ok(g.sum(p))
}

fn run(g: &Graph, loss: art_core::tensor::Var, n: usize) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), grads.param_grads(g, n)))
}

pub const D: usize = 8;
pub const HEADS: usize = 2;

/// Relation-graph stage: embedding, time-resolved attention, relation
/// aggregation and edge scoring, all read by the loss.
pub fn targ_suite(probes: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TargConfig::new(D, HEADS, Weighting::TemporalAttention).unwrap();
    let mut store = ParamStore::new();
    targ::init_params(&mut store, &cfg, &mut rng).unwrap();
    let observed = uniform(&[4, 5, 2], 2.0, &mut rng);
    probe_gradients(&store, probes, seed + 1, |s| {
        let mut g = Graph::new();
        let obs = g.constant(observed.clone());
        let v = targ::build(&mut g, s, &cfg, obs, 0)?;
        let a = weighted_sum(&mut g, v.alpha, 1)?;
        let r = weighted_sum(&mut g, v.relations, 2)?;
        let w = weighted_sum(&mut g, v.weights, 3)?;
        let ar = g.add(a, r)?;
        let loss = g.add(ar, w)?;
        run(&g, loss, s.len())
    })
}

/// Two relational-transformer layers on a pruned graph; the loss reads both
/// node and edge outputs, and the input features are probed too.
pub fn rt_suite(probes: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 5;
    let mut store = ParamStore::new();
    rt::init_params(&mut store, D, 2, &mut rng).unwrap();
    for p in store.iter_mut() {
        // zero biases would leave their coordinates untested near GELU kinks
        if p.name.ends_with(".b") {
            p.tensor.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
    }
    store.insert("input.node", uniform(&[m, D], 1.0, &mut rng)).unwrap();
    store.insert("input.edge", uniform(&[m, m, D], 1.0, &mut rng)).unwrap();
    let mut w = uniform(&[m, m], 1.0, &mut rng);
    w.data_mut().iter_mut().for_each(|x| *x = x.abs());
    let pruned = prune(&w, 0.6).unwrap();
    probe_gradients(&store, probes, seed + 1, |s| {
        let mut g = Graph::new();
        let node = g.param_by_name(s, "input.node")?;
        let edge = g.param_by_name(s, "input.edge")?;
        let state = RtState {
            node,
            edge,
            layer_index: 0,
        };
        let out = rt::encode(&mut g, s, state, &pruned, HEADS, 2)?;
        let a = weighted_sum(&mut g, out.node, 4)?;
        let b = weighted_sum(&mut g, out.edge, 5)?;
        let loss = g.add(a, b)?;
        run(&g, loss, s.len())
    })
}

/// K decoding heads, cumulative positions and the best-of-K loss.
pub fn head_suite(probes: usize, seed: u64, scope: MinScope) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, t_f) = (3, 4, 5);
    let mut store = ParamStore::new();
    head::init_params(&mut store, D, k, t_f, &mut rng).unwrap();
    store.insert("input.h0", uniform(&[m, D], 1.0, &mut rng)).unwrap();
    store.insert("input.hl", uniform(&[m, D], 1.0, &mut rng)).unwrap();
    let last = uniform(&[m, 2], 1.0, &mut rng);
    let future = uniform(&[m, t_f, 2], 1.0, &mut rng);
    probe_gradients(&store, probes, seed + 1, |s| {
        let mut g = Graph::new();
        let h0 = g.param_by_name(s, "input.h0")?;
        let hl = g.param_by_name(s, "input.hl")?;
        let last = g.constant(last.clone());
        let pred = head::decode(&mut g, s, h0, hl, last, k, t_f)?;
        let fut = g.constant(future.clone());
        let loss = head::best_of_k_loss(&mut g, pred, fut, scope)?;
        run(&g, loss, s.len())
    })
}

/// Whole model on a dense graph (no discrete selection inside the probe).
pub fn model_suite(probes: usize, seed: u64) -> GradReport {
    let cfg = ModelConfig {
        d: D,
        heads: HEADS,
        k: 3,
        t_f: 4,
        aip: false,
        ..ModelConfig::default()
    };
    let model = ArtModel::new(cfg.clone(), seed).unwrap();
    let scene = art_core::data::generate_synthetic(art_core::data::SyntheticKind::Crossing, 4, 5, 4, seed).unwrap();
    probe_gradients(&model.params, probes, seed + 1, |s| {
        let m = ArtModel {
            config: cfg.clone(),
            params: s.clone(),
        };
        m.loss_and_grads(&scene)
    })
}

/// Small untrained model for pipeline properties.
pub fn small_model(aip: bool, seed: u64) -> ArtModel {
    let cfg = ModelConfig {
        d: 16,
        heads: 4,
        k: 3,
        t_f: 6,
        aip,
        ..ModelConfig::default()
    };
    ArtModel::new(cfg, seed).unwrap()
}

/// Agents at random positions with random smooth walks.
pub fn random_scene(m: usize, t_h: usize, t_f: usize, seed: u64) -> art_core::data::Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks: Vec<Vec<[f64; 2]>> = (0..m)
        .map(|_| {
            let mut p = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            let mut v = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            (0..t_h + t_f)
                .map(|_| {
                    let out = p;
                    v[0] += rng.gen_range(-0.05..0.05);
                    v[1] += rng.gen_range(-0.05..0.05);
                    p = [p[0] + v[0], p[1] + v[1]];
                    out
                })
                .collect()
        })
        .collect();
    art_core::data::Scene::from_tracks(&tracks, t_h, 0.4).unwrap()
}

/// Largest deviation between the predictions for `scene` and for the
/// scene with agents relabelled by `perm`, mapped back.
pub fn permutation_gap(model: &ArtModel, scene: &art_core::data::Scene, perm: &[usize]) -> f64 {
    use art_core::model::ForwardOptions;
    let a = model.predict(scene, ForwardOptions::default(), true).unwrap();
    let b = model.predict(&scene.permuted(perm), ForwardOptions::default(), true).unwrap();
    let (ca, cb) = (&a.predictions.candidates, &b.predictions.candidates);
    let row = ca.numel() / perm.len();
    let mut gap: f64 = 0.0;
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..row {
            gap = gap.max((ca.data()[old * row + c] - cb.data()[new * row + c]).abs());
        }
    }
    let m = perm.len();
    for a_new in 0..m {
        for b_new in 0..m {
            let (ao, bo) = (perm[a_new], perm[b_new]);
            gap = gap.max((a.weights.at(&[ao, bo]) - b.weights.at(&[a_new, b_new])).abs());
            let (sa, sb) = (a.per_time_scores.as_ref().unwrap(), b.per_time_scores.as_ref().unwrap());
            for h in 0..sa.shape()[0] {
                for t in 0..sa.shape()[3] {
                    gap = gap.max((sa.at(&[h, ao, bo, t]) - sb.at(&[h, a_new, b_new, t])).abs());
                }
            }
        }
    }
    if a.pruned.permuted(perm).kept != b.pruned.kept {
        return f64::INFINITY;
    }
    gap
}

/// minADE / minFDE written out directly: for every agent, scan every
/// candidate, recompute each error from coordinates, keep the smallest.
pub fn brute_force_metrics(cand: &Tensor, future: &Tensor) -> (f64, f64) {
    let s = cand.shape();
    let (m, k, t_f) = (s[0], s[1], s[2]);
    let (mut ade_sum, mut fde_sum) = (0.0, 0.0);
    for i in 0..m {
        let mut best_ade = f64::MAX;
        let mut best_fde = f64::MAX;
        for c in 0..k {
            let mut errs = Vec::with_capacity(t_f);
            for t in 0..t_f {
                let dx = cand.at(&[i, c, t, 0]) - future.at(&[i, t, 0]);
                let dy = cand.at(&[i, c, t, 1]) - future.at(&[i, t, 1]);
                errs.push((dx * dx + dy * dy).sqrt());
            }
            let ade = errs.iter().sum::<f64>() / t_f as f64;
            if ade < best_ade {
                best_ade = ade;
            }
            if errs[t_f - 1] < best_fde {
                best_fde = errs[t_f - 1];
            }
        }
        ade_sum += best_ade;
        fde_sum += best_fde;
    }
    (ade_sum / m as f64, fde_sum / m as f64)
}

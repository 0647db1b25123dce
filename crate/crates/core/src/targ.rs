//! Temporal-aware relation graph.
//!
//! Observed tracks are embedded per time step, every ordered agent pair gets
//! a softmax over time of same-step query/key products, the resulting
//! weights pool the partner's values into a relation feature `R_ij`, and a
//! sigmoid over `[R_ij ‖ R_ji]` scores each directed edge.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ArtError, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// How the dense edge-weight matrix is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Learned sigmoid scores over temporal-attention relations.
    TemporalAttention,
    /// `(cos(mean_t H_i, mean_t H_j) + 1) / 2`.
    Cosine,
    /// I.i.d. uniform(0, 1) per ordered pair.
    Random,
    /// `1 / (M − 1)` everywhere off the diagonal.
    Uniform,
}

impl FromStr for Weighting {
    type Err = ArtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal_attention" => Ok(Self::TemporalAttention),
            "cosine" => Ok(Self::Cosine),
            "random" => Ok(Self::Random),
            "uniform" => Ok(Self::Uniform),
            other => Err(ArtError::Config(format!(
                "unknown weighting `{other}` (temporal_attention | cosine | random | uniform)"
            ))),
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TemporalAttention => "temporal_attention",
            Self::Cosine => "cosine",
            Self::Random => "random",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargConfig {
    pub d: usize,
    pub heads: usize,
    pub weighting: Weighting,
}

impl TargConfig {
    pub fn new(d: usize, heads: usize, weighting: Weighting) -> Result<Self> {
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(ArtError::Config(format!("hidden size {d} must be a positive multiple of heads {heads}")));
        }
        Ok(Self { d, heads, weighting })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

pub const W_IN: &str = "targ.w_in";
pub const W_Q: &str = "targ.w_q";
pub const W_K: &str = "targ.w_k";
pub const W_V: &str = "targ.w_v";
pub const W_O: &str = "targ.w_o";
pub const EDGE_A: &str = "targ.edge_a";
pub const EDGE_B: &str = "targ.edge_b";

/// Registers TARG parameters with Glorot-uniform weights.
pub fn init_params(store: &mut ParamStore, cfg: &TargConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let d = cfg.d;
    store.insert(W_IN, glorot(&[2, d], rng))?;
    for name in [W_Q, W_K, W_V, W_O] {
        store.insert(name, glorot(&[d, d], rng))?;
    }
    store.insert(EDGE_A, glorot(&[2 * d], rng))?;
    store.insert(EDGE_B, Tensor::zeros(&[1]))?;
    Ok(())
}

/// Glorot-uniform tensor; a 1-D shape is treated as `[n, 1]`.
pub fn glorot(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, 1),
        [.., a, b] => (*a, *b),
        [] => (1, 1),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape")
}

/// Sinusoidal encoding `[t_h, d]`: `PE(t, 2i) = sin(t / 10000^(2i/d))`,
/// `PE(t, 2i+1) = cos(t / 10000^(2i/d))`, time index from 0.
pub fn positional_encoding(t_h: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[t_h, d]);
    for t in 0..t_h {
        for c in 0..d {
            let pair = (c / 2 * 2) as f64;
            let angle = t as f64 / 10000f64.powf(pair / d as f64);
            pe.set(&[t, c], if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// `H[i, t] = PE_t + P[i, t] · W_in`; `observed` is `[M, T_h, 2]`.
pub fn embed(g: &mut Graph, store: &ParamStore, observed: Var) -> Result<Var> {
    let s = g.shape(observed).to_vec();
    let w_in = g.param_by_name(store, W_IN)?;
    let d = g.shape(w_in)[1];
    let proj = g.matmul(observed, w_in)?;
    let pe = g.constant(positional_encoding(s[1], d));
    let pe = g.expand(pe, 0, s[0])?;
    g.add(proj, pe)
}

/// Per-head Q/K/V projections of `h` (`[M, T, d]`), each `[M, T, d]` with
/// head `k` occupying channels `k·d_h .. (k+1)·d_h`.
pub fn project_qkv(g: &mut Graph, store: &ParamStore, h: Var) -> Result<(Var, Var, Var)> {
    let wq = g.param_by_name(store, W_Q)?;
    let wk = g.param_by_name(store, W_K)?;
    let wv = g.param_by_name(store, W_V)?;
    Ok((g.matmul(h, wq)?, g.matmul(h, wk)?, g.matmul(h, wv)?))
}

/// Splits `[M, T, d]` into `[T, H, M, d_h]`.
fn heads_time_major(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (m, t, d) = (s[0], s[1], s[2]);
    let r = g.reshape(x, &[m, t, heads, d / heads])?;
    g.permute(r, &[1, 2, 0, 3])
}

/// Time-resolved attention `α[h, i, j, t]` (`[H, M, M, T]`).
///
/// Logits use only same-step products `Q_i(t)·K_j(t) / √d_h`; the softmax
/// runs over `t`, so each `(h, i, j)` slice sums to one. Self pairs are
/// included.
pub fn time_resolved_attention(g: &mut Graph, q: Var, k: Var, heads: usize) -> Result<Var> {
    let d = g.shape(q)[2];
    let qh = heads_time_major(g, q, heads)?; // [T, H, Mi, dh]
    let kh = heads_time_major(g, k, heads)?;
    let kt = g.permute(kh, &[0, 1, 3, 2])?; // [T, H, dh, Mj]
    let logits = g.matmul(qh, kt)?; // [T, H, Mi, Mj]
    let logits = g.scale(logits, 1.0 / ((d / heads) as f64).sqrt());
    let logits = g.permute(logits, &[1, 2, 3, 0])?; // [H, Mi, Mj, T]
    g.softmax(logits, 3)
}

/// `R_ij^h = Σ_t α[h,i,j,t] · V_j^h(t)`, heads concatenated in ascending
/// order: `[M, M, d]`.
pub fn aggregate_heads(g: &mut Graph, alpha: Var, v: Var) -> Result<Var> {
    let sa = g.shape(alpha).to_vec();
    let (heads, m, t) = (sa[0], sa[1], sa[3]);
    let sv = g.shape(v).to_vec();
    if sv.len() != 3 || sv[0] != m || sv[1] != t || sv[2] % heads != 0 {
        return Err(ArtError::shape("aggregate_heads", &sa, &sv));
    }
    let dh = sv[2] / heads;
    let a = g.permute(alpha, &[0, 2, 1, 3])?; // [H, Mj, Mi, T]
    let vr = g.reshape(v, &[m, t, heads, dh])?;
    let vh = g.permute(vr, &[2, 0, 1, 3])?; // [H, Mj, T, dh]
    let r = g.matmul(a, vh)?; // [H, Mj, Mi, dh]
    let r = g.permute(r, &[2, 1, 0, 3])?; // [Mi, Mj, H, dh]
    g.reshape(r, &[m, m, heads * dh])
}

/// Head aggregation followed by the output projection `W_O`.
pub fn aggregate_relations(g: &mut Graph, store: &ParamStore, alpha: Var, v: Var) -> Result<Var> {
    let cat = aggregate_heads(g, alpha, v)?;
    let wo = g.param_by_name(store, W_O)?;
    g.matmul(cat, wo)
}

fn off_diagonal(m: usize, d: usize) -> Tensor {
    let mut t = Tensor::full(&[m, m, d], 1.0);
    for i in 0..m {
        for c in 0..d {
            t.set(&[i, i, c], 0.0);
        }
    }
    t
}

/// `w_ij = σ(aᵀ[R_ij ‖ R_ji] + b)` for `i ≠ j`, zero diagonal: `[M, M]`.
pub fn edge_weights(g: &mut Graph, store: &ParamStore, relations: Var) -> Result<Var> {
    let m = g.shape(relations)[0];
    let rt = g.transpose01(relations)?;
    let pair = g.concat(&[relations, rt], 2)?; // [M, M, 2d]
    let a = g.param_by_name(store, EDGE_A)?;
    let n = g.shape(a)[0];
    let a = g.reshape(a, &[n, 1])?;
    let b = g.param_by_name(store, EDGE_B)?;
    let score = g.matmul(pair, a)?; // [M, M, 1]
    let score = g.add_bias(score, b)?;
    let w = g.sigmoid(score);
    let mask = g.constant(off_diagonal(m, 1));
    let w = g.mul(w, mask)?;
    g.reshape(w, &[m, m])
}

/// Parameter-free weightings used as ablations. `h` is the embedded
/// `[M, T, d]` feature tensor (read by `Cosine` only).
pub fn ablation_weights(strategy: Weighting, h: &Tensor, seed: u64) -> Result<Tensor> {
    let s = h.shape();
    let (m, t, d) = (s[0], s[1], s[2]);
    let mut w = Tensor::zeros(&[m, m]);
    match strategy {
        Weighting::TemporalAttention => {
            return Err(ArtError::Config("temporal_attention is the learned weighting, not an ablation".into()))
        }
        Weighting::Uniform => {
            if m > 1 {
                let u = 1.0 / (m - 1) as f64;
                for i in 0..m {
                    for j in (0..m).filter(|&j| j != i) {
                        w.set(&[i, j], u);
                    }
                }
            }
        }
        Weighting::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..m {
                for j in 0..m {
                    let v: f64 = rng.gen();
                    if i != j {
                        w.set(&[i, j], v);
                    }
                }
            }
        }
        Weighting::Cosine => {
            let means: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    (0..d)
                        .map(|c| (0..t).map(|k| h.at(&[i, k, c])).sum::<f64>() / t as f64)
                        .collect()
                })
                .collect();
            for i in 0..m {
                for j in (0..m).filter(|&j| j != i) {
                    w.set(&[i, j], (cosine(&means[i], &means[j]) + 1.0) / 2.0);
                }
            }
        }
    }
    Ok(w)
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Everything TARG produces for one scene.
#[derive(Debug, Clone, Copy)]
pub struct TargVars {
    /// `[M, T, d]`
    pub h: Var,
    /// `[H, M, M, T]`
    pub alpha: Var,
    /// `[M, M, d]`
    pub relations: Var,
    /// `[M, M]`; a constant leaf for the ablation weightings.
    pub weights: Var,
}

/// Runs the whole relation-graph stage on a normalized `[M, T_h, 2]` input.
pub fn build(g: &mut Graph, store: &ParamStore, cfg: &TargConfig, observed: Var, seed: u64) -> Result<TargVars> {
    let h = embed(g, store, observed)?;
    let (q, k, v) = project_qkv(g, store, h)?;
    let alpha = time_resolved_attention(g, q, k, cfg.heads)?;
    let relations = aggregate_relations(g, store, alpha, v)?;
    let weights = match cfg.weighting {
        Weighting::TemporalAttention => edge_weights(g, store, relations)?,
        other => {
            let w = ablation_weights(other, g.value(h), seed)?;
            g.constant(w)
        }
    };
    Ok(TargVars {
        h,
        alpha,
        relations,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    fn store(d: usize, heads: usize) -> (ParamStore, TargConfig) {
        let cfg = TargConfig::new(d, heads, Weighting::TemporalAttention).unwrap();
        let mut s = ParamStore::new();
        init_params(&mut s, &cfg, &mut rng()).unwrap();
        (s, cfg)
    }

    fn zero(store: &mut ParamStore, name: &str) {
        store.by_name_mut(name).unwrap().tensor.data_mut().fill(0.0);
    }

    fn random_obs(m: usize, t: usize, seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[m, t, 2], (0..m * t * 2).map(|_| r.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn config_requires_divisible_heads() {
        assert!(TargConfig::new(64, 4, Weighting::TemporalAttention).is_ok());
        assert!(TargConfig::new(10, 4, Weighting::TemporalAttention).is_err());
    }

    #[test]
    fn positional_encoding_at_zero() {
        let pe = positional_encoding(3, 8);
        for c in 0..8 {
            assert_eq!(pe.at(&[0, c]), if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[2, 3]) - (2.0 / 10000f64.powf(2.0 / 8.0)).cos()).abs() < 1e-15);
    }

    #[test]
    fn zero_projection_gives_positional_encoding() {
        let (mut s, _) = store(8, 2);
        zero(&mut s, W_IN);
        let mut g = Graph::new();
        let obs = g.constant(random_obs(2, 4, 1));
        let h = embed(&mut g, &s, obs).unwrap();
        let pe = positional_encoding(4, 8);
        for i in 0..2 {
            for t in 0..4 {
                for c in 0..8 {
                    assert_eq!(g.value(h).at(&[i, t, c]), pe.at(&[t, c]));
                }
            }
        }
    }

    #[test]
    fn identical_tracks_identical_rows() {
        let (s, _) = store(8, 2);
        let mut obs = random_obs(3, 4, 2);
        for t in 0..4 {
            for c in 0..2 {
                let v = obs.at(&[0, t, c]);
                obs.set(&[2, t, c], v);
            }
        }
        let mut g = Graph::new();
        let o = g.constant(obs);
        let h = embed(&mut g, &s, o).unwrap();
        let hv = g.value(h);
        for t in 0..4 {
            for c in 0..8 {
                assert_eq!(hv.at(&[0, t, c]), hv.at(&[2, t, c]));
            }
        }
    }

    #[test]
    fn uniform_when_logits_equal() {
        // zero queries: every logit is 0
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[3, 5, 4]));
        let k = g.constant(random_obs(3, 5, 3).reshape(&[3, 5, 2]).unwrap());
        let k = g.concat(&[k, k], 2).unwrap();
        let a = time_resolved_attention(&mut g, q, k, 2).unwrap();
        assert!(g.value(a).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn hand_softmax_over_time() {
        // one head, d_h = 1: logits are q(t)·k(t) = [0, ln 3]
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(&[1, 2, 1], vec![0.0, 3f64.ln()]).unwrap());
        let k = g.constant(Tensor::new(&[1, 2, 1], vec![1.0, 1.0]).unwrap());
        let a = time_resolved_attention(&mut g, q, k, 1).unwrap();
        let v = g.value(a).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn attention_normalized_over_time() {
        let (s, cfg) = store(16, 4);
        let mut g = Graph::new();
        let obs = g.constant(random_obs(5, 8, 4));
        let out = build(&mut g, &s, &cfg, obs, 0).unwrap();
        let a = g.value(out.alpha);
        assert_eq!(a.shape(), &[4, 5, 5, 8]);
        for row in a.data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn hand_weighted_value_sum() {
        let mut g = Graph::new();
        // M = 1, T = 2, H = 1, d = 2
        let alpha = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.25, 0.75]).unwrap());
        let v = g.constant(Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let r = aggregate_heads(&mut g, alpha, v).unwrap();
        assert_eq!(g.value(r).data(), &[0.25, 0.75]);
    }

    #[test]
    fn one_hot_selects_a_step() {
        let mut g = Graph::new();
        let alpha = g.constant(Tensor::new(&[1, 2, 2, 3], {
            let mut a = vec![0.0; 12];
            for slot in 0..4 {
                a[slot * 3 + 1] = 1.0;
            }
            a
        })
        .unwrap());
        let vt = random_obs(2, 3, 5);
        let v = g.constant(vt.clone());
        let r = aggregate_heads(&mut g, alpha, v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..2 {
                    assert_eq!(g.value(r).at(&[i, j, c]), vt.at(&[j, 1, c]));
                }
            }
        }
    }

    #[test]
    fn identity_output_projection_single_head() {
        let (mut s, _) = store(4, 1);
        let eye = Tensor::new(&[4, 4], (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        s.by_name_mut(W_O).unwrap().tensor = eye;
        let mut g = Graph::new();
        let alpha = g.constant(Tensor::full(&[1, 2, 2, 3], 1.0 / 3.0));
        let v = g.constant(Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let raw = aggregate_heads(&mut g, alpha, v).unwrap();
        let proj = aggregate_relations(&mut g, &s, alpha, v).unwrap();
        assert_eq!(g.value(raw), g.value(proj));
    }

    #[test]
    fn sigmoid_edge_weights_with_zero_a() {
        let (mut s, _) = store(8, 2);
        zero(&mut s, EDGE_A);
        let mut g = Graph::new();
        let r = g.constant(random_obs(3, 3, 6).reshape(&[3, 3, 2]).unwrap());
        let r = g.concat(&[r, r, r, r], 2).unwrap();
        let w = edge_weights(&mut g, &s, r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert_eq!(g.value(w).at(&[i, j]), want);
            }
        }
        s.by_name_mut(EDGE_B).unwrap().tensor.data_mut()[0] = 3f64.ln();
        let mut g = Graph::new();
        let r = g.constant(Tensor::zeros(&[3, 3, 8]));
        let w = edge_weights(&mut g, &s, r).unwrap();
        assert!((g.value(w).at(&[0, 1]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn edge_weights_symmetric_only_with_equal_halves() {
        let (mut s, _) = store(4, 1);
        let mut g = Graph::new();
        let r = g.constant(random_obs(3, 3, 7).reshape(&[3, 3, 2]).unwrap());
        let r = g.concat(&[r, r], 2).unwrap();
        let w = edge_weights(&mut g, &s, r).unwrap();
        assert_ne!(g.value(w).at(&[0, 1]), g.value(w).at(&[1, 0]));

        let half: Vec<f64> = s.by_name(EDGE_A).unwrap().tensor.data()[..4].to_vec();
        let a = &mut s.by_name_mut(EDGE_A).unwrap().tensor;
        a.data_mut()[4..].copy_from_slice(&half);
        let mut g2 = Graph::new();
        let r = g2.constant(g.value(r).clone());
        let w = edge_weights(&mut g2, &s, r).unwrap();
        let g = g2;
        assert!((g.value(w).at(&[0, 1]) - g.value(w).at(&[1, 0])).abs() < 1e-15);
    }

    #[test]
    fn ablation_strategies() {
        let h = random_obs(3, 4, 8).reshape(&[3, 4, 2]).unwrap();
        let u = ablation_weights(Weighting::Uniform, &h, 0).unwrap();
        assert_eq!(u.at(&[0, 1]), 0.5);
        assert_eq!(u.at(&[1, 1]), 0.0);

        let r1 = ablation_weights(Weighting::Random, &h, 11).unwrap();
        let r2 = ablation_weights(Weighting::Random, &h, 11).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.data().iter().all(|&v| (0.0..1.0).contains(&v)));

        let mut same = h.clone();
        for t in 0..4 {
            for c in 0..2 {
                let v = same.at(&[0, t, c]);
                same.set(&[1, t, c], v);
            }
        }
        let c = ablation_weights(Weighting::Cosine, &same, 0).unwrap();
        assert!((c.at(&[0, 1]) - 1.0).abs() < 1e-12);
        assert!(ablation_weights(Weighting::TemporalAttention, &h, 0).is_err());
    }

    #[test]
    fn weighting_round_trips_through_text() {
        for w in [Weighting::TemporalAttention, Weighting::Cosine, Weighting::Random, Weighting::Uniform] {
            assert_eq!(w.to_string().parse::<Weighting>().unwrap(), w);
        }
        assert!("learned".parse::<Weighting>().is_err());
    }
}

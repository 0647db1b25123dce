//! Edge-aware relational transformer over the pruned interaction graph.
//!
//! Each layer attends from every agent to its kept neighbors plus itself,
//! with keys and values shifted by per-edge projections, then refreshes the
//! edge features of kept edges and self edges from the updated nodes.

use rand_chacha::ChaCha8Rng;

use crate::aip::PrunedGraph;
use crate::error::{ArtError, Result};
use crate::targ::glorot;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Default depth.
pub const DEFAULT_LAYERS: usize = 1;

/// Node and edge features between layers.
#[derive(Debug, Clone, Copy)]
pub struct RtState {
    /// `[M, d]`
    pub node: Var,
    /// `[M, M, d]`; zero outside kept edges and self edges.
    pub edge: Var,
    pub layer_index: usize,
}

/// Parameter names of one layer.
#[derive(Debug, Clone)]
pub struct LayerNames {
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub w_ke: String,
    pub w_ve: String,
    pub ffn1_w: String,
    pub ffn1_b: String,
    pub ffn2_w: String,
    pub ffn2_b: String,
    pub edge1_w: String,
    pub edge1_b: String,
    pub edge2_w: String,
    pub edge2_b: String,
}

impl LayerNames {
    pub fn new(layer: usize) -> Self {
        let n = |s: &str| format!("rt.{layer}.{s}");
        Self {
            w_q: n("w_q"),
            w_k: n("w_k"),
            w_v: n("w_v"),
            w_ke: n("w_ke"),
            w_ve: n("w_ve"),
            ffn1_w: n("ffn1.w"),
            ffn1_b: n("ffn1.b"),
            ffn2_w: n("ffn2.w"),
            ffn2_b: n("ffn2.b"),
            edge1_w: n("edge1.w"),
            edge1_b: n("edge1.b"),
            edge2_w: n("edge2.w"),
            edge2_b: n("edge2.b"),
        }
    }

    /// Weights on the update paths (everything except the biases).
    pub fn weights(&self) -> [&str; 9] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_ke,
            &self.w_ve,
            &self.ffn1_w,
            &self.ffn2_w,
            &self.edge1_w,
            &self.edge2_w,
        ]
    }
}

/// Registers `layers` RT layers of width `d`.
pub fn init_params(store: &mut ParamStore, d: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    for l in 0..layers {
        let n = LayerNames::new(l);
        for name in [&n.w_q, &n.w_k, &n.w_v, &n.w_ke, &n.w_ve] {
            store.insert(name.as_str(), glorot(&[d, d], rng))?;
        }
        store.insert(n.ffn1_w.as_str(), glorot(&[d, 4 * d], rng))?;
        store.insert(n.ffn1_b.as_str(), Tensor::zeros(&[4 * d]))?;
        store.insert(n.ffn2_w.as_str(), glorot(&[4 * d, d], rng))?;
        store.insert(n.ffn2_b.as_str(), Tensor::zeros(&[d]))?;
        store.insert(n.edge1_w.as_str(), glorot(&[4 * d, d], rng))?;
        store.insert(n.edge1_b.as_str(), Tensor::zeros(&[d]))?;
        store.insert(n.edge2_w.as_str(), glorot(&[d, d], rng))?;
        store.insert(n.edge2_b.as_str(), Tensor::zeros(&[d]))?;
    }
    Ok(())
}

/// `[M, M, d]` 0/1 mask of kept edges plus self edges.
fn edge_mask(pruned: &PrunedGraph, d: usize, transpose: bool) -> Tensor {
    let m = pruned.num_agents();
    let mask = pruned.attention_mask();
    let mut t = Tensor::zeros(&[m, m, d]);
    for i in 0..m {
        for j in 0..m {
            let on = if transpose { mask[j * m + i] } else { mask[i * m + j] };
            if on {
                t.data_mut()[(i * m + j) * d..(i * m + j + 1) * d].fill(1.0);
            }
        }
    }
    t
}

/// `h⁽⁰⁾_i = mean_t H[i, t]`; `e⁽⁰⁾_ij = R_ij` on kept edges and self
/// edges, zero elsewhere.
pub fn init_state(g: &mut Graph, h_temporal: Var, relations: Var, pruned: &PrunedGraph) -> Result<RtState> {
    let sh = g.shape(h_temporal).to_vec();
    let sr = g.shape(relations).to_vec();
    let m = pruned.num_agents();
    if sh.len() != 3 || sr != [m, m, sh[2]] || sh[0] != m {
        return Err(ArtError::shape("rt::init_state", &sh, &sr));
    }
    let node = g.mean_axis(h_temporal, 1)?;
    let mask = g.constant(edge_mask(pruned, sh[2], false));
    let edge = g.mul(relations, mask)?;
    Ok(RtState {
        node,
        edge,
        layer_index: 0,
    })
}

fn linear(g: &mut Graph, store: &ParamStore, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
    let wv = g.param_by_name(store, w)?;
    let y = g.matmul(x, wv)?;
    match b {
        Some(b) => {
            let bv = g.param_by_name(store, b)?;
            g.add_bias(y, bv)
        }
        None => Ok(y),
    }
}

/// Edge-aware attention weights `[M_i, M_j, H]`, zero off the neighbor
/// sets. Exposed for inspection and tests.
pub fn attention(g: &mut Graph, store: &ParamStore, state: &RtState, pruned: &PrunedGraph, heads: usize) -> Result<Var> {
    let names = LayerNames::new(state.layer_index);
    attention_with(g, store, state, &names, pruned.attention_mask(), heads)
}

fn attention_with(
    g: &mut Graph,
    store: &ParamStore,
    state: &RtState,
    names: &LayerNames,
    mask: Vec<bool>,
    heads: usize,
) -> Result<Var> {
    let s = g.shape(state.node).to_vec();
    let (m, d) = (s[0], s[1]);
    let dh = d / heads;
    let q = linear(g, store, state.node, &names.w_q, None)?;
    let k = linear(g, store, state.node, &names.w_k, None)?;
    let ke = linear(g, store, state.edge, &names.w_ke, None)?;
    let q_i = g.expand(q, 1, m)?; // [Mi, Mj, d], row i repeated
    let k_j = g.expand(k, 0, m)?; // [Mi, Mj, d], K_j for every i
    let keys = g.add(k_j, ke)?;
    let prod = g.mul(q_i, keys)?;
    let prod = g.reshape(prod, &[m, m, heads, dh])?;
    let logits = g.sum_axis(prod, 3)?;
    let logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
    let mask: Vec<bool> = mask.iter().flat_map(|&b| std::iter::repeat(b).take(heads)).collect();
    g.masked_softmax(logits, 1, &mask)
}

/// One relational-transformer layer.
///
/// Node update: `h_i ← h_i + FFN(Σ_j α_ij (V_j + V_e_ij))` over kept
/// neighbors and self, with `FFN = Linear(d,4d) → GELU → Linear(4d,d)`.
/// Edge update on kept and self edges, using the updated nodes:
/// `e_ij ← e_ij + MLP([h_i ‖ h_j ‖ e_ij ‖ e_ji])` with
/// `MLP = Linear(4d,d) → GELU → Linear(d,d)`. A reverse edge `e_ji` that `j`
/// pruned reads as zero.
pub fn rt_layer(g: &mut Graph, store: &ParamStore, state: RtState, pruned: &PrunedGraph, heads: usize) -> Result<RtState> {
    let names = LayerNames::new(state.layer_index);
    if store.id(&names.w_q).is_none() {
        return Err(ArtError::Contract(format!("no parameters for layer {}", state.layer_index)));
    }
    let s = g.shape(state.node).to_vec();
    let (m, d) = (s[0], s[1]);
    if pruned.num_agents() != m || d % heads != 0 {
        return Err(ArtError::shape("rt_layer", &s, &[pruned.num_agents(), heads]));
    }
    let dh = d / heads;

    let alpha = attention_with(g, store, &state, &names, pruned.attention_mask(), heads)?; // [Mi, Mj, H]
    let v = linear(g, store, state.node, &names.w_v, None)?;
    let ve = linear(g, store, state.edge, &names.w_ve, None)?;
    let v_j = g.expand(v, 0, m)?;
    let values = g.add(v_j, ve)?;
    let values = g.reshape(values, &[m, m, heads, dh])?;
    let weights = g.expand(alpha, 3, dh)?;
    let weighted = g.mul(weights, values)?;
    let pooled = g.sum_axis(weighted, 1)?; // [Mi, H, dh]
    let pooled = g.reshape(pooled, &[m, d])?;
    let hidden = linear(g, store, pooled, &names.ffn1_w, Some(&names.ffn1_b))?;
    let hidden = g.gelu(hidden);
    let update = linear(g, store, hidden, &names.ffn2_w, Some(&names.ffn2_b))?;
    let node = g.add(state.node, update)?;

    let h_i = g.expand(node, 1, m)?;
    let h_j = g.expand(node, 0, m)?;
    let rev_mask = g.constant(edge_mask(pruned, d, true));
    let e_rev = g.transpose01(state.edge)?;
    let e_rev = g.mul(e_rev, rev_mask)?;
    let fwd_mask = g.constant(edge_mask(pruned, d, false));
    let e_own = g.mul(state.edge, fwd_mask)?;
    let input = g.concat(&[h_i, h_j, e_own, e_rev], 2)?;
    let hidden = linear(g, store, input, &names.edge1_w, Some(&names.edge1_b))?;
    let hidden = g.gelu(hidden);
    let delta = linear(g, store, hidden, &names.edge2_w, Some(&names.edge2_b))?;
    let edge = g.add(e_own, delta)?;
    let edge = g.mul(edge, fwd_mask)?;

    Ok(RtState {
        node,
        edge,
        layer_index: state.layer_index + 1,
    })
}

/// Applies `layers` consecutive layers.
pub fn encode(g: &mut Graph, store: &ParamStore, state: RtState, pruned: &PrunedGraph, heads: usize, layers: usize) -> Result<RtState> {
    if layers == 0 {
        return Err(ArtError::Config("relational transformer needs at least one layer".into()));
    }
    (0..layers).try_fold(state, |s, _| rt_layer(g, store, s, pruned, heads))
}

//! Adaptive interaction pruning: per-agent top-p filtering of the dense
//! edge-weight matrix followed by renormalization of the kept weights.

use crate::error::{ArtError, Result};
use crate::tensor::Tensor;

/// Default cumulative-mass threshold.
pub const DEFAULT_P: f64 = 0.75;

/// Sparsified adjacency with per-agent neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedGraph {
    /// `[M, M]`, rows sum to one over kept neighbors, zero elsewhere.
    pub weights: Tensor,
    /// Kept neighbors of each agent, strongest first.
    pub kept: Vec<Vec<usize>>,
    pub k_star: Vec<usize>,
}

impl PrunedGraph {
    pub fn num_agents(&self) -> usize {
        self.kept.len()
    }

    /// Every off-diagonal edge kept with row-normalized weights.
    pub fn dense(weights: &Tensor) -> Result<Self> {
        prune(weights, 1.0).map(|mut g| {
            // p = 1 can still stop early on trailing zero weights; force all
            let m = g.num_agents();
            for i in 0..m {
                let mut rest: Vec<usize> = (0..m).filter(|&j| j != i && !g.kept[i].contains(&j)).collect();
                g.kept[i].append(&mut rest);
                g.k_star[i] = g.kept[i].len();
            }
            g
        })
    }

    /// `mask[i*M + j]` is true when agent `i` attends to `j`: kept neighbors
    /// plus `i` itself.
    pub fn attention_mask(&self) -> Vec<bool> {
        let m = self.num_agents();
        let mut mask = vec![false; m * m];
        for (i, kept) in self.kept.iter().enumerate() {
            mask[i * m + i] = true;
            for &j in kept {
                mask[i * m + j] = true;
            }
        }
        mask
    }

    pub fn mean_k_star(&self) -> f64 {
        if self.k_star.is_empty() {
            return 0.0;
        }
        self.k_star.iter().sum::<usize>() as f64 / self.k_star.len() as f64
    }

    /// Relabels agents so that new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> PrunedGraph {
        let m = self.num_agents();
        let mut inv = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut w = Tensor::zeros(&[m, m]);
        for a in 0..m {
            for b in 0..m {
                w.set(&[a, b], self.weights.at(&[perm[a], perm[b]]));
            }
        }
        PrunedGraph {
            weights: w,
            kept: perm
                .iter()
                .map(|&old| self.kept[old].iter().map(|&j| inv[j]).collect())
                .collect(),
            k_star: perm.iter().map(|&old| self.k_star[old]).collect(),
        }
    }
}

fn check_input(weights: &Tensor, p: f64) -> Result<usize> {
    let s = weights.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(ArtError::shape("prune", s, &[s.first().copied().unwrap_or(0); 2]));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(ArtError::Config(format!("top-p threshold {p} outside (0, 1]")));
    }
    let m = s[0];
    for i in 0..m {
        for j in 0..m {
            let w = weights.at(&[i, j]);
            if i != j && !(w >= 0.0 && w.is_finite()) {
                return Err(ArtError::Contract(format!("edge weight w[{i},{j}] = {w} must be finite and >= 0")));
            }
        }
    }
    Ok(m)
}

/// Top-p pruning of each row of `weights`; the diagonal is ignored.
///
/// Neighbors are ranked by descending weight (ties: lower index first) and
/// the shortest prefix whose share of the row mass reaches `p` is kept. A
/// row with zero total mass keeps every neighbor at `1/(M−1)`.
pub fn prune(weights: &Tensor, p: f64) -> Result<PrunedGraph> {
    let m = check_input(weights, p)?;
    let mut out = Tensor::zeros(&[m, m]);
    let mut kept = Vec::with_capacity(m);
    let mut k_star = Vec::with_capacity(m);
    for i in 0..m {
        let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            weights.at(&[i, b]).total_cmp(&weights.at(&[i, a])).then(a.cmp(&b))
        });
        let mut cumulative = Vec::with_capacity(order.len());
        let mut running = 0.0;
        for &j in &order {
            running += weights.at(&[i, j]);
            cumulative.push(running);
        }
        let total = cumulative.last().copied().unwrap_or(0.0);
        let row: Vec<usize> = if total > 0.0 {
            let k = cumulative
                .iter()
                .position(|&c| c / total >= p)
                .map_or(order.len(), |pos| pos + 1);
            let row = order[..k].to_vec();
            let mass = cumulative[k - 1];
            for &j in &row {
                out.set(&[i, j], weights.at(&[i, j]) / mass);
            }
            row
        } else {
            let u = 1.0 / order.len().max(1) as f64;
            for &j in &order {
                out.set(&[i, j], u);
            }
            order
        };
        k_star.push(row.len());
        kept.push(row);
    }
    Ok(PrunedGraph {
        weights: out,
        kept,
        k_star,
    })
}

/// Brute-force reference for [`prune`]: for k = 1, 2, … select the k
/// heaviest neighbors by repeated linear scans and recompute their sum from
/// scratch until the mass ratio reaches `p`.
pub fn prune_oracle(weights: &Tensor, p: f64) -> Result<PrunedGraph> {
    let m = check_input(weights, p)?;
    let mut out = Tensor::zeros(&[m, m]);
    let mut kept = Vec::with_capacity(m);
    let mut k_star = Vec::with_capacity(m);
    for i in 0..m {
        let w = |j: usize| weights.at(&[i, j]);
        // top-k by selection: heaviest unchosen, lowest index on ties
        let top = |k: usize| -> Vec<usize> {
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            for _ in 0..k {
                let mut best: Option<usize> = None;
                for j in 0..m {
                    if j == i || chosen.contains(&j) {
                        continue;
                    }
                    if best.map_or(true, |b| w(j) > w(b)) {
                        best = Some(j);
                    }
                }
                chosen.extend(best);
            }
            chosen
        };
        let mass = |set: &[usize]| set.iter().fold(0.0, |acc, &j| acc + w(j));
        let n = m.saturating_sub(1);
        let total = mass(&top(n));
        let mut row = Vec::new();
        if total > 0.0 {
            for k in 1..=n {
                let set = top(k);
                if mass(&set) / total >= p || k == n {
                    row = set;
                    break;
                }
            }
            let kept_mass = mass(&row);
            for &j in &row {
                out.set(&[i, j], w(j) / kept_mass);
            }
        } else {
            row = (0..m).filter(|&j| j != i).collect();
            for &j in &row {
                out.set(&[i, j], 1.0 / n as f64);
            }
        }
        k_star.push(row.len());
        kept.push(row);
    }
    Ok(PrunedGraph {
        weights: out,
        kept,
        k_star,
    })
}

/// Each row divided by its off-diagonal sum (zero rows stay zero).
pub fn row_normalized(weights: &Tensor) -> Tensor {
    let m = weights.shape()[0];
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        let total: f64 = (0..m).filter(|&j| j != i).map(|j| weights.at(&[i, j])).sum();
        if total > 0.0 {
            for j in (0..m).filter(|&j| j != i) {
                out.set(&[i, j], weights.at(&[i, j]) / total);
            }
        }
    }
    out
}

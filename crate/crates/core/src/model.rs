//! The full predictor: relation graph → pruning → relational transformer →
//! K decoding heads, on scenes normalized to their last-frame centroid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aip::{self, PrunedGraph};
use crate::data::{normalize, Scene};
use crate::error::{ArtError, Result};
use crate::head::{self, MinScope, PredictionSet};
use crate::rt::{self, RtState};
use crate::targ::{self, TargConfig, TargVars, Weighting};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub k: usize,
    pub p: f64,
    /// When false every off-diagonal edge is kept (dense graph).
    pub aip: bool,
    pub weighting: Weighting,
    pub weighting_seed: u64,
    pub min_scope: MinScope,
    pub t_f: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            layers: rt::DEFAULT_LAYERS,
            k: head::DEFAULT_K,
            p: aip::DEFAULT_P,
            aip: true,
            weighting: Weighting::TemporalAttention,
            weighting_seed: 0,
            min_scope: MinScope::PerStep,
            t_f: 12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        TargConfig::new(self.d, self.heads, self.weighting)?;
        if self.layers == 0 || self.k == 0 || self.t_f == 0 {
            return Err(ArtError::Config("layers, K and t_f must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ArtError::Config(format!("model.p = {} outside (0, 1]", self.p)));
        }
        Ok(())
    }

    pub fn targ(&self) -> TargConfig {
        TargConfig {
            d: self.d,
            heads: self.heads,
            weighting: self.weighting,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Overrides the configured threshold for this pass.
    pub p: Option<f64>,
}

/// Graph handles and host-side structures of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub targ: TargVars,
    pub pruned: PrunedGraph,
    pub state0: RtState,
    pub encoded: RtState,
    /// `[M, K, T_f, 2]`, normalized coordinates.
    pub predictions: Var,
}

/// Prediction for one scene in its original coordinates.
#[derive(Debug, Clone)]
pub struct ScenePrediction {
    pub predictions: PredictionSet,
    pub pruned: PrunedGraph,
    /// Dense edge weights `[M, M]`.
    pub weights: Tensor,
    /// `[H, M, M, T_h]` time-resolved attention, when requested.
    pub per_time_scores: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl ArtModel {
    /// Fresh model with seeded Glorot initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        targ::init_params(&mut params, &config.targ(), &mut rng)?;
        rt::init_params(&mut params, config.d, config.layers, &mut rng)?;
        head::init_params(&mut params, config.d, config.k, config.t_f, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking they fit `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        let mut mismatched = Vec::new();
        for p in reference.params.iter() {
            match params.by_name(&p.name) {
                Some(q) if q.tensor.shape() == p.tensor.shape() => {}
                Some(q) => mismatched.push(format!("{} shape {:?} != {:?}", p.name, q.tensor.shape(), p.tensor.shape())),
                None => mismatched.push(format!("{} missing", p.name)),
            }
        }
        if !mismatched.is_empty() {
            return Err(ArtError::Incompatible { fields: mismatched });
        }
        Ok(Self { config, params })
    }

    /// Records the forward pass for an already normalized scene.
    pub fn forward(&self, g: &mut Graph, scene: &Scene, opts: ForwardOptions) -> Result<Forward> {
        let cfg = &self.config;
        let observed = g.constant(scene.observed().clone());
        let targ = targ::build(g, &self.params, &cfg.targ(), observed, cfg.weighting_seed)?;
        let weights = g.value(targ.weights).clone();
        let pruned = if cfg.aip {
            aip::prune(&weights, opts.p.unwrap_or(cfg.p))?
        } else {
            PrunedGraph::dense(&weights)?
        };
        let state0 = rt::init_state(g, targ.h, targ.relations, &pruned)?;
        let encoded = rt::encode(g, &self.params, state0, &pruned, cfg.heads, cfg.layers)?;
        let last: Vec<f64> = scene.last_observed().into_iter().flatten().collect();
        let last = g.constant(Tensor::new(&[scene.num_agents(), 2], last)?);
        let predictions = head::decode(g, &self.params, state0.node, encoded.node, last, cfg.k, cfg.t_f)?;
        Ok(Forward {
            targ,
            pruned,
            state0,
            encoded,
            predictions,
        })
    }

    /// Normalizes, predicts and maps candidates back to scene coordinates.
    pub fn predict(&self, scene: &Scene, opts: ForwardOptions, keep_scores: bool) -> Result<ScenePrediction> {
        let (norm, state) = normalize(scene);
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, &norm, opts)?;
        let mut cand = g.value(fwd.predictions).clone();
        for (i, v) in cand.data_mut().iter_mut().enumerate() {
            *v += state.centroid[i % 2];
        }
        let mut predictions = PredictionSet::new(cand)?;
        if let Some(f) = scene.future() {
            predictions.select_best(f)?;
        }
        Ok(ScenePrediction {
            predictions,
            weights: g.value(fwd.targ.weights).clone(),
            per_time_scores: keep_scores.then(|| g.value(fwd.targ.alpha).clone()),
            pruned: fwd.pruned,
        })
    }

    /// Best-of-K loss on one scene and the gradient of every parameter
    /// (`None` where the loss does not reach it).
    pub fn loss_and_grads(&self, scene: &Scene) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let (norm, _) = normalize(scene);
        let future = norm
            .future()
            .ok_or_else(|| ArtError::Contract("training scene has no future".into()))?
            .clone();
        if future.shape()[1] != self.config.t_f {
            return Err(ArtError::Config(format!(
                "scene horizon {} != model t_f {}",
                future.shape()[1],
                self.config.t_f
            )));
        }
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, &norm, ForwardOptions::default())?;
        let target = g.constant(future);
        let loss = head::best_of_k_loss(&mut g, fwd.predictions, target, self.config.min_scope)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item(), grads.param_grads(&g, self.params.len())))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

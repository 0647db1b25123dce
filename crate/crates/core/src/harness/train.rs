//! Adam training loop, evaluation and the `loss.csv` writer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Scene;
use crate::error::{ArtError, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::dataset::{load_splits, Splits};
use crate::head::{constant_velocity_baseline, scene_metrics, MetricReport};
use crate::model::{ArtModel, ForwardOptions};
use crate::tensor::ParamStore;

pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.artc";

/// Adam with bias correction; parameters without a gradient are left alone.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Maps `f` over `items` on `threads` workers; output keeps input order.
pub fn ordered_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ArtError::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`
/// (`0` disables). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Mean of per-scene gradients, summed in scene order.
fn reduce_grads(per_scene: Vec<Vec<Option<Vec<f64>>>>) -> Vec<Option<Vec<f64>>> {
    let n = per_scene.len() as f64;
    let mut acc: Vec<Option<Vec<f64>>> = Vec::new();
    for grads in per_scene {
        if acc.is_empty() {
            acc = vec![None; grads.len()];
        }
        for (slot, g) in acc.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match slot {
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                None => *slot = Some(g),
            }
        }
    }
    for g in acc.iter_mut().flatten() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    acc
}

pub fn evaluate(model: &ArtModel, scenes: &[Scene], opts: ForwardOptions, threads: usize) -> Result<MetricReport> {
    let indexed: Vec<(usize, &Scene)> = scenes.iter().enumerate().collect();
    let rows = ordered_map(&indexed, threads, |(i, scene)| {
        let future = scene
            .future()
            .ok_or_else(|| ArtError::Contract(format!("scene {i} has no future")))?;
        let pred = model.predict(scene, opts, false)?;
        scene_metrics(*i, &pred.predictions, future)
    })?;
    Ok(MetricReport::from_scenes(rows))
}

pub fn evaluate_baseline(scenes: &[Scene], t_f: usize) -> Result<MetricReport> {
    let rows = scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let future = scene
                .future()
                .ok_or_else(|| ArtError::Contract(format!("scene {i} has no future")))?;
            scene_metrics(i, &constant_velocity_baseline(scene, t_f), future)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_scenes(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_min_ade: f64,
    pub val_min_fde: f64,
}

pub fn loss_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,train_loss,val_minADE,val_minFDE\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9}\n",
            r.epoch, r.train_loss, r.val_min_ade, r.val_min_fde
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ArtModel,
    pub history: Vec<EpochRow>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ArtError::io(format!("writing {}", path.display()), e))
}

/// Trains on `splits`. When `out_dir` is given, `loss.csv` and the
/// checkpoint are rewritten after every epoch.
pub fn train_on(cfg: &RunConfig, splits: &Splits, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if splits.train.is_empty() {
        return Err(ArtError::Config("training split is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ArtError::io(format!("creating {}", dir.display()), e))?;
    }
    let tc = &cfg.train;
    let mut model = ArtModel::new(cfg.model.clone(), tc.seed)?;
    let mut adam = Adam::new(&model.params, tc.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5EED_0F_5C0E5);
    let mut history = Vec::new();
    let save = |model: &ArtModel, history: &[EpochRow]| -> Result<()> {
        if let Some(dir) = out_dir {
            Checkpoint::from_model(model, cfg).save(&dir.join(CHECKPOINT_FILE))?;
            write(&dir.join(LOSS_CSV), &loss_csv(history))?;
        }
        Ok(())
    };
    save(&model, &history)?;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let steps_per_epoch = splits.train.len().div_ceil(tc.batch_scenes);
    let total_steps = (steps_per_epoch * tc.epochs).max(1) as f64;
    let mut step = 0usize;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_scenes) {
            let results = ordered_map(batch, tc.threads, |&i| model.loss_and_grads(&splits.train[i]))?;
            let mut grads = Vec::with_capacity(results.len());
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(ArtError::Numeric(format!("non-finite training loss at epoch {epoch}")));
                }
                loss_sum += loss;
                grads.push(g);
            }
            let mut grads = reduce_grads(grads);
            clip_global_norm(&mut grads, tc.clip_norm);
            if tc.cosine_schedule {
                let progress = step as f64 / total_steps;
                adam.lr = tc.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            adam.step(&mut model.params, &grads);
            step += 1;
        }
        let val = if splits.val.is_empty() {
            None
        } else {
            Some(evaluate(&model, &splits.val, ForwardOptions::default(), tc.threads)?)
        };
        history.push(EpochRow {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            val_min_ade: val.as_ref().map_or(f64::NAN, |r| r.min_ade),
            val_min_fde: val.as_ref().map_or(f64::NAN, |r| r.min_fde),
        });
        save(&model, &history)?;
    }
    Ok(TrainOutcome { model, history })
}

/// `train` subcommand: loads data (failing before any step if it cannot)
/// and trains into `output.dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let splits = load_splits(&cfg.data)?;
    train_on(cfg, &splits, Some(&cfg.output_dir))
}

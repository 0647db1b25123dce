//! Flat `key = value` run configuration with dotted keys.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Lines starting with `#` and blank lines are ignored. Later assignments
//! (including `--set` overrides) replace earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SyntheticKind;
use crate::error::{ArtError, Result};
use crate::head::MinScope;
use crate::model::ModelConfig;

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model.d", "64", "hidden width"),
    ("model.heads", "4", "attention heads"),
    ("model.layers", "1", "relational transformer layers"),
    ("model.k", "20", "prediction heads"),
    ("model.p", "0.75", "top-p threshold"),
    ("model.aip", "true", "false keeps every edge"),
    ("model.weighting", "temporal_attention", "temporal_attention | cosine | random | uniform"),
    ("model.weighting_seed", "0", "seed of the random weighting"),
    ("loss.min_scope", "per_step", "per_step | per_trajectory"),
    ("data.source", "synthetic", "synthetic | ethucy"),
    ("data.synthetic_kind", "constant_velocity", "constant_velocity | crossing | group"),
    ("data.m", "4", "agents per synthetic scene"),
    ("data.t_h", "8", "observed frames"),
    ("data.t_f", "12", "predicted frames"),
    ("data.stride", "1", "sliding-window stride for ethucy files"),
    ("data.train_scenes", "200", "synthetic training scenes"),
    ("data.val_scenes", "50", "synthetic validation scenes"),
    ("data.seed", "0", "synthetic generation seed"),
    ("data.ethucy_dir", "", "directory of ethucy text files"),
    ("data.holdout", "", "file stem held out for validation"),
    ("train.epochs", "50", "passes over the training split"),
    ("train.batch_scenes", "1", "scenes per optimizer step"),
    ("train.learning_rate", "0.001", "Adam step size"),
    ("train.seed", "0", "initialization and shuffling seed"),
    ("train.threads", "1", "worker threads for per-scene gradients"),
    ("train.clip_norm", "1.0", "global gradient-norm clip; 0 disables"),
    ("train.lr_schedule", "cosine", "constant | cosine (decays to zero over the run)"),
    ("output.dir", "runs/default", "output directory"),
    ("eval.checkpoint", "", "checkpoint path; default <output.dir>/checkpoint.artc"),
    ("eval.baseline", "false", "evaluate the constant-velocity baseline instead"),
    ("sweep.p_values", "0.65,0.75,0.85,0.95,1.0", "comma-separated thresholds"),
    ("sweep.retrain", "false", "retrain per threshold instead of varying it at inference"),
    ("viz.scene", "0", "validation scene index"),
    ("viz.i", "0", "first agent of the pair"),
    ("viz.j", "1", "second agent of the pair"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticKind),
    EthUcy { dir: PathBuf, holdout: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub m: usize,
    pub t_h: usize,
    pub t_f: usize,
    pub stride: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_scenes: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub threads: usize,
    pub clip_norm: f64,
    pub cosine_schedule: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub baseline: bool,
    pub sweep_p: Vec<f64>,
    pub sweep_retrain: bool,
    pub viz_scene: usize,
    pub viz_pair: (usize, usize),
    raw: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(std::iter::empty()).expect("defaults are valid")
    }
}

fn get<T: FromStr>(raw: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: Display,
{
    let v = &raw[key];
    v.parse()
        .map_err(|e| ArtError::Config(format!("{key} = `{v}`: {e}")))
}

fn get_bool(raw: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match raw[key].as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(ArtError::Config(format!("{key} = `{v}` is not a boolean"))),
    }
}

pub fn parse_p_list(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| ArtError::Config(format!("sweep.p_values entry `{s}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(ArtError::Config("sweep.p_values is empty".into()));
    }
    for &p in &values {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ArtError::Config(format!("sweep p = {p} outside (0, 1]")));
        }
    }
    Ok(values)
}

/// Splits `key = value`; the value may be empty.
pub fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k, v.trim()))
}

fn parse_lines(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_assignment(line)
            .ok_or_else(|| ArtError::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        pairs.push((k, v));
    }
    Ok(pairs)
}

impl RunConfig {
    /// Builds a configuration from assignments applied over the defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut raw: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            match raw.get_mut(k) {
                Some(slot) => *slot = v.to_string(),
                None => return Err(ArtError::Config(format!("unknown configuration key `{k}`"))),
            }
        }
        Self::from_raw(raw)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_lines(text)?)
    }

    /// Reads `path` (if any) and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ArtError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut pairs = parse_lines(&text)?;
        for o in overrides {
            pairs.push(
                split_assignment(o).ok_or_else(|| ArtError::Config(format!("override `{o}` is not key=value")))?,
            );
        }
        Self::from_pairs(pairs)
    }

    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (k, v) = split_assignment(assignment)
            .ok_or_else(|| ArtError::Config(format!("override `{assignment}` is not key=value")))?;
        self.with(k, v)
    }

    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let pairs: Vec<(String, String)> = self.raw.clone().into_iter().collect();
        Self::from_pairs(
            pairs
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .chain(std::iter::once((key, value))),
        )
    }

    fn from_raw(raw: BTreeMap<String, String>) -> Result<Self> {
        let model = ModelConfig {
            d: get(&raw, "model.d")?,
            heads: get(&raw, "model.heads")?,
            layers: get(&raw, "model.layers")?,
            k: get(&raw, "model.k")?,
            p: get(&raw, "model.p")?,
            aip: get_bool(&raw, "model.aip")?,
            weighting: get(&raw, "model.weighting")?,
            weighting_seed: get(&raw, "model.weighting_seed")?,
            min_scope: get::<MinScope>(&raw, "loss.min_scope")?,
            t_f: get(&raw, "data.t_f")?,
        };
        model.validate()?;
        let source = match raw["data.source"].as_str() {
            "synthetic" => DataSource::Synthetic(get(&raw, "data.synthetic_kind")?),
            "ethucy" => {
                let dir = &raw["data.ethucy_dir"];
                if dir.is_empty() {
                    return Err(ArtError::Config("data.source = ethucy needs data.ethucy_dir".into()));
                }
                DataSource::EthUcy {
                    dir: PathBuf::from(dir),
                    holdout: raw["data.holdout"].clone(),
                }
            }
            other => return Err(ArtError::Config(format!("unknown data.source `{other}` (synthetic | ethucy)"))),
        };
        let data = DataConfig {
            source,
            m: get(&raw, "data.m")?,
            t_h: get(&raw, "data.t_h")?,
            t_f: model.t_f,
            stride: get(&raw, "data.stride")?,
            train_scenes: get(&raw, "data.train_scenes")?,
            val_scenes: get(&raw, "data.val_scenes")?,
            seed: get(&raw, "data.seed")?,
        };
        if data.t_h == 0 || data.m == 0 || data.stride == 0 {
            return Err(ArtError::Config("data.t_h, data.m and data.stride must be at least 1".into()));
        }
        let train = TrainConfig {
            epochs: get(&raw, "train.epochs")?,
            batch_scenes: get(&raw, "train.batch_scenes")?,
            learning_rate: get(&raw, "train.learning_rate")?,
            seed: get(&raw, "train.seed")?,
            threads: get(&raw, "train.threads")?,
            clip_norm: get(&raw, "train.clip_norm")?,
            cosine_schedule: match raw["train.lr_schedule"].as_str() {
                "constant" => false,
                "cosine" => true,
                other => return Err(ArtError::Config(format!("unknown train.lr_schedule `{other}` (constant | cosine)"))),
            },
        };
        if !(train.clip_norm >= 0.0) {
            return Err(ArtError::Config("train.clip_norm must be >= 0".into()));
        }
        if train.batch_scenes == 0 || train.threads == 0 {
            return Err(ArtError::Config("train.batch_scenes and train.threads must be at least 1".into()));
        }
        if !(train.learning_rate > 0.0 && train.learning_rate.is_finite()) {
            return Err(ArtError::Config(format!("train.learning_rate = {} must be positive", train.learning_rate)));
        }
        let checkpoint = Some(&raw["eval.checkpoint"]).filter(|s| !s.is_empty()).map(PathBuf::from);
        Ok(Self {
            model,
            data,
            train,
            output_dir: PathBuf::from(&raw["output.dir"]),
            checkpoint,
            baseline: get_bool(&raw, "eval.baseline")?,
            sweep_p: parse_p_list(&raw["sweep.p_values"])?,
            sweep_retrain: get_bool(&raw, "sweep.retrain")?,
            viz_scene: get(&raw, "viz.scene")?,
            viz_pair: (get(&raw, "viz.i")?, get(&raw, "viz.j")?),
            raw,
        })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint.artc"))
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    /// Canonical text form: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        self.raw.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

//! Train/validation splits from the configured source.

use std::path::{Path, PathBuf};

use crate::data::{generate_synthetic, load_ethucy_text, Scene, SyntheticKind};
use crate::error::{ArtError, Result};
use crate::harness::config::{DataConfig, DataSource};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
}

/// Seed of synthetic scene `index` in `split` (0 = train, 1 = val).
pub fn scene_seed(base: u64, split: u64, index: usize) -> u64 {
    // splitmix64 finalizer over a distinct input per (base, split, index)
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(split << 40)
        .wrapping_add(index as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn synthetic_split(kind: SyntheticKind, cfg: &DataConfig, split: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_synthetic(kind, cfg.m, cfg.t_h, cfg.t_f, scene_seed(cfg.seed, split, i)))
        .collect()
}

/// `.txt` files of `dir`, sorted by name.
pub fn ethucy_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| ArtError::io(format!("listing {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ArtError::io(format!("listing {}", dir.display()), e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Leave-one-file-out: the file whose stem equals `holdout` is the
/// validation split, every other file is training data.
fn ethucy_splits(dir: &Path, holdout: &str, cfg: &DataConfig) -> Result<Splits> {
    let files = ethucy_files(dir)?;
    if files.is_empty() {
        return Err(ArtError::Format(format!("no .txt files in {}", dir.display())));
    }
    let stems: Vec<String> = files
        .iter()
        .map(|f| f.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    if !stems.iter().any(|s| s == holdout) {
        return Err(ArtError::Config(format!(
            "data.holdout `{holdout}` is not one of {stems:?}"
        )));
    }
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
    };
    for (file, stem) in files.iter().zip(&stems) {
        let scenes = load_ethucy_text(file, cfg.t_h, cfg.t_f, cfg.stride)?;
        if stem == holdout {
            splits.val.extend(scenes);
        } else {
            splits.train.extend(scenes);
        }
    }
    Ok(splits)
}

pub fn load_splits(cfg: &DataConfig) -> Result<Splits> {
    match &cfg.source {
        DataSource::Synthetic(kind) => Ok(Splits {
            train: synthetic_split(*kind, cfg, 0, cfg.train_scenes)?,
            val: synthetic_split(*kind, cfg, 1, cfg.val_scenes)?,
        }),
        DataSource::EthUcy { dir, holdout } => ethucy_splits(dir, holdout, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;

    #[test]
    fn synthetic_splits_are_disjoint_and_reproducible() {
        let cfg = RunConfig::parse("data.train_scenes = 5\ndata.val_scenes = 3\n").unwrap();
        let a = load_splits(&cfg.data).unwrap();
        let b = load_splits(&cfg.data).unwrap();
        assert_eq!(a.train.len(), 5);
        assert_eq!(a.val.len(), 3);
        assert_eq!(a.train, b.train);
        for v in &a.val {
            assert!(!a.train.contains(v));
        }
    }

    #[test]
    fn leave_one_file_out() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        for f in 0..6 {
            for id in 0..2 {
                text.push_str(&format!("{} {} {}.0 {}.5\n", f * 10, id, f, id));
            }
        }
        for name in ["a", "b", "c"] {
            std::fs::write(dir.path().join(format!("{name}.txt")), &text).unwrap();
        }
        let cfg = RunConfig::parse(&format!(
            "data.source = ethucy\ndata.ethucy_dir = {}\ndata.holdout = b\ndata.t_h = 2\ndata.t_f = 2\n",
            dir.path().display()
        ))
        .unwrap();
        let s = load_splits(&cfg.data).unwrap();
        assert_eq!(s.val.len(), 3);
        assert_eq!(s.train.len(), 6);
        let bad = cfg.with("data.holdout", "zzz").unwrap();
        assert!(matches!(load_splits(&bad.data), Err(ArtError::Config(_))));
        let missing = cfg.with("data.ethucy_dir", "/nonexistent/dir").unwrap();
        assert!(matches!(load_splits(&missing.data), Err(ArtError::Io { .. })));
    }
}

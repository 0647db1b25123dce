//! Binary checkpoint: `ARTC`, u32 version, u32 manifest length, UTF-8
//! manifest, then every parameter as little-endian f64 in manifest order.
//!
//! Manifest layout:
//!
//! ```text
//! format 1
//! [config]
//! model.d = 64
//! ...
//! [params]
//! targ.w_in 2x64 0
//! ...
//! ```
//!
//! Offsets are in bytes from the start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{ArtError, Result};
use crate::harness::config::{split_assignment, RunConfig};
use crate::model::ArtModel;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ARTC";
pub const VERSION: u32 = 1;

/// Keys whose disagreement makes a checkpoint unusable for a config.
pub const STRUCTURAL_KEYS: &[&str] = &["model.d", "model.heads", "model.layers", "model.k", "data.t_f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: ParamStore,
}

fn fmt_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

impl Checkpoint {
    pub fn from_model(model: &ArtModel, config: &RunConfig) -> Self {
        let config = config
            .to_text()
            .lines()
            .filter_map(split_assignment)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            config,
            params: model.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = format!("format {VERSION}\n[config]\n");
        for (k, v) in &self.config {
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        manifest.push_str("[params]\n");
        let mut offset = 0usize;
        for p in self.params.iter() {
            manifest.push_str(&format!("{} {} {}\n", p.name, fmt_shape(p.tensor.shape()), offset));
            offset += 8 * p.tensor.numel();
        }
        let mut out = Vec::with_capacity(12 + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for p in self.params.iter() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| ArtError::Format(format!("checkpoint: {msg}"));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing ARTC magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(ArtError::Incompatible {
                fields: vec![format!("format version {version} != {VERSION}")],
            });
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(12..12 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| bad("manifest is not UTF-8"))?;
        let payload = &bytes[12 + len..];

        let mut lines = manifest.lines();
        if lines.next() != Some(&*format!("format {VERSION}")) {
            return Err(bad("manifest must start with the format line"));
        }
        if lines.next() != Some("[config]") {
            return Err(bad("expected [config] section"));
        }
        let mut config = BTreeMap::new();
        let mut params = ParamStore::new();
        let mut in_params = false;
        let mut expected_offset = 0usize;
        for line in lines {
            if line == "[params]" {
                in_params = true;
                continue;
            }
            if !in_params {
                let (k, v) = split_assignment(line).ok_or_else(|| bad(&format!("bad config line `{line}`")))?;
                config.insert(k.to_string(), v.to_string());
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let [name, shape, offset] = fields[..] else {
                return Err(bad(&format!("bad parameter line `{line}`")));
            };
            let shape = parse_shape(shape).ok_or_else(|| bad(&format!("bad shape in `{line}`")))?;
            let offset: usize = offset.parse().map_err(|_| bad(&format!("bad offset in `{line}`")))?;
            if offset != expected_offset {
                return Err(bad(&format!("{name}: offset {offset}, expected {expected_offset}")));
            }
            let n: usize = shape.iter().product();
            let end = offset + 8 * n;
            let raw = payload
                .get(offset..end)
                .ok_or_else(|| bad(&format!("{name}: payload truncated")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::new(&shape, data)?)?;
            expected_offset = end;
        }
        if !in_params {
            return Err(bad("missing [params] section"));
        }
        if expected_offset != payload.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ArtError::io(format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| ArtError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ArtError::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Builds a model for `config`, listing every structural disagreement.
    pub fn into_model(self, config: &RunConfig) -> Result<ArtModel> {
        let mut fields = Vec::new();
        for key in STRUCTURAL_KEYS {
            let ours = config.get_raw(key).unwrap_or_default();
            match self.config.get(*key) {
                Some(theirs) if theirs == ours => {}
                Some(theirs) => fields.push(format!("{key}: checkpoint {theirs}, config {ours}")),
                None => fields.push(format!("{key}: absent from checkpoint")),
            }
        }
        if !fields.is_empty() {
            return Err(ArtError::Incompatible { fields });
        }
        ArtModel::from_params(config.model.clone(), self.params)
    }
}

//! Versioned JSON checkpoints: parameter name -> shape + flat values.
//!
//! `serde_json` is built with `float_roundtrip`, so every `f64` survives a
//! save/load cycle bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::param::Module;

pub const CHECKPOINT_FORMAT: &str = "swarm-sar-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Which model family wrote the checkpoint, e.g. `guidance-actor`.
    pub module: String,
    pub step: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn capture<M: Module + ?Sized>(module: &M, meta: CheckpointMeta) -> Self {
        let mut params = BTreeMap::new();
        module.visit_params(&mut |p| {
            params.insert(
                p.name.clone(),
                TensorRecord {
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                },
            );
        });
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta,
            params,
        }
    }

    /// Writes every stored tensor into `module`. All module parameters must
    /// be present with identical shapes.
    pub fn restore<M: Module + ?Sized>(&self, module: &mut M) -> Result<()> {
        self.check_header()?;
        let mut err = None;
        module.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match self.params.get(&p.name) {
                None => err = Some(NnError::Checkpoint(format!("missing parameter {}", p.name))),
                Some(rec) if rec.shape != p.value.shape() => {
                    err = Some(NnError::Checkpoint(format!(
                        "{}: shape {:?} in checkpoint, {:?} in model",
                        p.name,
                        rec.shape,
                        p.value.shape()
                    )))
                }
                Some(rec) => p.value.data_mut().copy_from_slice(&rec.data),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        ck.check_header()?;
        for (name, rec) in &ck.params {
            if rec.shape.iter().product::<usize>() != rec.data.len() {
                return Err(NnError::Checkpoint(format!("{name}: data length does not match shape")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

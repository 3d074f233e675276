//! Checkpoint files: a JSON manifest next to a little-endian f32 parameter
//! blob and, optionally, an f64 blob of Adam moments for exact resumption.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig};
use crate::nnet::{LayerSpec, NetArch, Networks};
use crate::rotmath::Representation;
use crate::schedule::ScheduleConfig;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "DIFFPOSE-CKPT/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: NetArch,
    pub representation: Representation,
    pub schedule: ScheduleConfig,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Seeds of the initialization and of every training segment, in order.
    pub seed_history: Vec<u64>,
    pub params: Vec<f64>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    arch: NetArch,
    representation: Representation,
    schedule: ScheduleConfig,
    step: usize,
    seed_history: Vec<u64>,
    param_count: usize,
    layers: Vec<LayerSpec>,
    params_file: String,
    optimizer_file: Option<String>,
}

fn sibling(path: &Path, suffix: &str) -> (PathBuf, String) {
    let name = format!(
        "{}{suffix}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    (path.with_file_name(&name), name)
}

fn read_blob(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn networks(&self) -> Result<Networks> {
        Networks::from_params(self.arch, self.params.clone())
    }

    pub fn check_compatible(&self, cfg: &TrainConfig, joints: usize) -> Result<()> {
        if self.representation != cfg.representation {
            return Err(Error::config("representation", "differs from the checkpoint"));
        }
        if self.schedule != cfg.schedule {
            return Err(Error::config("schedule", "differs from the checkpoint"));
        }
        if self.arch != cfg.arch(joints) {
            return Err(Error::config("arch", "checkpoint architecture does not match the data"));
        }
        if self.step > cfg.steps {
            return Err(Error::config(
                "steps",
                format!("checkpoint is already at step {}", self.step),
            ));
        }
        Ok(())
    }

    /// Writes `path` plus `path.params.bin` (and `path.adam.bin` when optimizer
    /// state is present).
    pub fn save(&self, path: &Path) -> Result<()> {
        let net = self.networks()?;
        let (params_path, params_file) = sibling(path, ".params.bin");
        let mut blob = Vec::with_capacity(self.params.len() * 4);
        for v in &self.params {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(&params_path, blob).map_err(|e| Error::io(&params_path, e))?;

        let optimizer_file = match &self.optimizer {
            Some(opt) => {
                let (opt_path, name) = sibling(path, ".adam.bin");
                let mut blob = Vec::with_capacity(16 * opt.m.len() + 8);
                blob.extend_from_slice(&(opt.step as u64).to_le_bytes());
                for v in opt.m.iter().chain(&opt.v) {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(&opt_path, blob).map_err(|e| Error::io(&opt_path, e))?;
                Some(name)
            }
            None => None,
        };

        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            arch: self.arch,
            representation: self.representation,
            schedule: self.schedule,
            step: self.step,
            seed_history: self.seed_history.clone(),
            param_count: self.params.len(),
            layers: net.params.layers,
            params_file,
            optimizer_file,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::format("format", format!("expected {CHECKPOINT_FORMAT}, found {}", m.format)));
        }
        let template = Networks::zeros(m.arch).map_err(|e| Error::format("arch", e.to_string()))?;
        if m.param_count != template.param_count() {
            return Err(Error::format(
                "param_count",
                format!("architecture has {} parameters, manifest declares {}", template.param_count(), m.param_count),
            ));
        }
        if m.layers != template.params.layers {
            return Err(Error::format("layers", "layer table does not match the architecture"));
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let blob = read_blob(&dir.join(&m.params_file))?;
        if blob.len() != 4 * m.param_count {
            return Err(Error::format(
                "params_file",
                format!("expected {} bytes, found {}", 4 * m.param_count, blob.len()),
            ));
        }
        let params: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("params_file", "non-finite parameter"));
        }
        let optimizer = match &m.optimizer_file {
            None => None,
            Some(name) => {
                let blob = read_blob(&dir.join(name))?;
                let n = m.param_count;
                if blob.len() != 8 + 16 * n {
                    return Err(Error::format("optimizer_file", format!("expected {} bytes", 8 + 16 * n)));
                }
                let step = u64::from_le_bytes(blob[..8].try_into().expect("8 bytes")) as usize;
                let vals: Vec<f64> = blob[8..]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Some(OptimizerState {
                    m: vals[..n].to_vec(),
                    v: vals[n..].to_vec(),
                    step,
                })
            }
        };
        Ok(Checkpoint {
            arch: m.arch,
            representation: m.representation,
            schedule: m.schedule,
            step: m.step,
            seed_history: m.seed_history,
            params,
            optimizer,
        })
    }
}

//! Checkpoint container (magic `RBCK`, version 1).
//!
//! The JSON header holds the model spec, completed epoch count, seed, LR
//! schedule, metric history, config hash, precision and the payload
//! sections. The payload is the concatenation of those sections, each a
//! little-endian array of the stored precision: `theta`, `phi`, `velocity`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Model, ModelSpec, ParamVector};
use crate::tensor::{Precision, Real};
use crate::train::metrics::EpochMetrics;
use crate::train::schedule::LrSchedule;

const MAGIC: &[u8; 4] = b"RBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState<T> {
    pub theta: ParamVector<T>,
    pub phi: ParamVector<T>,
    pub velocity: Vec<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
}

impl<T: Real> TrainingState<T> {
    pub fn fresh(theta: ParamVector<T>, seed: u64) -> Self {
        Self {
            phi: theta.clone(),
            velocity: vec![T::zero(); theta.len()],
            theta,
            epoch: 0,
            seed,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub state: TrainingState<T>,
    pub schedule: Option<LrSchedule>,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    epoch: usize,
    seed: u64,
    schedule: Option<LrSchedule>,
    metrics: Vec<EpochMetrics>,
    config_hash: String,
    precision: Precision,
    sections: Vec<(String, usize)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn model(&self) -> Result<Model<T>> {
        Model::from_params(self.spec.clone(), self.state.theta.clone())
    }

    pub fn wa_model(&self) -> Result<Model<T>> {
        Model::from_params(self.spec.clone(), self.state.phi.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let header = Header {
            spec: self.spec.clone(),
            epoch: s.epoch,
            seed: s.seed,
            schedule: self.schedule.clone(),
            metrics: s.history.clone(),
            config_hash: self.config_hash.clone(),
            precision: T::PRECISION,
            sections: vec![
                ("theta".into(), s.theta.len()),
                ("phi".into(), s.phi.len()),
                ("velocity".into(), s.velocity.len()),
            ],
        };
        let mut payload = Vec::with_capacity(3 * s.theta.len() * T::PRECISION.bytes());
        for v in s.theta.values().iter().chain(s.phi.values()).chain(&s.velocity) {
            v.write_le(&mut payload);
        }
        io::encode_container(MAGIC, CHECKPOINT_VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (h, payload): (Header, _) = io::decode_container(bytes, MAGIC, CHECKPOINT_VERSION, "checkpoint", path)?;
        let bad = |message: String| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            message,
        };
        if h.precision != T::PRECISION {
            return Err(bad(format!("stored as {:?}, requested {:?}", h.precision, T::PRECISION)));
        }
        let layout = h.spec.layout()?;
        let n = layout.last().map_or(0, |s| s.offset + s.len());
        let expect = vec![("theta".to_string(), n), ("phi".to_string(), n), ("velocity".to_string(), n)];
        if h.sections != expect {
            return Err(bad(format!("sections {:?} do not match spec ({n} parameters)", h.sections)));
        }
        let w = T::PRECISION.bytes();
        if payload.len() != 3 * n * w {
            return Err(bad(format!("payload is {} bytes, expected {}", payload.len(), 3 * n * w)));
        }
        let vals: Vec<T> = payload.chunks_exact(w).map(T::read_le).collect();
        let theta = ParamVector::new(layout.clone(), vals[..n].to_vec())?;
        let phi = ParamVector::new(layout, vals[n..2 * n].to_vec())?;
        Ok(Self {
            spec: h.spec,
            state: TrainingState {
                theta,
                phi,
                velocity: vals[2 * n..].to_vec(),
                epoch: h.epoch,
                seed: h.seed,
                history: h.metrics,
            },
            schedule: h.schedule,
            config_hash: h.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?, path)
    }
}

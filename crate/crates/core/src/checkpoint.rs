//! Trained-model files: a JSON manifest (hyperparameters plus parameter
//! names and shapes) and one little-endian f32 payload in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::TrainConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{ModelConfig, Neuron};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    version: u32,
    model: ModelConfig,
    train: TrainConfig,
    params: Vec<ParamEntry>,
    payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Builds the model described by the stored configuration.
    pub fn neuron(&self) -> Result<Neuron> {
        Neuron::new(self.model.clone())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        params: ckpt
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload: io::payload_name(path),
    };
    let values = ckpt.params.iter().flat_map(|(_, t)| t.data().iter().copied());
    io::write_bytes(&io::sibling(path, &manifest.payload), &io::encode_f32(values))?;
    io::write_json(path, &manifest)
}

/// Loads a checkpoint and checks that its parameters are exactly those the
/// stored configuration builds.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let m: CheckpointManifest = io::read_json(path)?;
    let payload_path = io::sibling(path, &m.payload);
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
        start: 0,
        end: 0,
    };
    if m.version != CHECKPOINT_VERSION {
        return Err(fmt(format!(
            "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            m.version
        )));
    }
    let expected = expected_params(&m.model)?;
    if expected != m.params {
        let diff = expected
            .iter()
            .zip(&m.params)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), m.params.len()));
        return Err(fmt(format!("parameters do not match the model configuration: {diff}")));
    }
    let total: usize = m.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let data = io::read_f32_payload(&payload_path, total)?;
    io::check_finite(&payload_path, &data)?;
    let mut params = ParamStore::new();
    let mut offset = 0;
    for p in &m.params {
        let n: usize = p.shape.iter().product();
        params.insert(
            p.name.clone(),
            Tensor::new(p.shape.clone(), data[offset..offset + n].to_vec())?,
        )?;
        offset += n;
    }
    Ok(Checkpoint {
        model: m.model,
        train: m.train,
        params,
    })
}

/// Parameter layout the configuration produces, in store order.
pub fn expected_params(config: &ModelConfig) -> Result<Vec<ParamEntry>> {
    let model = Neuron::new(config.clone())?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let store = model.init_params::<f32>(&mut rng)?;
    Ok(store
        .iter()
        .map(|(name, t)| ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect())
}

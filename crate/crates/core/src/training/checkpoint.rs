//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "ATMP" | version u32 | crc32(payload) u32 | payload length u64 | payload
//! payload = header length u32 | header JSON
//!         | tensor count u32 | { name length u32 | name | rank u32 | dims u64… | f32… }…
//! ```
//!
//! Tensors are the model parameters (`model/<name>`) followed by Adam's
//! first and second moments (`adam_m/<name>`, `adam_v/<name>`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{derive_seed, init_rng, Task, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, CnnModel, Params, SequenceModel, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"ATMP";
const PREAMBLE: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(CnnModel<f32>),
    Sequence(SequenceModel<f32>),
}

impl Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        match self {
            Model::Single(m) => m.named_tensors(),
            Model::Sequence(m) => m.named_tensors(),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f32>)) {
        match self {
            Model::Single(m) => m.visit_params_mut(f),
            Model::Sequence(m) => m.visit_params_mut(f),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Single(m) => m.param_count(),
            Model::Sequence(m) => m.param_count(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Single(_) => Task::Single,
            Model::Sequence(_) => Task::Sequence,
        }
    }
}

/// Everything needed to evaluate a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean training loss of every completed epoch.
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    adam: AdamConfig,
    adam_step: u64,
    /// Seed of the shuffle stream for the next epoch; all rng streams are
    /// derived from the config seed and the epoch counter.
    rng_state: u64,
    losses: Vec<f64>,
}

impl Checkpoint {
    /// Freshly initialized model for `task` with zeroed optimizer state.
    pub fn init(mut config: TrainConfig, task: Task) -> Result<Self> {
        config.task = task;
        config.validate()?;
        let model = build_model(&config)?;
        let adam = match &model {
            Model::Single(m) => AdamState::new(config.adam(), m),
            Model::Sequence(m) => AdamState::new(config.adam(), m),
        };
        Ok(Self {
            config,
            model,
            adam,
            epoch: 0,
            losses: Vec::new(),
        })
    }

    pub fn task(&self) -> Task {
        self.model.task()
    }

    /// CRC-32 over every parameter's bytes, in parameter order.
    pub fn param_checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (_, t) in self.model.named_tensors() {
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    pub fn single_model(&self) -> Result<&CnnModel<f32>> {
        match &self.model {
            Model::Single(m) => Ok(m),
            Model::Sequence(_) => Err(Error::InvalidInput("checkpoint holds a sequence model".into())),
        }
    }

    pub fn sequence_model(&self) -> Result<&SequenceModel<f32>> {
        match &self.model {
            Model::Sequence(m) => Ok(m),
            Model::Single(_) => Err(Error::InvalidInput("checkpoint holds a single-image model".into())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            adam: self.adam.config,
            adam_step: self.adam.step,
            rng_state: derive_seed(&[self.config.seed, super::STREAM_SHUFFLE, self.epoch as u64]),
            losses: self.losses.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let named = self.model.named_tensors();
        if named.len() != self.adam.m.len() || named.len() != self.adam.v.len() {
            return Err(Error::Shape("optimizer state does not match the model".into()));
        }
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::with_capacity(3 * named.len());
        for (prefix, source) in [("adam_m", &self.adam.m), ("adam_v", &self.adam.v)] {
            for ((name, _), t) in named.iter().zip(source.iter()) {
                tensors.push((format!("{prefix}/{name}"), t));
            }
        }
        let mut all: Vec<(String, &Tensor<f32>)> = named.iter().map(|(n, t)| (format!("model/{n}"), *t)).collect();
        all.extend(tensors);

        let mut payload = Vec::new();
        put_u32(&mut payload, json.len() as u32);
        payload.extend_from_slice(&json);
        put_u32(&mut payload, all.len() as u32);
        for (name, t) in &all {
            put_u32(&mut payload, name.len() as u32);
            payload.extend_from_slice(name.as_bytes());
            put_u32(&mut payload, t.shape().len() as u32);
            for &d in t.shape() {
                payload.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut out = Vec::with_capacity(PREAMBLE + payload.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, crc32fast::hash(&payload));
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let crc = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let payload = &bytes[PREAMBLE..];
        if payload.len() as u64 != len {
            return Err(Error::Integrity(format!(
                "payload is {} bytes, header promises {len}",
                payload.len()
            )));
        }
        if crc32fast::hash(payload) != crc {
            return Err(Error::Integrity("checksum mismatch".into()));
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let json_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if r.pos != payload.len() {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }

        let config = header.config;
        config.validate()?;
        let mut model = build_model(&config)?;
        let mut take = |key: String, expected: &[usize]| -> Result<Tensor<f32>> {
            let t = tensors
                .remove(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor '{key}'")))?;
            if t.shape() != expected {
                return Err(Error::Shape(format!(
                    "tensor '{key}' has shape {:?}, model expects {expected:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let mut failure = None;
        let mut names = Vec::new();
        model.visit_mut(&mut |name, p| {
            names.push((name.to_string(), p.shape().to_vec()));
            match take(format!("model/{name}"), p.shape()) {
                Ok(t) => *p = t,
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let mut adam = AdamState::for_shapes(header.adam, &[]);
        adam.step = header.adam_step;
        for (name, shape) in &names {
            adam.m.push(take(format!("adam_m/{name}"), shape)?);
            adam.v.push(take(format!("adam_v/{name}"), shape)?);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor '{extra}'")));
        }
        Ok(Self {
            config,
            model,
            adam,
            epoch: header.epoch,
            losses: header.losses,
        })
    }
}

fn build_model(config: &TrainConfig) -> Result<Model> {
    let mut rng = init_rng(config.seed);
    let spec = config.cnn_spec();
    Ok(match config.task {
        Task::Single => Model::Single(CnnModel::new(spec, &mut rng)?),
        Task::Sequence => Model::Sequence(SequenceModel::new(spec, config.lstm_hidden, config.direction, &mut rng)?),
    })
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint payload ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

/// Reads and verifies a checkpoint; nothing is returned unless the whole
/// file checks out.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

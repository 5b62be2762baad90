//! Checkpoint files.
//!
//! Layout: magic `VOXSRCK1`, a version byte, a `u32` length and that many
//! bytes of JSON header (kind, config echo, counters), a `u32` record count,
//! then per record a `u32`-prefixed UTF-8 name, a rank byte, `rank` `u32`
//! dimensions and the little-endian `f32` data. All integers little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use voxsr_core::nn::{Network, VggConfig};
use voxsr_core::train::{Snapshot, TrainConfig, VggTrainConfig};
use voxsr_core::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VOXSRCK1";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Model(#[from] voxsr_core::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Header {
    Gan { config: Box<TrainConfig>, step: u64, adam_steps_g: u64, adam_steps_d: Option<u64> },
    Vgg { config: VggConfig, train: VggTrainConfig },
}

/// A frozen classifier for the perceptual term.
#[derive(Clone, Debug, PartialEq)]
pub struct VggCheckpoint {
    pub config: VggConfig,
    pub train: VggTrainConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl VggCheckpoint {
    pub fn from_network(net: &Network<f32>, train: &VggTrainConfig) -> Self {
        VggCheckpoint { config: train.vgg.clone(), train: train.clone(), tensors: net.state() }
    }

    pub fn network(&self) -> Result<Network<f32>, CheckpointError> {
        let mut net = Network::vgg3d(&self.config)?;
        net.load_state(&self.tensors)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Gan(Snapshot),
    Vgg(VggCheckpoint),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Gan(_) => "gan",
            Checkpoint::Vgg(_) => "vgg",
        }
    }

    pub fn into_gan(self) -> Result<Snapshot, CheckpointError> {
        match self {
            Checkpoint::Gan(s) => Ok(s),
            other => Err(CheckpointError::WrongKind { expected: "gan", found: other.kind() }),
        }
    }

    pub fn into_vgg(self) -> Result<VggCheckpoint, CheckpointError> {
        match self {
            Checkpoint::Vgg(v) => Ok(v),
            other => Err(CheckpointError::WrongKind { expected: "vgg", found: other.kind() }),
        }
    }

    fn parts(&self) -> (Header, &[(String, Tensor<f32>)]) {
        match self {
            Checkpoint::Gan(s) => (
                Header::Gan {
                    config: Box::new(s.config.clone()),
                    step: s.step,
                    adam_steps_g: s.adam_steps_g,
                    adam_steps_d: s.adam_steps_d,
                },
                &s.tensors,
            ),
            Checkpoint::Vgg(v) => (Header::Vgg { config: v.config.clone(), train: v.train.clone() }, &v.tensors),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (header, tensors) = self.parts();
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        put_u32(&mut out, tensors.len());
        for (name, t) in tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            let dims = t.shape().0;
            out.push(dims.len() as u8);
            for d in dims {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic: not a checkpoint".into());
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| format!("malformed header: {e}"))?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8".to_string())?;
            let rank = r.take(1)?[0] as usize;
            if rank != 5 {
                return Err(format!("tensor {name} has rank {rank}, expected 5"));
            }
            let mut dims = [0usize; 5];
            for d in &mut dims {
                *d = r.u32()?;
            }
            let numel = dims.iter().try_fold(4usize, |a, d| a.checked_mul(*d)).ok_or(format!("tensor {name} is too large"))?;
            let data = r.take(numel)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let shape = Shape(dims);
            tensors.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes after the last record", bytes.len() - r.pos));
        }
        Ok(match header {
            Header::Gan { config, step, adam_steps_g, adam_steps_d } => {
                Checkpoint::Gan(Snapshot { config: *config, step, adam_steps_g, adam_steps_d, tensors })
            }
            Header::Vgg { config, train } => Checkpoint::Vgg(VggCheckpoint { config, train, tensors }),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
        Checkpoint::from_bytes(&bytes).map_err(|message| CheckpointError::Format { path: path.into(), message })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

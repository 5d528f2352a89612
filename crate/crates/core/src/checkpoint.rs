//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model config, epoch, optimizer scalars, tensor names and shapes),
//! then every parameter's values as little-endian `f64`, followed by the
//! optimizer's first and second moments in the same order when present.
//! Values are stored bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, ParamStore, Rng, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"KGZSLCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorHeader>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_values(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_values(bytes: &[u8], pos: &mut usize, shape: &[usize], what: &str) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let end = *pos + 8 * n;
    if end > bytes.len() {
        return Err(bad(format!("truncated data for tensor `{what}`")));
    }
    let data = bytes[*pos..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    *pos = end;
    Tensor::new(shape.to_vec(), data)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|a| OptimizerHeader {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                epsilon: a.epsilon,
                step: a.step,
            }),
            tensors: self
                .params
                .iter()
                .map(|p| TensorHeader {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_values() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            write_values(&mut out, &p.value);
        }
        if let Some(adam) = &self.optimizer {
            if adam.first_moment.len() != self.params.len() {
                return Err(bad("optimizer state does not match the parameter count"));
            }
            for m in adam.first_moment.iter().chain(&adam.second_moment) {
                write_values(&mut out, m);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let mut pos = 20 + len;
        if pos > bytes.len() {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[20..pos]).map_err(|e| bad(format!("header: {e}")))?;
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let value = read_values(bytes, &mut pos, &t.shape, &t.name)?;
            params.add(t.name.clone(), value)?;
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let mut moments = Vec::with_capacity(2 * header.tensors.len());
                for t in header.tensors.iter().chain(&header.tensors) {
                    moments.push(read_values(bytes, &mut pos, &t.shape, &t.name)?);
                }
                let second_moment = moments.split_off(header.tensors.len());
                Some(Adam {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    epsilon: o.epsilon,
                    step: o.step,
                    first_moment: moments,
                    second_moment,
                })
            }
            None => None,
        };
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model for `expected` and checks that every tensor is
    /// present with the right shape; the first mismatch is named.
    pub fn restore(&self, expected: &ModelConfig) -> Result<(Model, ParamStore)> {
        let (model, fresh) = Model::new(expected.clone(), &mut Rng::new(0))?;
        for p in fresh.iter() {
            let id = self
                .params
                .id(&p.name)
                .ok_or_else(|| bad(format!("tensor `{}` missing from checkpoint", p.name)))?;
            let got = self.params.get(id).value.shape();
            if got != p.value.shape() {
                return Err(bad(format!(
                    "tensor `{}`: checkpoint shape {:?}, model expects {:?}",
                    p.name,
                    got,
                    p.value.shape()
                )));
            }
        }
        if let Some(extra) = self.params.iter().find(|p| fresh.id(&p.name).is_none()) {
            return Err(bad(format!("checkpoint tensor `{}` is not used by the model", extra.name)));
        }
        let mut store = fresh;
        for p in store.iter_mut() {
            let id = self.params.id(&p.name).expect("checked");
            p.value = self.params.get(id).value.clone();
        }
        Ok((model, store))
    }
}

//! Checkpoint container.
//!
//! Layout: the 8-byte magic `DSSCKPT1`, the manifest length as a little-endian `u64`, a JSON
//! manifest, then every tensor as little-endian raw floats at the offsets the manifest lists
//! (relative to the start of the data section).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::AdamState;
use crate::tensor::{Precision, Scalar, Tensor};
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"DSSCKPT1";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    Buffer,
    Ema,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub precision: Precision,
    pub optimizer_step: u64,
    /// Configuration that produced the checkpoint.
    pub config: serde_json::Value,
    pub entries: Vec<Entry>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub store: ParamStore<T>,
    pub ema: BTreeMap<String, Tensor<T>>,
    pub adam: AdamState<T>,
    pub config: serde_json::Value,
    pub precision: Precision,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_state(state: &TrainState<T>, config: serde_json::Value) -> Self {
        Self {
            store: state.store.clone(),
            ema: state.ema.clone(),
            adam: state.adam.clone(),
            config,
            precision: T::PRECISION,
        }
    }

    pub fn into_state(self) -> TrainState<T> {
        TrainState {
            store: self.store,
            adam: self.adam,
            ema: self.ema,
        }
    }

    /// Parameters to evaluate with: EMA shadows when requested and present.
    pub fn eval_store(&self, use_ema: bool) -> Result<ParamStore<T>> {
        if use_ema && !self.ema.is_empty() {
            crate::optim::with_shadow(&self.store, &self.ema)
        } else {
            Ok(self.store.clone())
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let width = T::PRECISION.width() as u64;
        let tensors: Vec<(&String, EntryKind, &Tensor<T>)> = self
            .store
            .params()
            .map(|(n, t)| (n, EntryKind::Param, t))
            .chain(self.store.buffers().map(|(n, t)| (n, EntryKind::Buffer, t)))
            .chain(self.ema.iter().map(|(n, t)| (n, EntryKind::Ema, t)))
            .chain(self.adam.m.iter().map(|(n, t)| (n, EntryKind::AdamM, t)))
            .chain(self.adam.v.iter().map(|(n, t)| (n, EntryKind::AdamV, t)))
            .collect();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for &(name, kind, t) in &tensors {
            let len = t.len() as u64;
            entries.push(Entry {
                name: name.clone(),
                kind,
                shape: t.shape().to_vec(),
                offset,
                len,
            });
            offset += len * width;
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            precision: T::PRECISION,
            optimizer_step: self.adam.step,
            config: self.config.clone(),
            entries,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(format!("encoding manifest: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Decodes a checkpoint written in any precision, converting values to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let manifest = read_manifest(bytes)?;
        let header = 16 + manifest_len(bytes)?;
        let data = &bytes[header..];
        let width = manifest.precision.width();
        let mut ck = Checkpoint {
            store: ParamStore::new(),
            ema: BTreeMap::new(),
            adam: AdamState::new(),
            config: manifest.config.clone(),
            precision: manifest.precision,
        };
        ck.adam.step = manifest.optimizer_step;
        for e in &manifest.entries {
            let expect: usize = e.shape.iter().product();
            if expect as u64 != e.len {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` has shape {:?} but length {}",
                    e.name, e.shape, e.len
                )));
            }
            let start = usize::try_from(e.offset).map_err(|_| Error::Checkpoint("offset overflow".into()))?;
            let end = start + expect * width;
            let raw = data.get(start..end).ok_or_else(|| {
                Error::Checkpoint(format!("entry `{}` extends past the end of the file", e.name))
            })?;
            let values: Vec<T> = raw
                .chunks_exact(width)
                .map(|c| match manifest.precision {
                    Precision::F32 => T::from_f64(f32::read_le(c) as f64),
                    Precision::F64 => T::from_f64(f64::read_le(c)),
                })
                .collect();
            let t = Tensor::from_vec(e.shape.clone(), values)?;
            match e.kind {
                EntryKind::Param => ck.store.insert(e.name.clone(), t),
                EntryKind::Buffer => ck.store.insert_buffer(e.name.clone(), t),
                EntryKind::Ema => {
                    ck.ema.insert(e.name.clone(), t);
                }
                EntryKind::AdamM => {
                    ck.adam.m.insert(e.name.clone(), t);
                }
                EntryKind::AdamV => {
                    ck.adam.v.insert(e.name.clone(), t);
                }
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks names and shapes against a freshly built model, listing every discrepancy.
    pub fn audit(&self, template: &ParamStore<f64>) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in template.params() {
            match self.store.get(name) {
                Ok(have) if have.shape() != t.shape() => problems.push(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    have.shape(),
                    t.shape()
                )),
                Ok(_) => {}
                Err(_) => problems.push(format!("`{name}` missing")),
            }
        }
        for (name, _) in self.store.params() {
            if !template.contains(name) {
                problems.push(format!("`{name}` not part of the model"));
            }
        }
        for (name, t) in template.buffers() {
            match self.store.buffer(name) {
                Ok(have) if have.shape() != t.shape() => problems.push(format!("buffer `{name}` has wrong shape")),
                Ok(_) => {}
                Err(_) => problems.push(format!("buffer `{name}` missing")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint does not match the model: {}",
                problems.join("; ")
            )))
        }
    }
}

fn manifest_len(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("manifest length overflow".into()))?;
    if 16 + len > bytes.len() {
        return Err(Error::Checkpoint("truncated manifest".into()));
    }
    Ok(len)
}

/// Parses just the manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let len = manifest_len(bytes)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..16 + len]).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> TrainState<f32> {
        let mut store = ParamStore::new();
        store.insert("a.weight", Tensor::from_fn(vec![2, 3], |i| i as f32 * 0.1 - 0.25));
        store.insert("b.bias", Tensor::from_vec(vec![1], vec![f32::MIN_POSITIVE]).unwrap());
        store.insert_buffer("n.running_var", Tensor::ones(vec![4]));
        let mut st = TrainState::new(store);
        st.adam.step = 7;
        st.adam.m.insert("a.weight".into(), Tensor::full(vec![2, 3], 1e-7));
        st.adam.v.insert("a.weight".into(), Tensor::full(vec![2, 3], 3e-9));
        st
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::from_state(&sample_state(), serde_json::json!({"seed": 7}));
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::from_state(&sample_state(), serde_json::Value::Null).to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..20]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn audit_lists_offending_parameters() {
        let ck = Checkpoint::from_state(&sample_state(), serde_json::Value::Null);
        let mut template = ParamStore::<f64>::new();
        template.insert("a.weight", Tensor::zeros(vec![3, 2]));
        template.insert("c.weight", Tensor::zeros(vec![1]));
        let msg = ck.audit(&template).unwrap_err().to_string();
        assert!(msg.contains("a.weight") && msg.contains("c.weight") && msg.contains("b.bias"));
    }
}

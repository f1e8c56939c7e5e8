//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "LAMECKPT"
//! bytes 8..12   u32 format version (1)
//! bytes 12..20  u64 header length H
//! next H bytes  UTF-8 JSON header
//! rest          f64 values, little-endian, tensors back to back
//! ```
//!
//! The header holds the model config, the vocabulary hash, the labels in
//! model order, and one entry per tensor: name, group, shape, and the element
//! offset and length of its values in the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::data::LabelInfo;
use crate::error::{LameError, Result};
use crate::model::LameModel;
use crate::params::ParamGroup;
use crate::tokenizer::Vocab;

pub const MAGIC: &[u8; 8] = b"LAMECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub labels: Vec<LabelInfo>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub model: LameModel,
    pub vocab_hash: String,
    pub labels: Vec<LabelInfo>,
    /// SHA-256 of the file bytes.
    pub hash: String,
}

impl LoadedCheckpoint {
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let h = vocab.hash();
        if h != self.vocab_hash {
            return Err(LameError::compat(format!(
                "vocabulary hash {h} does not match checkpoint vocabulary {}",
                self.vocab_hash
            )));
        }
        Ok(())
    }

    pub fn check_labels(&self, labels: &[LabelInfo]) -> Result<()> {
        let ours: Vec<&str> = self.labels.iter().map(|l| l.id.as_str()).collect();
        let theirs: Vec<&str> = labels.iter().map(|l| l.id.as_str()).collect();
        if ours != theirs {
            return Err(LameError::compat(format!("checkpoint labels {ours:?} differ from {theirs:?}")));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of a model config.
pub fn config_hash(config: &ModelConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("serializable config").as_bytes())
}

pub fn encode_checkpoint(model: &LameModel, vocab_hash: &str, labels: &[LabelInfo]) -> Result<Vec<u8>> {
    if labels.len() != model.config.num_labels {
        return Err(LameError::contract(format!(
            "{} labels for a model with {} outputs",
            labels.len(),
            model.config.num_labels
        )));
    }
    let mut tensors = Vec::with_capacity(model.store.len());
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        let len = p.value.numel();
        tensors.push(TensorEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
            offset,
            len,
        });
        offset += len;
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        labels: labels.to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| LameError::contract(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes the checkpoint and returns its hash.
pub fn save_checkpoint(path: &Path, model: &LameModel, vocab_hash: &str, labels: &[LabelInfo]) -> Result<String> {
    let bytes = encode_checkpoint(model, vocab_hash, labels)?;
    std::fs::write(path, &bytes).map_err(|e| LameError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn bad(msg: impl std::fmt::Display) -> LameError {
    LameError::compat(format!("malformed checkpoint: {msg}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LameError::compat(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..data_start]).map_err(bad)?;
    let data = &bytes[data_start..];
    if data.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let mut model = LameModel::new(header.config.clone(), 0)?;
    if header.tensors.len() != model.store.len() {
        return Err(LameError::compat(format!(
            "checkpoint has {} tensors, the configured model expects {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for entry in &header.tensors {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| LameError::compat(format!("unexpected tensor {}", entry.name)))?;
        let param = model.store.get_mut(id);
        if param.value.shape() != entry.shape.as_slice() || param.group != entry.group {
            return Err(LameError::compat(format!(
                "tensor {} is {:?} ({}), expected {:?} ({})",
                entry.name,
                entry.shape,
                entry.group.as_str(),
                param.value.shape(),
                param.group.as_str()
            )));
        }
        let src = entry
            .offset
            .checked_add(entry.len)
            .filter(|&end| end <= values.len() && entry.len == param.value.numel())
            .map(|end| &values[entry.offset..end])
            .ok_or_else(|| bad(format!("tensor {} lies outside the data section", entry.name)))?;
        param.value.data_mut().copy_from_slice(src);
    }
    if header.labels.len() != header.config.num_labels {
        return Err(bad("label list does not match num_labels"));
    }
    Ok(LoadedCheckpoint {
        model,
        vocab_hash: header.vocab_hash,
        labels: header.labels,
        hash: sha256_hex(bytes),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| LameError::io(path, e))?;
    decode_checkpoint(&bytes)
}

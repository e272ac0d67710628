//! Versioned checkpoint files: a plain-text header (magic + version line,
//! then a single-line JSON manifest naming every parameter with its shape
//! and byte offset) followed by a raw little-endian f32 blob holding
//! parameter values and Adam moments. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{AdamConfig, AdamState};
use crate::tokenizer::Vocab;
use crate::training::Trainer;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC_PREFIX: &str = "radsum-checkpoint v";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    name: String,
    t: u64,
    m_offset: u64,
    v_offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    step: u64,
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vec<String>,
    params: Vec<ParamEntry>,
    adam: Vec<AdamEntry>,
    blob_len: u64,
}

fn push_f32s(blob: &mut Vec<u8>, values: &[f32]) -> u64 {
    let offset = blob.len() as u64;
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    offset
}

fn read_f32s(blob: &[u8], offset: u64, count: usize, path: &str) -> Result<Vec<f32>> {
    let start = offset as usize;
    let end = start + count * 4;
    if end > blob.len() {
        return Err(Error::CheckpointFormat {
            path: path.to_string(),
            reason: format!(
                "blob truncated: need {end} bytes, have {}",
                blob.len()
            ),
        });
    }
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Serialize the full training state. Parameters are written in name order,
/// so identical states produce byte-identical files.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut blob: Vec<u8> = Vec::new();
    let mut params = Vec::new();
    for (name, p) in trainer.model.params.iter() {
        let offset = push_f32s(&mut blob, &p.data);
        params.push(ParamEntry {
            name: name.clone(),
            shape: p.shape.clone(),
            offset,
        });
    }
    let mut adam = Vec::new();
    for (name, state) in &trainer.adam {
        let m_offset = push_f32s(&mut blob, &state.m);
        let v_offset = push_f32s(&mut blob, &state.v);
        adam.push(AdamEntry {
            name: name.clone(),
            t: state.t,
            m_offset,
            v_offset,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        step: trainer.step,
        model: trainer.model.cfg,
        train: trainer.train_cfg,
        vocab: trainer.vocab.tokens().to_vec(),
        params,
        adam,
        blob_len: blob.len() as u64,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{MAGIC_PREFIX}{CHECKPOINT_VERSION}")?;
    serde_json::to_writer(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    file.write_all(&blob)?;
    file.flush()?;
    Ok(())
}

/// Deserialize a checkpoint into a ready-to-train (or evaluate) state.
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let format_err = |reason: &str| Error::CheckpointFormat {
        path: display.clone(),
        reason: reason.to_string(),
    };

    let magic_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("missing header line"))?;
    let magic = std::str::from_utf8(&bytes[..magic_end])
        .map_err(|_| format_err("header is not utf-8"))?;
    let version_str = magic
        .strip_prefix(MAGIC_PREFIX)
        .ok_or_else(|| format_err("not a radsum checkpoint"))?;
    match version_str.parse::<u32>() {
        Ok(v) if v == CHECKPOINT_VERSION => {}
        _ => {
            return Err(Error::CheckpointVersion {
                path: display,
                found: version_str.to_string(),
                expected: CHECKPOINT_VERSION,
            })
        }
    }

    let rest = &bytes[magic_end + 1..];
    let manifest_end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("missing manifest line"))?;
    let manifest: Manifest = serde_json::from_slice(&rest[..manifest_end]).map_err(|e| {
        Error::CheckpointFormat {
            path: display.clone(),
            reason: format!("manifest: {e}"),
        }
    })?;
    let blob = &rest[manifest_end + 1..];
    if blob.len() as u64 != manifest.blob_len {
        return Err(format_err(&format!(
            "blob length {} does not match manifest {}",
            blob.len(),
            manifest.blob_len
        )));
    }

    let vocab = Vocab::from_token_list(manifest.vocab)?;
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let numel: usize = entry.shape.iter().product();
        let data = read_f32s(blob, entry.offset, numel, &display)?;
        store.insert(entry.name.clone(), data, entry.shape.clone());
    }

    // The embedding tables must agree with the embedded vocabulary.
    let tok_rows = store.get("te.tok")?.shape[0];
    if tok_rows != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "token embedding has {tok_rows} rows but the vocabulary has {} entries",
            vocab.len()
        )));
    }

    let adam_cfg = AdamConfig {
        lr: manifest.train.lr,
        ..AdamConfig::default()
    };
    let mut adam = BTreeMap::new();
    for entry in &manifest.adam {
        let numel = store.get(&entry.name)?.numel();
        let m = read_f32s(blob, entry.m_offset, numel, &display)?;
        let v = read_f32s(blob, entry.v_offset, numel, &display)?;
        adam.insert(
            entry.name.clone(),
            AdamState {
                m,
                v,
                t: entry.t,
                cfg: adam_cfg,
            },
        );
    }

    let model = Model {
        cfg: manifest.model,
        vocab_size: vocab.len(),
        params: store,
    };
    model.cfg.validate()?;
    Ok(Trainer {
        model,
        train_cfg: manifest.train,
        vocab,
        adam,
        step: manifest.step,
    })
}

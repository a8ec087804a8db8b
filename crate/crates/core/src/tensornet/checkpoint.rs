//! On-disk parameter checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` and `params.bin`. The
//! manifest lists every store and block with its shape; `params.bin` holds
//! the block values as little-endian `f64` in manifest order, each value
//! followed by its two Adam moments when optimizer state is included.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StoreEntry {
    pub name: String,
    pub step: u64,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub optimizer_state: bool,
    pub stores: Vec<StoreEntry>,
    /// Free-form metadata owned by the caller (architecture, counters).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn store(&self, name: &str) -> Option<&StoreEntry> {
        self.stores.iter().find(|s| s.name == name)
    }
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_into(r: &mut impl Read, out: &mut [f64]) -> std::io::Result<()> {
    let mut buf = [0u8; 8];
    for v in out {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

pub fn save(
    dir: &Path,
    stores: &[(&str, &ParameterStore)],
    optimizer_state: bool,
    extra: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        optimizer_state,
        stores: stores
            .iter()
            .map(|(name, s)| StoreEntry {
                name: name.to_string(),
                step: s.step,
                blocks: s
                    .blocks()
                    .iter()
                    .map(|b| BlockEntry {
                        name: b.name.clone(),
                        shape: b.value.shape().to_vec(),
                        trainable: b.trainable,
                    })
                    .collect(),
            })
            .collect(),
        extra,
    };
    let mut w = BufWriter::new(File::create(dir.join(PARAMS_FILE))?);
    for (_, s) in stores {
        for b in s.blocks() {
            write_tensor(&mut w, &b.value)?;
            if optimizer_state {
                write_tensor(&mut w, &b.m)?;
                write_tensor(&mut w, &b.v)?;
            }
        }
    }
    w.flush()?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", m.format_version)));
    }
    Ok(m)
}

/// Loads values (and moments when present) into stores whose layout must
/// match the manifest exactly. Returns the manifest.
pub fn load_into(dir: &Path, stores: &mut [(&str, &mut ParameterStore)]) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    for (name, store) in stores.iter() {
        let entry = manifest
            .store(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint has no store {name}")))?;
        let blocks = store.blocks();
        if entry.blocks.len() != blocks.len() {
            return Err(Error::CheckpointMismatch(format!(
                "store {name}: checkpoint has {} blocks, network has {}",
                entry.blocks.len(),
                blocks.len()
            )));
        }
        for (e, b) in entry.blocks.iter().zip(blocks) {
            if e.name != b.name || e.shape != b.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "store {name}: block {} {:?} vs {} {:?}",
                    e.name,
                    e.shape,
                    b.name,
                    b.value.shape()
                )));
            }
        }
    }
    let path = dir.join(PARAMS_FILE);
    let mut r = BufReader::new(File::open(&path)?);
    let mut skip = Vec::new();
    for entry in &manifest.stores {
        let target = stores.iter_mut().find(|(n, _)| *n == entry.name);
        let per_block = if manifest.optimizer_state { 3 } else { 1 };
        match target {
            Some((_, store)) => {
                store.step = entry.step;
                for b in store.blocks_mut() {
                    read_into(&mut r, Arc::make_mut(&mut b.value).data_mut())
                        .map_err(|e| Error::format(&path, e.to_string()))?;
                    if manifest.optimizer_state {
                        read_into(&mut r, b.m.data_mut()).map_err(|e| Error::format(&path, e.to_string()))?;
                        read_into(&mut r, b.v.data_mut()).map_err(|e| Error::format(&path, e.to_string()))?;
                    }
                }
            }
            None => {
                for e in &entry.blocks {
                    skip.resize(per_block * e.shape.iter().product::<usize>(), 0.0);
                    read_into(&mut r, &mut skip).map_err(|e| Error::format(&path, e.to_string()))?;
                }
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(&path, format!("{} trailing bytes", rest.len())));
    }
    Ok(manifest)
}

//! Binary checkpoint: magic, version, length-prefixed JSON header, then every
//! parameter as little-endian `f32` in header order.
//!
//! ```text
//! "HVLACK\n" | u32 version | u64 header_len | header JSON | f32 blob
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ExpertConfig, ExpertParams, Variant};
use super::tape::{Mat, ParamStore};
use super::FlowError;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"HVLACK\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub seed: u64,
    pub step: usize,
    /// Pipeline stage that produced the checkpoint.
    pub stage: String,
    pub config: ExpertConfig,
    pub shapes: Vec<TensorShape>,
}

fn bad(msg: impl Into<String>) -> FlowError {
    FlowError::Checkpoint(msg.into())
}

pub fn write_checkpoint(w: &mut impl Write, params: &ExpertParams, seed: u64, step: usize, stage: &str) -> Result<(), FlowError> {
    let header = CheckpointHeader {
        variant: params.config.variant,
        seed,
        step,
        stage: stage.to_string(),
        config: params.config.clone(),
        shapes: params.store.iter().map(|(name, m)| TensorShape { name: name.to_string(), rows: m.nrows(), cols: m.ncols() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut blob = Vec::with_capacity(params.store.scalar_count() * 4);
    for (_, m) in params.store.iter() {
        for v in m.iter() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ExpertParams, CheckpointHeader), FlowError> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 26 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if header.variant != header.config.variant {
        return Err(bad("variant disagrees with config"));
    }
    let mut store = ParamStore::new();
    for shape in &header.shapes {
        let mut bytes = vec![0u8; shape.rows * shape.cols * 4];
        r.read_exact(&mut bytes).map_err(|_| bad(format!("truncated tensor {}", shape.name)))?;
        let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        let m = Mat::from_shape_vec((shape.rows, shape.cols), values).map_err(|e| bad(e.to_string()))?;
        store.insert(shape.name.clone(), m);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    // the shape table must match what the config builds
    let reference = ExpertParams::init(header.config.clone(), 0)?;
    let expected: Vec<(&str, (usize, usize))> = reference.store.iter().map(|(n, m)| (n, m.dim())).collect();
    let found: Vec<(&str, (usize, usize))> = store.iter().map(|(n, m)| (n, m.dim())).collect();
    if expected != found {
        return Err(bad("shape table does not match config"));
    }
    Ok((ExpertParams { config: header.config.clone(), store }, header))
}

pub fn save_checkpoint(path: &Path, params: &ExpertParams, seed: u64, step: usize, stage: &str) -> Result<(), FlowError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, seed, step, stage)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ExpertParams, CheckpointHeader), FlowError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

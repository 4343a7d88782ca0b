//! Episode dataset file.
//!
//! ```text
//! PSI0DS\n
//! <format version>\n
//! {"episode_count":N,"blob_len":B}\n
//! {episode header}\n            x N   (JSON Lines)
//! <B bytes: little-endian f32, row-major [frame x channel]>
//! ```
//!
//! Each frame row holds the action channels in layout order, then the 32 state
//! channels, then the context features. Header offsets are relative to the
//! start of the blob. Values are stored as `f32`.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{layout, ActionSeq, Episode, JointAction, ProprioState, TaskAction};

pub const DATASET_MAGIC: &[u8] = b"PSI0DS\n";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset format version {found} is not supported (expected {DATASET_VERSION})")]
    VersionMismatch { found: String },
    #[error("truncated file")]
    Truncated,
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("episode {index} violates invariants: {reason}")]
    Invariant { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    episode_count: usize,
    blob_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub task_id: u32,
    pub frame_rate: f64,
    pub frame_count: usize,
    pub action_kind: ActionKind,
    pub action_dim: usize,
    pub state_dim: usize,
    pub context_dim: usize,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Joint,
    Task,
}

impl EpisodeHeader {
    fn row_width(&self) -> usize {
        self.action_dim + self.state_dim + self.context_dim
    }
}

pub fn write_dataset(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<(), DatasetError> {
    fs::write(path, encode_dataset(episodes)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Episode>, DatasetError> {
    decode_dataset(&fs::read(path)?)
}

pub fn encode_dataset(episodes: &[Episode]) -> Result<Vec<u8>, DatasetError> {
    let mut headers = Vec::with_capacity(episodes.len());
    let mut blob = Vec::new();
    for (index, ep) in episodes.iter().enumerate() {
        ep.validate().map_err(|e| DatasetError::Invariant { index, reason: e.to_string() })?;
        let offset = blob.len() as u64;
        for f in 0..ep.len() {
            let row = ep.actions.row(f).iter().chain(ep.states[f].as_slice()).chain(&ep.contexts[f]);
            for v in row {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        headers.push(EpisodeHeader {
            task_id: ep.task_id,
            frame_rate: ep.frame_rate,
            frame_count: ep.len(),
            action_kind: match ep.actions {
                ActionSeq::Joint(_) => ActionKind::Joint,
                ActionSeq::Task(_) => ActionKind::Task,
            },
            action_dim: ep.actions.dim(),
            state_dim: layout::STATE_DIM,
            context_dim: ep.context_dim(),
            offset,
            byte_len: blob.len() as u64 - offset,
        });
    }
    let mut out = Vec::with_capacity(blob.len() + 256 * headers.len() + 64);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(format!("{DATASET_VERSION}\n").as_bytes());
    let file_header = FileHeader { episode_count: headers.len(), blob_len: blob.len() as u64 };
    out.extend_from_slice(&json_line(&file_header));
    for h in &headers {
        out.extend_from_slice(&json_line(h));
    }
    out.extend_from_slice(&blob);
    Ok(out)
}

fn json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec(value).expect("header serialization cannot fail");
    v.push(b'\n');
    v
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a [u8], DatasetError> {
        let rest = &self.buf[self.pos..];
        let end = rest.iter().position(|b| *b == b'\n').ok_or(DatasetError::Truncated)?;
        self.pos += end + 1;
        Ok(&rest[..end])
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(line: &[u8]) -> Result<T, DatasetError> {
    serde_json::from_slice(line).map_err(|e| DatasetError::Malformed(e.to_string()))
}

/// Reads only the headers of a dataset file.
pub fn read_headers(bytes: &[u8]) -> Result<Vec<EpisodeHeader>, DatasetError> {
    Ok(parse_headers(bytes)?.0)
}

fn parse_headers(bytes: &[u8]) -> Result<(Vec<EpisodeHeader>, &[u8]), DatasetError> {
    if bytes.len() < DATASET_MAGIC.len() {
        return Err(if DATASET_MAGIC.starts_with(bytes) { DatasetError::Truncated } else { DatasetError::BadMagic });
    }
    if &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: DATASET_MAGIC.len() };
    let version = String::from_utf8_lossy(cur.line()?).into_owned();
    if version != DATASET_VERSION.to_string() {
        return Err(DatasetError::VersionMismatch { found: version });
    }
    let fh: FileHeader = parse_json(cur.line()?)?;
    let mut headers = Vec::with_capacity(fh.episode_count.min(1 << 16));
    for _ in 0..fh.episode_count {
        headers.push(parse_json::<EpisodeHeader>(cur.line()?)?);
    }
    let blob = &bytes[cur.pos..];
    if (blob.len() as u64) < fh.blob_len {
        return Err(DatasetError::Truncated);
    }
    if blob.len() as u64 > fh.blob_len {
        return Err(DatasetError::Malformed(format!(
            "{} trailing bytes after blob",
            blob.len() as u64 - fh.blob_len
        )));
    }
    Ok((headers, blob))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Episode>, DatasetError> {
    let (headers, blob) = parse_headers(bytes)?;
    headers.iter().enumerate().map(|(i, h)| decode_episode(i, h, blob)).collect()
}

fn decode_episode(index: usize, h: &EpisodeHeader, blob: &[u8]) -> Result<Episode, DatasetError> {
    let invariant = |reason: String| DatasetError::Invariant { index, reason };
    let expected_dim = match h.action_kind {
        ActionKind::Joint => layout::JOINT_DIM,
        ActionKind::Task => layout::TASK_DIM,
    };
    if h.action_dim != expected_dim || h.state_dim != layout::STATE_DIM {
        return Err(invariant(format!("unexpected channel layout {}/{}", h.action_dim, h.state_dim)));
    }
    let expected_len = (h.frame_count * h.row_width() * 4) as u64;
    if h.byte_len != expected_len {
        return Err(invariant(format!("byte length {} does not match shape ({expected_len})", h.byte_len)));
    }
    let end = h.offset.checked_add(h.byte_len).ok_or(DatasetError::Truncated)?;
    if end > blob.len() as u64 {
        return Err(DatasetError::Truncated);
    }
    let values: Vec<f64> = blob[h.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();

    let width = h.row_width();
    let mut joint = Vec::new();
    let mut task = Vec::new();
    let mut states = Vec::with_capacity(h.frame_count);
    let mut contexts = Vec::with_capacity(h.frame_count);
    for row in values.chunks_exact(width.max(1)).take(h.frame_count) {
        let (a, rest) = row.split_at(h.action_dim);
        let (s, c) = rest.split_at(h.state_dim);
        match h.action_kind {
            ActionKind::Joint => joint.push(JointAction::from_slice(a).map_err(|e| invariant(e.to_string()))?),
            ActionKind::Task => task.push(TaskAction::from_slice(a).map_err(|e| invariant(e.to_string()))?),
        }
        states.push(ProprioState::from_slice(s).map_err(|e| invariant(e.to_string()))?);
        contexts.push(c.to_vec());
    }
    let ep = Episode {
        task_id: h.task_id,
        frame_rate: h.frame_rate,
        actions: match h.action_kind {
            ActionKind::Joint => ActionSeq::Joint(joint),
            ActionKind::Task => ActionSeq::Task(task),
        },
        states,
        contexts,
    };
    ep.validate().map_err(|e| invariant(e.to_string()))?;
    Ok(ep)
}

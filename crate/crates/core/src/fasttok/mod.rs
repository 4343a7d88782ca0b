//! FAST-style action tokenizer.
//!
//! A normalized action (values in `[-1, 1]`) is quantized per dimension to an
//! integer symbol in `[0, 2 * scale]`, then compressed with byte-pair merges
//! learned over a corpus of symbol streams. Symbol ids `0..=2*scale` are the
//! base vocabulary; each learned merge appends one new id.
//!
//! For `action_horizon > 1` a per-dimension orthonormal DCT-II runs before
//! quantization (coefficients scaled by `1/sqrt(horizon)` so they stay in
//! range). With the default horizon of 1 that stage is the identity and is
//! skipped.

mod bpe;
mod dct;

pub use bpe::{fit_bpe, Merge};
pub use dct::{dct_ii, dct_iii};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::layout::TASK_DIM;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("unnormalized action: value {value} at index {index} is outside [-1, 1]")]
    UnnormalizedAction { index: usize, value: f64 },
    #[error("symbol {symbol} at index {index} is outside [0, {max}]")]
    SymbolOutOfRange { index: usize, symbol: u32, max: u32 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown token {0}")]
    UnknownToken(u32),
    #[error("malformed token sequence: expands to {got} symbols, expected {expected}")]
    MalformedTokenSequence { expected: usize, got: usize },
    #[error("empty token sequence")]
    EmptyTokens,
    #[error("action has {got} values, expected {expected}")]
    WrongActionLength { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub action_horizon: usize,
    pub scale: u32,
    pub vocab_size: usize,
    /// Width of one action (48 for task space).
    #[serde(default = "default_action_dim")]
    pub action_dim: usize,
}

fn default_action_dim() -> usize {
    TASK_DIM
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { action_horizon: 1, scale: 100, vocab_size: 2048, action_dim: TASK_DIM }
    }
}

impl TokenizerConfig {
    pub fn base_symbols(&self) -> usize {
        2 * self.scale as usize + 1
    }

    pub fn sequence_len(&self) -> usize {
        self.action_horizon * self.action_dim
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        if self.scale < 1 {
            return Err(TokenizerError::InvalidConfig("scale must be >= 1".into()));
        }
        if self.vocab_size <= self.base_symbols() {
            return Err(TokenizerError::InvalidConfig(format!(
                "vocab_size {} must exceed base symbol count {}",
                self.vocab_size,
                self.base_symbols()
            )));
        }
        if self.action_horizon == 0 || self.action_dim == 0 {
            return Err(TokenizerError::InvalidConfig("horizon and action_dim must be positive".into()));
        }
        Ok(())
    }
}

/// `round_half_away_from_zero(scale * x) + scale` per value.
pub fn quantize(x: &[f64], scale: u32) -> Result<Vec<u32>, TokenizerError> {
    let s = f64::from(scale);
    x.iter()
        .enumerate()
        .map(|(index, &value)| {
            if !(value.abs() <= 1.0) {
                return Err(TokenizerError::UnnormalizedAction { index, value });
            }
            Ok(((s * value).round() + s) as u32)
        })
        .collect()
}

pub fn dequantize(symbols: &[u32], scale: u32) -> Result<Vec<f64>, TokenizerError> {
    let s = f64::from(scale);
    symbols
        .iter()
        .enumerate()
        .map(|(index, &symbol)| {
            if symbol > 2 * scale {
                return Err(TokenizerError::SymbolOutOfRange { index, symbol, max: 2 * scale });
            }
            Ok((f64::from(symbol) - s) / s)
        })
        .collect()
}

/// Fitted tokenizer: config plus the ordered merge list.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    pub config: TokenizerConfig,
    pub merges: Vec<Merge>,
    /// Expansion of every token id into base symbols.
    expansions: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: TokenizerConfig,
    merges: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub mean_l1: f64,
    pub mean_l1_per_dim: Vec<f64>,
    pub max_abs_error: f64,
    pub mean_token_length: f64,
    pub raw_symbol_length: usize,
}

impl TokenizerModel {
    /// Builds a model from merges, checking that every rule only references earlier symbols.
    pub fn new(config: TokenizerConfig, merges: Vec<Merge>) -> Result<Self, TokenizerError> {
        config.validate()?;
        let base = config.base_symbols();
        if base + merges.len() > config.vocab_size {
            return Err(TokenizerError::InvalidConfig("merge list exceeds vocab_size".into()));
        }
        let mut expansions: Vec<Vec<u32>> = (0..base as u32).map(|s| vec![s]).collect();
        for (i, m) in merges.iter().enumerate() {
            let id = (base + i) as u32;
            if m.new != id || m.left >= id || m.right >= id {
                return Err(TokenizerError::Checkpoint(format!("merge {i} references undefined symbols")));
            }
            let mut e = expansions[m.left as usize].clone();
            e.extend_from_slice(&expansions[m.right as usize]);
            expansions.push(e);
        }
        Ok(Self { config, merges, expansions })
    }

    pub fn vocab_len(&self) -> usize {
        self.expansions.len()
    }

    /// Base symbols of a normalized action (after the optional DCT stage).
    pub fn symbols(&self, x: &[f64]) -> Result<Vec<u32>, TokenizerError> {
        let n = self.config.sequence_len();
        if x.len() != n {
            return Err(TokenizerError::WrongActionLength { expected: n, got: x.len() });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
            return Err(TokenizerError::UnnormalizedAction { index, value });
        }
        let coeffs = self.forward_transform(x);
        quantize(&coeffs, self.config.scale)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<u32>, TokenizerError> {
        Ok(self.apply_merges(self.symbols(x)?))
    }

    /// Applies the learned merges, in order, to a base-symbol sequence.
    pub fn apply_merges(&self, mut seq: Vec<u32>) -> Vec<u32> {
        for m in &self.merges {
            if seq.len() < 2 {
                break;
            }
            seq = bpe::merge_sequence(&seq, m);
        }
        seq
    }

    pub fn expand(&self, tokens: &[u32]) -> Result<Vec<u32>, TokenizerError> {
        if tokens.is_empty() {
            return Err(TokenizerError::EmptyTokens);
        }
        let mut out = Vec::with_capacity(self.config.sequence_len());
        for &t in tokens {
            let e = self.expansions.get(t as usize).ok_or(TokenizerError::UnknownToken(t))?;
            out.extend_from_slice(e);
        }
        let expected = self.config.sequence_len();
        if out.len() != expected {
            return Err(TokenizerError::MalformedTokenSequence { expected, got: out.len() });
        }
        Ok(out)
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<Vec<f64>, TokenizerError> {
        let symbols = self.expand(tokens)?;
        let coeffs = dequantize(&symbols, self.config.scale)?;
        Ok(self.inverse_transform(&coeffs))
    }

    fn forward_transform(&self, x: &[f64]) -> Vec<f64> {
        let h = self.config.action_horizon;
        if h == 1 {
            return x.to_vec();
        }
        let dim = self.config.action_dim;
        let norm = (h as f64).sqrt();
        // dimension-major coefficient order: all frequencies of dim 0, then dim 1, ...
        let mut out = Vec::with_capacity(x.len());
        for d in 0..dim {
            let series: Vec<f64> = (0..h).map(|t| x[t * dim + d]).collect();
            out.extend(dct_ii(&series).into_iter().map(|c| (c / norm).clamp(-1.0, 1.0)));
        }
        out
    }

    fn inverse_transform(&self, c: &[f64]) -> Vec<f64> {
        let h = self.config.action_horizon;
        if h == 1 {
            return c.to_vec();
        }
        let dim = self.config.action_dim;
        let norm = (h as f64).sqrt();
        let mut out = vec![0.0; c.len()];
        for d in 0..dim {
            let coeffs: Vec<f64> = c[d * h..(d + 1) * h].iter().map(|v| v * norm).collect();
            for (t, v) in dct_iii(&coeffs).into_iter().enumerate() {
                out[t * dim + d] = v;
            }
        }
        out
    }

    pub fn reconstruction_report(&self, corpus: &[Vec<f64>]) -> Result<ReconstructionReport, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let n = self.config.sequence_len();
        let mut l1 = vec![0.0; n];
        let mut max_abs: f64 = 0.0;
        let mut tokens = 0usize;
        for x in corpus {
            let t = self.encode(x)?;
            tokens += t.len();
            let back = self.decode(&t)?;
            for (i, (a, b)) in back.iter().zip(x).enumerate() {
                let e = (a - b).abs();
                l1[i] += e;
                max_abs = max_abs.max(e);
            }
        }
        let count = corpus.len() as f64;
        l1.iter_mut().for_each(|v| *v /= count);
        Ok(ReconstructionReport {
            mean_l1: l1.iter().sum::<f64>() / n as f64,
            mean_l1_per_dim: l1,
            max_abs_error: max_abs,
            mean_token_length: tokens as f64 / count,
            raw_symbol_length: n,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            config: self.config,
            merges: self.merges.iter().map(|m| [m.left, m.right, m.new]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("tokenizer checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| TokenizerError::Checkpoint(e.to_string()))?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(TokenizerError::Checkpoint(format!("unsupported format version {}", file.format_version)));
        }
        let merges = file.merges.into_iter().map(|[left, right, new]| Merge { left, right, new }).collect();
        Self::new(file.config, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|e| TokenizerError::Checkpoint(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Quantizes every action of `actions` and fits merges over the resulting streams.
pub fn fit_tokenizer(actions: &[Vec<f64>], config: TokenizerConfig) -> Result<TokenizerModel, TokenizerError> {
    let empty = TokenizerModel::new(config, Vec::new())?;
    let corpus = actions.iter().map(|a| empty.symbols(a)).collect::<Result<Vec<_>, _>>()?;
    fit_bpe(&corpus, config)
}

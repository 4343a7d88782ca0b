//! Pipeline stages behind the `hvla` command: data generation, tokenizer
//! fitting, the three training stages, scheduler benchmarking and evaluation.
//! Every stage reads its inputs from an output directory, writes artifacts
//! plus a JSON report, and records content hashes in a run manifest.

pub mod config;
pub mod manifest;
pub mod stages;

use std::fmt;

pub use config::PipelineConfig;
pub use manifest::{sha256_file, Layout, RunLock, RunManifest, MANIFEST_VERSION, REPORT_SCHEMA_VERSION};
pub use stages::{run, Command, EvalPolicy, StageOutcome};

/// Exit code classes: user/config errors exit 1, broken invariants exit 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        Self::User(msg.into())
    }

    pub fn internal(msg: impl fmt::Display) -> Self {
        Self::Internal(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::User(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::User(m) => write!(f, "{m}"),
            Self::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
const LOCK_FILE: &str = ".hvla.lock";

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::user(format!("creating {}: {e}", dir.display())))?;
    }
    let tmp = path.with_extension(format!("{}tmp", path.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default()));
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| CliError::user(format!("writing {}: {e}", path.display())))
}

/// Resolved artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub datasets: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(root: &Path, config: &PipelineConfig) -> Self {
        let p = &config.paths;
        Self {
            root: root.to_path_buf(),
            datasets: root.join(&p.datasets),
            checkpoints: root.join(&p.checkpoints),
            reports: root.join(&p.reports),
        }
    }

    pub fn demos(&self) -> PathBuf {
        self.datasets.join("demos.psids")
    }
    pub fn task_space(&self) -> PathBuf {
        self.datasets.join("task_space.psids")
    }
    pub fn action_norm(&self) -> PathBuf {
        self.datasets.join("action_norm.json")
    }
    pub fn task_norm(&self) -> PathBuf {
        self.datasets.join("task_norm.json")
    }
    pub fn tokenizer(&self) -> PathBuf {
        self.checkpoints.join("tokenizer.json")
    }
    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.checkpoints.join(format!("{stage}.ckpt"))
    }
    pub fn report(&self, command: &str) -> PathBuf {
        self.reports.join(format!("{command}.json"))
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.reports.join(format!("{command}.manifest.json"))
    }
    pub fn traces(&self) -> PathBuf {
        self.reports.join("traces")
    }

    /// Path relative to the output root, for manifests.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.into(),
            config_hash: config.hash(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_s: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::user(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::internal(format!("manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(CliError::internal)?;
        write_atomic(path, text.as_bytes())
    }
}

/// Single-instance guard for an output directory; removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::user(format!("creating {}: {e}", root.display())))?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::user(format!("{} is locked by another run (remove {} if stale)", root.display(), path.display())))
            }
            Err(e) => Err(CliError::user(format!("locking {}: {e}", root.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert_eq!(RunLock::acquire(dir.path()).unwrap_err().exit_code(), 1);
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_atomic(&p, b"{}").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"{}");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn file_hash_matches_known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}

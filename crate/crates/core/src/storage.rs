//! Run configuration and on-disk stores: JSONL files with stable field
//! order, an exclusive lock per output directory, and the configuration
//! fingerprint guard that keeps artifacts from different setups apart.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::model::PassPolicy;
use crate::pipeline::OptimizeConfig;
use crate::provider::ProviderConfig;
use crate::Config;

/// One experiment description: canonical, diffable, and complete. Flags
/// override these values; environment variables carry only secrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub feedback_path: PathBuf,
    pub query_log_path: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub stack: Config,
    pub agent: AgentConfig,
    pub pass_policy: PassPolicy,
    pub probe_paraphrases: usize,
    pub max_iterations: u32,
    pub synthetic_per_event: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::from("corpus"),
            feedback_path: PathBuf::from("feedback.jsonl"),
            query_log_path: None,
            provider: ProviderConfig::default(),
            stack: Config::default(),
            agent: AgentConfig::default(),
            pass_policy: PassPolicy::default(),
            probe_paraphrases: 4,
            max_iterations: 3,
            synthetic_per_event: 3,
            seeds: vec![11, 22, 33],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parse a config file and check its invariants: referenced paths
    /// exist, seeds nonempty, stack parameters valid. Unknown keys are
    /// rejected by the parser.
    pub fn load(path: &Path) -> Result<Self, StorageError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| StorageError::Input(format!("cannot read config {path:?}: {e}")))?;
        let config: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| StorageError::Input(format!("invalid config {path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        if !self.corpus_path.exists() {
            return Err(StorageError::Input(format!(
                "corpus_path does not exist: {:?}",
                self.corpus_path
            )));
        }
        if !self.feedback_path.exists() {
            return Err(StorageError::Input(format!(
                "feedback_path does not exist: {:?}",
                self.feedback_path
            )));
        }
        if let Some(log) = &self.query_log_path {
            if !log.exists() {
                return Err(StorageError::Input(format!(
                    "query_log_path does not exist: {log:?}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(StorageError::Input("seeds must be nonempty".to_string()));
        }
        self.stack
            .validate()
            .map_err(|e| StorageError::Input(format!("stack config: {e}")))?;
        Ok(())
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            max_iterations: self.max_iterations,
            probe_paraphrases: self.probe_paraphrases,
            pass_policy: self.pass_policy,
        }
    }

    /// Path of the canonical corpus store: either the configured file or
    /// `documents.jsonl` inside the configured directory.
    pub fn corpus_file(&self) -> PathBuf {
        if self.corpus_path.is_dir() {
            self.corpus_path.join("documents.jsonl")
        } else {
            self.corpus_path.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    /// Unreadable or malformed inputs (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Integrity violations: lock conflicts, fingerprint mismatches (exit
    /// code 3).
    #[error("{0}")]
    Integrity(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Read one serde value per line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StorageError> {
    let file = fs::File::open(path)
        .map_err(|e| StorageError::Input(format!("cannot open {path:?}: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            StorageError::Input(format!("{path:?} line {}: {e}", i + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Write one serde value per line, UTF-8, stable field order.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StorageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| StorageError::Input(format!("serialize: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), StorageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| StorageError::Input(format!("serialize: {e}")))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

/// Exclusive ownership of an output directory for the duration of one
/// command. The lock file disappears on drop; a leftover lock from a
/// crashed process must be removed manually.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(output_dir: &Path) -> Result<Self, StorageError> {
        fs::create_dir_all(output_dir)?;
        let path = output_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StorageError::Integrity(format!(
                    "output dir is locked by another process (remove {path:?} if stale)"
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Guard against mixing artifacts from different configurations in one
/// output directory: the first command records the fingerprint, later
/// commands must match it.
pub fn check_fingerprint(output_dir: &Path, fingerprint: &str) -> Result<(), StorageError> {
    let path = output_dir.join("fingerprint.txt");
    if path.exists() {
        let stored = fs::read_to_string(&path)?;
        if stored.trim() != fingerprint {
            return Err(StorageError::Integrity(format!(
                "config fingerprint mismatch: output dir holds artifacts for {}, current \
                 config is {fingerprint}",
                stored.trim()
            )));
        }
    } else {
        fs::create_dir_all(output_dir)?;
        fs::write(&path, format!("{fingerprint}\n"))?;
    }
    Ok(())
}

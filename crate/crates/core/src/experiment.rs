//! Reproducible experiment directories.
//!
//! A run never overwrites another: each one claims the next `run-NNNN`
//! under its parent. The layout is fixed:
//!
//! ```text
//! run-0001/
//!   config.json      byte-identical snapshot of the validated config
//!   seeds.json       every derived seed, so the run is self-describing
//!   checkpoints/     step-0001000.ckpt ...
//!   logs/train.jsonl one JSON object per optimizer step
//!   stems/           output WAVs
//!   report.json      stage-specific results
//!   manifest.json    sha256 of every artifact, written last
//!   FAILED           stage-tagged message, only when a stage failed
//! ```

use crate::augment::derive_seed;
use crate::model::TrainRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("experiment metadata is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Every seed a run consumes. `stream` feeds the example stream,
/// `network` the weight init; `train` (batch order and dropout) follows
/// the training config so a bare config reproduces the default recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub global: u64,
    pub stream: u64,
    pub network: u64,
    pub train: u64,
}

impl SeedRecord {
    pub fn derive(global: u64, train_seed: u64) -> Self {
        Self {
            global,
            stream: derive_seed(global, 1),
            network: derive_seed(global, 2),
            train: train_seed,
        }
    }
}

/// One artifact inside an experiment directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the experiment root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn sha256_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|e| e.path == path).map(|e| e.sha256.as_str())
    }
}

/// Streaming sha256 of a file, as lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, ExperimentError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest {
        use std::fmt::Write as _;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    Ok(hex)
}

/// Appends training records to `logs/train.jsonl`, one JSON object per
/// line, flushed per record so a crash loses at most the current step.
pub struct TrainLogWriter {
    file: File,
    path: PathBuf,
}

impl TrainLogWriter {
    pub fn append(&mut self, record: &TrainRecord) -> Result<(), ExperimentError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    /// Claim the next free `run-NNNN` under `parent`, creating `parent`
    /// if needed. Uses the filesystem as the lock: `create_dir` fails if
    /// a concurrent claimer got there first, and we move on.
    pub fn create_under(parent: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let parent = parent.as_ref();
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let mut next = 1 + Self::existing_run_numbers(parent)?.into_iter().max().unwrap_or(0);
        loop {
            let root = parent.join(format!("run-{next:04}"));
            match fs::create_dir(&root) {
                Ok(()) => {
                    let dir = Self { root };
                    for sub in ["checkpoints", "logs", "stems"] {
                        let p = dir.root.join(sub);
                        fs::create_dir(&p).map_err(io_err(&p))?;
                    }
                    return Ok(dir);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(ExperimentError::Io { path: root, source: e }),
            }
        }
    }

    fn existing_run_numbers(parent: &Path) -> Result<Vec<u64>, ExperimentError> {
        let mut numbers = Vec::new();
        for entry in fs::read_dir(parent).map_err(io_err(parent))? {
            let entry = entry.map_err(io_err(parent))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let Some(digits) = name.strip_prefix("run-") else { continue };
            if digits.len() == 4 {
                if let Ok(n) = digits.parse::<u64>() {
                    numbers.push(n);
                }
            }
        }
        Ok(numbers)
    }

    /// Open an existing run for a follow-on stage.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(ExperimentError::Invalid(format!(
                "{} is not an experiment directory",
                root.display()
            )));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn seeds_path(&self) -> PathBuf {
        self.root.join("seeds.json")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.root.join("logs").join("train.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn failed_path(&self) -> PathBuf {
        self.root.join("FAILED")
    }

    pub fn stem_path(&self, name: &str) -> PathBuf {
        self.root.join("stems").join(name)
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step:07}.ckpt"))
    }

    /// The raw config text, stored byte-identically.
    pub fn write_config_snapshot(&self, raw: &str) -> Result<(), ExperimentError> {
        let path = self.config_path();
        fs::write(&path, raw).map_err(io_err(&path))
    }

    pub fn read_config_snapshot(&self) -> Result<String, ExperimentError> {
        let path = self.config_path();
        if !path.is_file() {
            return Err(ExperimentError::MissingArtifact("config.json".into()));
        }
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn write_seeds(&self, seeds: &SeedRecord) -> Result<(), ExperimentError> {
        let path = self.seeds_path();
        let text = serde_json::to_string_pretty(seeds)?;
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read_seeds(&self) -> Result<SeedRecord, ExperimentError> {
        let path = self.seeds_path();
        if !path.is_file() {
            return Err(ExperimentError::MissingArtifact("seeds.json".into()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Open the training log for appending, creating it if absent.
    pub fn train_log_writer(&self) -> Result<TrainLogWriter, ExperimentError> {
        let path = self.train_log_path();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file =
            OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(TrainLogWriter { file, path })
    }

    pub fn read_train_log(&self) -> Result<Vec<TrainRecord>, ExperimentError> {
        let path = self.train_log_path();
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(records)
    }

    /// Highest-step checkpoint, by filename. Non-matching names are
    /// ignored so a stray file cannot break resumption.
    pub fn latest_checkpoint(&self) -> Result<Option<(u64, PathBuf)>, ExperimentError> {
        let dir = self.root.join("checkpoints");
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let Some(step) = name
                .strip_prefix("step-")
                .and_then(|s| s.strip_suffix(".ckpt"))
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            if best.as_ref().map(|(b, _)| step > *b).unwrap_or(true) {
                best = Some((step, entry.path()));
            }
        }
        Ok(best)
    }

    pub fn write_report(&self, report: &impl Serialize) -> Result<(), ExperimentError> {
        let path = self.report_path();
        let text = serde_json::to_string_pretty(report)?;
        fs::write(&path, text).map_err(io_err(&path))
    }

    /// Record a stage failure; the partial directory is kept for
    /// inspection and later resumption.
    pub fn mark_failed(&self, stage: &str, message: &str) -> Result<(), ExperimentError> {
        let path = self.failed_path();
        fs::write(&path, format!("stage: {stage}\n{message}\n")).map_err(io_err(&path))
    }

    pub fn failure(&self) -> Option<String> {
        fs::read_to_string(self.failed_path()).ok()
    }

    /// Hash every artifact and write `manifest.json`. Call last: the
    /// manifest never lists itself.
    pub fn finalize_manifest(&self) -> Result<Manifest, ExperimentError> {
        let mut files = Vec::new();
        self.collect_files(&self.root, &mut files)?;
        files.sort();
        let mut entries = Vec::with_capacity(files.len());
        for rel in files {
            let full = self.root.join(&rel);
            let bytes = fs::metadata(&full).map_err(io_err(&full))?.len();
            let rel_str = rel
                .to_str()
                .ok_or_else(|| {
                    ExperimentError::Invalid(format!("non-UTF-8 artifact name {rel:?}"))
                })?
                .replace(std::path::MAIN_SEPARATOR, "/");
            entries.push(ManifestEntry { path: rel_str, sha256: sha256_file(&full)?, bytes });
        }
        let manifest = Manifest { files: entries };
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }

    pub fn read_manifest(&self) -> Result<Manifest, ExperimentError> {
        let path = self.manifest_path();
        if !path.is_file() {
            return Err(ExperimentError::MissingArtifact("manifest.json".into()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn collect_files(&self, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path == self.manifest_path() {
                continue;
            }
            let kind = entry.file_type().map_err(io_err(&path))?;
            if kind.is_dir() {
                self.collect_files(&path, out)?;
            } else if kind.is_file() {
                let rel = path
                    .strip_prefix(&self.root)
                    .expect("walk stays under the experiment root")
                    .to_path_buf();
                out.push(rel);
            }
        }
        Ok(())
    }
}

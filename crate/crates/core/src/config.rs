//! Project configuration: a single JSON file that pins every knob of a
//! run. Parsing is closed-world (unknown keys are errors) so a typo in a
//! hyperparameter name fails loudly instead of silently using a default.
//!
//! Relative paths inside the file are resolved against the directory the
//! config was loaded from, so a config directory can be moved as a unit.

use crate::augment::{AugmentError, AugmentRanges, BackgroundStrategy, CompressorParams};
use crate::model::{MaskNetConfig, ModelError, TrainConfig};
use crate::score::TrackSelector;
use crate::separate::{ChunkSpec, SeparateError};
use crate::stft::{StftError, StftParams};
use crate::synth::{PatchBank, SynthError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{role} {path} does not exist")]
    MissingPath { role: &'static str, path: PathBuf },
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Separate(#[from] SeparateError),
}

/// A track reference that is either a zero-based index or a track name.
/// In JSON this is a bare integer or a string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackRef {
    Index(usize),
    Name(String),
}

impl TrackRef {
    pub fn selector(&self) -> TrackSelector {
        match self {
            TrackRef::Index(i) => TrackSelector::Index(*i),
            TrackRef::Name(n) => TrackSelector::Name(n.clone()),
        }
    }
}

/// Network size knobs. Input width is not configurable: it is derived
/// from the STFT, which is the only thing that can know it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub recurrent_layers: usize,
    pub hidden_units_per_direction: usize,
    pub bidirectional: bool,
    pub dropout_probability: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let d = MaskNetConfig::new(1);
        Self {
            recurrent_layers: d.recurrent_layers,
            hidden_units_per_direction: d.hidden_units_per_direction,
            bidirectional: d.bidirectional,
            dropout_probability: d.dropout_probability,
        }
    }
}

impl NetworkConfig {
    pub fn mask_net_config(&self, input_bins: usize) -> MaskNetConfig {
        MaskNetConfig {
            input_bins,
            recurrent_layers: self.recurrent_layers,
            hidden_units_per_direction: self.hidden_units_per_direction,
            bidirectional: self.bidirectional,
            dropout_probability: self.dropout_probability,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        // Width 1 is a placeholder; real width is checked when the STFT
        // fixes the bin count.
        self.mask_net_config(1).validate()?;
        Ok(())
    }
}

/// What to separate: the recording, its transcription, and which track
/// of the transcription is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// The recorded mixture to separate.
    pub mixture_wav: PathBuf,
    /// The (possibly unaligned) MIDI transcription of the mixture.
    pub midi: PathBuf,
    /// Which MIDI track holds the target instrument.
    pub target_track: TrackRef,
    /// Patch-bank instrument whose variants render surrogate targets.
    pub target_instrument: String,
}

/// Everything a run needs, in one declarative file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Working rate; all inputs are resampled to this at load time.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub stft: StftParams,
    pub input: InputConfig,
    /// Where surrogate backgrounds come from.
    #[serde(default = "default_background")]
    pub background: BackgroundStrategy,
    /// MIDI track index to (instrument, patch index), used only when the
    /// background is synthesized accompaniment.
    #[serde(default)]
    pub accompaniment: BTreeMap<usize, (String, usize)>,
    pub patch_bank: PatchBank,
    #[serde(default)]
    pub ranges: AugmentRanges,
    /// Accept sampling ranges outside the standard schema bounds.
    #[serde(default)]
    pub allow_extended_ranges: bool,
    #[serde(default)]
    pub compressor: CompressorParams,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub chunk: ChunkSpec,
    /// Root for experiment directories; defaults to the SCORESEP_OUT
    /// environment variable, then ./runs.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Global seed; the stream, network init, and dropout seeds are all
    /// derived from it.
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_rate() -> u32 {
    16_000
}

fn default_background() -> BackgroundStrategy {
    BackgroundStrategy::OriginalMixture
}

/// Resolve `p` against `base` unless it is already absolute.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ProjectConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read and parse a config file. Returns the raw text alongside the
    /// parsed value so callers can snapshot the file byte-identically.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String), ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let config = Self::from_json_str(&text)?;
        Ok((config, text))
    }

    pub fn to_json_string(&self) -> Result<String, ConfigError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Full validation: field invariants, schema bounds on the sampling
    /// ranges (unless explicitly widened), and existence of every
    /// referenced path, resolved against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<(), ConfigError> {
        self.validate_values()?;
        for (role, path) in
            [("mixture wav", &self.input.mixture_wav), ("midi file", &self.input.midi)]
        {
            let resolved = resolve_path(base_dir, path);
            if !resolved.is_file() {
                return Err(ConfigError::MissingPath { role, path: resolved });
            }
        }
        Ok(())
    }

    /// Everything `validate` checks except path existence. Useful for
    /// configs that have not been placed next to their inputs yet.
    pub fn validate_values(&self) -> Result<(), ConfigError> {
        if self.sample_rate == 0 {
            return Err(ConfigError::Invalid("sample_rate must be > 0".into()));
        }
        self.stft.validate()?;
        self.patch_bank.validate()?;
        self.ranges.validate()?;
        if !self.allow_extended_ranges {
            self.ranges.check_standard_bounds()?;
        }
        self.compressor.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.chunk.validate().map_err(ConfigError::Separate)?;
        if self.train.learning_rate <= 0.0 {
            return Err(ConfigError::Invalid(format!(
                "learning_rate {} must be > 0 for a run",
                self.train.learning_rate
            )));
        }
        let excerpt_samples = self.ranges.excerpt_seconds * self.sample_rate as f64;
        if excerpt_samples < self.stft.window_length as f64 {
            return Err(ConfigError::Invalid(format!(
                "excerpt of {} s at {} Hz is shorter than one {}-sample window",
                self.ranges.excerpt_seconds, self.sample_rate, self.stft.window_length
            )));
        }
        if self.patch_bank.patches(&self.input.target_instrument).is_none() {
            let available: Vec<&str> = self.patch_bank.instruments().collect();
            return Err(ConfigError::Invalid(format!(
                "target instrument {:?} is not in the patch bank (available: {available:?})",
                self.input.target_instrument
            )));
        }
        if self.background == BackgroundStrategy::SynthesizedAccompaniment {
            if self.accompaniment.is_empty() {
                return Err(ConfigError::Invalid(
                    "synthesized background needs an accompaniment patch assignment".into(),
                ));
            }
            for (track, (instrument, index)) in &self.accompaniment {
                self.patch_bank.get(instrument, *index).map_err(|e| {
                    ConfigError::Invalid(format!("accompaniment track {track}: {e}"))
                })?;
            }
        }
        Ok(())
    }

    /// Output root: explicit config value, then SCORESEP_OUT, then
    /// ./runs. Relative values resolve against `base_dir`.
    pub fn output_root(&self, base_dir: &Path) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return resolve_path(base_dir, dir);
        }
        if let Some(env) = std::env::var_os("SCORESEP_OUT") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        base_dir.join("runs")
    }
}

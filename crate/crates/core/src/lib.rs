//! Score-informed single-source separation.
//!
//! Given one audio mixture and an unaligned MIDI transcription of one
//! instrument in it, this crate synthesizes surrogate training mixtures
//! from the transcription, trains a small mask-inference network on them,
//! and applies that network to the original mixture to extract the
//! instrument. A synthetic benchmark harness with known ground truth
//! quantifies separation quality.

pub mod audio;
pub mod augment;
pub mod cli;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod resample;
pub mod score;
pub mod separate;
pub mod stft;
pub mod synth;
pub mod wav;

pub use audio::{db_to_gain, peak_normalize, AudioClip, AudioError};
pub use stft::{apply_mask, istft, stft, Spectrogram, StftError, StftParams, WindowKind};

/// Crate-wide error, aggregating the per-module error types.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Wav(#[from] wav::WavError),
    #[error(transparent)]
    Stft(#[from] stft::StftError),
    #[error(transparent)]
    Score(#[from] score::ScoreError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Separate(#[from] separate::SeparateError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

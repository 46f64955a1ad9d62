//! Mask-inference network: a small bidirectional LSTM stack with a
//! sigmoid mask head, its phase-sensitive training objective, and the
//! training loop that overfits it to a surrogate example stream.

pub mod checkpoint;
pub mod loss;
mod net;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use loss::{tpsa_loss, tpsa_loss_grad, tpsa_target};
pub use net::{MaskNet, Tape};
pub use train::{
    gradient_check, gradient_check_with_corruption, random_check_batch, train, Adam,
    BatchSource, CheckBatch, RepeatedExample, TrainConfig, TrainRecord,
};

use crate::stft::Spectrogram;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite loss at step {step}; batch recipe seeds {recipe_seeds:?}")]
    NonFiniteLoss { step: u64, recipe_seeds: Vec<u64> },
    #[error("example stream exhausted: training needs {need} examples, stream has {have}")]
    StreamExhausted { have: u64, need: u64 },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("checkpoint parse error: {0}")]
    CheckpointParse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stft(#[from] crate::stft::StftError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
}

/// Architecture of the mask network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskNetConfig {
    /// Frequency bins of the input spectrogram (also the mask width).
    pub input_bins: usize,
    #[serde(default = "default_layers")]
    pub recurrent_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_units_per_direction: usize,
    #[serde(default = "default_bidirectional")]
    pub bidirectional: bool,
    /// Zeroing probability applied to the last recurrent layer's output
    /// sequence, active only while training.
    #[serde(default = "default_dropout")]
    pub dropout_probability: f64,
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    300
}
fn default_bidirectional() -> bool {
    true
}
fn default_dropout() -> f64 {
    0.30
}

impl MaskNetConfig {
    pub fn new(input_bins: usize) -> Self {
        Self {
            input_bins,
            recurrent_layers: default_layers(),
            hidden_units_per_direction: default_hidden(),
            bidirectional: default_bidirectional(),
            dropout_probability: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_bins == 0 {
            return Err(ModelError::InvalidArgument("input_bins must be ≥ 1".into()));
        }
        if self.recurrent_layers == 0 {
            return Err(ModelError::InvalidArgument("recurrent_layers must be ≥ 1".into()));
        }
        if self.hidden_units_per_direction == 0 {
            return Err(ModelError::InvalidArgument("hidden units must be ≥ 1".into()));
        }
        if !(self.dropout_probability.is_finite()
            && (0.0..1.0).contains(&self.dropout_probability))
        {
            return Err(ModelError::InvalidArgument(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_probability
            )));
        }
        Ok(())
    }

    pub(crate) fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

/// Input features: log(1 + |X|) per time-frequency bin.
pub fn featurize(spec: &Spectrogram) -> Array2<f64> {
    spec.magnitude().mapv(f64::ln_1p)
}

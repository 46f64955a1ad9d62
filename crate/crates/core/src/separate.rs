//! Apply a trained mask network to a mixture.
//!
//! Long inputs are processed in overlapping chunks of spectrogram frames
//! and the per-chunk masks are cross-faded with a raised-cosine blend,
//! because recurrent inference cost and state staleness grow with
//! sequence length. The signal itself is transformed once; only mask
//! inference is chunked.

use crate::model::{featurize, MaskNet, ModelError};
use crate::stft::{apply_mask, istft, stft, StftError, StftParams};
use crate::{AudioClip, AudioError};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeparateError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mixture of {samples} samples is shorter than one {window}-sample analysis window")]
    TooShort { samples: usize, window: usize },
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Chunking policy for mask inference, in seconds of audio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkSpec {
    #[serde(default = "default_chunk_seconds")]
    pub seconds: f64,
    #[serde(default = "default_overlap_seconds")]
    pub overlap_seconds: f64,
}

fn default_chunk_seconds() -> f64 {
    30.0
}
fn default_overlap_seconds() -> f64 {
    15.0
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self { seconds: default_chunk_seconds(), overlap_seconds: default_overlap_seconds() }
    }
}

impl ChunkSpec {
    /// Overlap may not exceed half the chunk so every frame is covered
    /// by at most two chunks and the cross-fade stays two-sided.
    pub fn validate(&self) -> Result<(), SeparateError> {
        if !(self.seconds.is_finite() && self.seconds > 0.0) {
            return Err(SeparateError::InvalidArgument(format!(
                "chunk length {} s must be finite and positive",
                self.seconds
            )));
        }
        if !(self.overlap_seconds.is_finite()
            && self.overlap_seconds >= 0.0
            && self.overlap_seconds <= self.seconds / 2.0)
        {
            return Err(SeparateError::InvalidArgument(format!(
                "overlap {} s must lie in [0, {}]",
                self.overlap_seconds,
                self.seconds / 2.0
            )));
        }
        Ok(())
    }
}

/// Mask statistics useful for eyeballing a separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mean_mask: f64,
    /// Energy of the masked spectrogram over the mixture's.
    pub masked_energy_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub estimate: AudioClip,
    pub residual: AudioClip,
    pub mask: Array2<f64>,
    pub diagnostics: Diagnostics,
}

/// Estimate the target from `mixture` with an eval-mode network.
pub fn separate(
    mixture: &AudioClip,
    net: &MaskNet<f32>,
    stft_params: &StftParams,
    chunk: &ChunkSpec,
) -> Result<SeparationResult, SeparateError> {
    chunk.validate()?;
    if net.training() {
        return Err(SeparateError::InvalidArgument(
            "network is in training mode; clear the flag before inference".into(),
        ));
    }
    if mixture.len() < stft_params.window_length {
        return Err(SeparateError::TooShort {
            samples: mixture.len(),
            window: stft_params.window_length,
        });
    }

    let spec = stft(mixture, stft_params)?;
    if spec.frequency_bins() != net.config().input_bins {
        return Err(SeparateError::InvalidArgument(format!(
            "network expects {} bins, spectrogram has {}",
            net.config().input_bins,
            spec.frequency_bins()
        )));
    }
    let features = featurize(&spec);
    let mask = infer_mask_chunked(net, &features, stft_params, mixture.sample_rate(), chunk)?;

    let masked = apply_mask(&spec, &mask)?;
    let estimate = istft(&masked)?;
    let residual: Vec<f64> = mixture
        .samples()
        .iter()
        .zip(estimate.samples())
        .map(|(m, e)| m - e)
        .collect();
    let residual = AudioClip::new(residual, mixture.sample_rate())?;

    let mix_energy: f64 = spec.bins.iter().map(|z| z.norm_sqr()).sum();
    let masked_energy: f64 = masked.bins.iter().map(|z| z.norm_sqr()).sum();
    let diagnostics = Diagnostics {
        mean_mask: mask.iter().sum::<f64>() / mask.len() as f64,
        masked_energy_fraction: if mix_energy > 0.0 { masked_energy / mix_energy } else { 0.0 },
    };
    Ok(SeparationResult { estimate, residual, mask, diagnostics })
}

/// Run the network over overlapping frame windows and blend the masks.
/// Each chunk's mask is weighted by a raised-cosine taper over its
/// overlap zones and the weighted sum is renormalized per frame, so
/// coverage quirks at the clamped final chunk cancel out.
fn infer_mask_chunked(
    net: &MaskNet<f32>,
    features: &Array2<f64>,
    stft_params: &StftParams,
    sample_rate: u32,
    chunk: &ChunkSpec,
) -> Result<Array2<f64>, SeparateError> {
    let (frames, bins) = features.dim();
    let frames_per_second = sample_rate as f64 / stft_params.hop_length as f64;
    let chunk_len = ((chunk.seconds * frames_per_second).round() as usize).max(1).min(frames);
    let overlap = ((chunk.overlap_seconds * frames_per_second).round() as usize)
        .min(chunk_len / 2);
    let step = chunk_len - overlap;

    let mut starts = vec![0usize];
    while starts.last().unwrap() + chunk_len < frames {
        let next = starts.last().unwrap() + step;
        starts.push(next.min(frames - chunk_len));
    }

    let mut acc = Array2::<f64>::zeros((frames, bins));
    let mut weight_sum = vec![0.0f64; frames];
    let last = *starts.last().unwrap();
    for &start in &starts {
        let local = features.slice(ndarray::s![start..start + chunk_len, ..]);
        let local_f32 = local.mapv(|v| v as f32);
        let mask = net.forward(&local_f32)?;

        let fade_in = if start == 0 { 0 } else { overlap };
        let fade_out = if start == last { 0 } else { overlap };
        for i in 0..chunk_len {
            let w = taper(i, chunk_len, fade_in, fade_out);
            weight_sum[start + i] += w;
            let mut row = acc.row_mut(start + i);
            for (a, m) in row.iter_mut().zip(mask.row(i)) {
                *a += w * *m as f64;
            }
        }
    }
    for (mut row, &w) in acc.rows_mut().into_iter().zip(weight_sum.iter()) {
        row.mapv_inplace(|v| v / w);
    }
    Ok(acc)
}

/// Raised-cosine weight for frame `i` of a chunk: fades from ~0 to 1
/// over `fade_in` frames, holds 1, then fades back over `fade_out`.
/// Half-sample offsets keep edge weights strictly positive.
fn taper(i: usize, len: usize, fade_in: usize, fade_out: usize) -> f64 {
    let mut w = 1.0;
    if fade_in > 0 && i < fade_in {
        let x = (i as f64 + 0.5) / fade_in as f64;
        w *= 0.5 * (1.0 - (std::f64::consts::PI * x).cos());
    }
    if fade_out > 0 && i >= len - fade_out {
        let x = ((len - 1 - i) as f64 + 0.5) / fade_out as f64;
        w *= 0.5 * (1.0 - (std::f64::consts::PI * x).cos());
    }
    w
}

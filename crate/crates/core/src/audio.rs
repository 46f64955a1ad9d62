//! Time-domain primitives: sample buffers, decibel math, peak normalization.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate silence: cannot peak-normalize an all-zero clip")]
    DegenerateSilence,
    #[error("empty clip: {0}")]
    EmptyClip(String),
    #[error("sample rate mismatch: {0} vs {1}")]
    SampleRateMismatch(u32, u32),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Mono sample buffer with a sample rate. Samples are finite, nominal
/// full scale is ±1.0 but values outside that range are legal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Build a clip, rejecting non-finite samples and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidArgument("sample_rate must be > 0".into()));
        }
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidArgument(format!(
                "non-finite sample at index {idx}"
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value; 0.0 for an empty clip.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, s| acc.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Multiply every sample by a finite linear gain.
    pub fn scaled(&self, gain: f64) -> Result<Self, AudioError> {
        if !gain.is_finite() {
            return Err(AudioError::InvalidArgument("gain must be finite".into()));
        }
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Sample-wise sum of two clips of equal rate and length.
    pub fn add(&self, other: &AudioClip) -> Result<Self, AudioError> {
        if self.sample_rate != other.sample_rate {
            return Err(AudioError::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(AudioError::LengthMismatch(self.len(), other.len()));
        }
        Self::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            self.sample_rate,
        )
    }

    /// Sample-wise difference (self − other).
    pub fn sub(&self, other: &AudioClip) -> Result<Self, AudioError> {
        self.add(&other.scaled(-1.0)?)
    }

    /// Extract `length_s` seconds starting at `offset_s`, zero-padding past the end.
    pub fn crop_seconds(&self, offset_s: f64, length_s: f64) -> Result<Self, AudioError> {
        if offset_s < 0.0 || length_s < 0.0 || !offset_s.is_finite() || !length_s.is_finite() {
            return Err(AudioError::InvalidArgument(
                "crop offset and length must be finite and non-negative".into(),
            ));
        }
        let start = (offset_s * self.sample_rate as f64).round() as usize;
        let n = (length_s * self.sample_rate as f64).round() as usize;
        let mut out = vec![0.0; n];
        if start < self.samples.len() {
            let avail = (self.samples.len() - start).min(n);
            out[..avail].copy_from_slice(&self.samples[start..start + avail]);
        }
        Self::new(out, self.sample_rate)
    }

    /// Add `other` into this clip starting at sample `at`, growing if needed.
    pub fn mix_at(&mut self, other: &AudioClip, at: usize) -> Result<(), AudioError> {
        if self.sample_rate != other.sample_rate {
            return Err(AudioError::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        let need = at + other.len();
        if self.samples.len() < need {
            self.samples.resize(need, 0.0);
        }
        for (i, s) in other.samples.iter().enumerate() {
            self.samples[at + i] += s;
        }
        Ok(())
    }
}

/// Convert decibels to a linear gain factor: 10^(db/20).
pub fn db_to_gain(db: f64) -> Result<f64, AudioError> {
    if !db.is_finite() {
        return Err(AudioError::InvalidArgument(format!("non-finite dB value {db}")));
    }
    Ok(10f64.powf(db / 20.0))
}

/// Convert a linear amplitude to decibels, flooring at −200 dB.
pub fn gain_to_db(gain: f64) -> f64 {
    20.0 * gain.abs().max(1e-10).log10()
}

/// Scale a clip so its peak absolute sample is exactly 1.0. Returns the
/// normalized clip and the scale that was applied, so callers can apply
/// the identical scale to paired stems.
pub fn peak_normalize(clip: &AudioClip) -> Result<(AudioClip, f64), AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip("cannot normalize an empty clip".into()));
    }
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(AudioError::DegenerateSilence);
    }
    let scale = 1.0 / peak;
    Ok((clip.scaled(scale)?, scale))
}

//! STFT analysis/synthesis and spectrogram masking.
//!
//! Analysis and synthesis both use the same taper; inversion divides the
//! overlap-add by the accumulated window product, so any parameter set
//! whose window/hop combination fully covers the signal reconstructs it
//! exactly. Inputs are padded so every original sample sits in the
//! fully-covered interior.

use crate::audio::{AudioClip, AudioError};
use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StftError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("audio error: {0}")]
    Audio(#[from] AudioError),
}

/// Window taper. The default square-root raised-cosine is its own
/// synthesis pair for mask-and-resynthesize processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    SqrtHann,
    Hann,
    Rect,
}

impl WindowKind {
    fn evaluate(&self, n: usize, len: usize) -> f64 {
        match self {
            WindowKind::Rect => 1.0,
            WindowKind::Hann => hann(n, len),
            WindowKind::SqrtHann => hann(n, len).sqrt(),
        }
    }
}

fn hann(n: usize, len: usize) -> f64 {
    // periodic form, so shifted copies tile evenly
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window_length: 1024, hop_length: 256, fft_size: 1024, window: WindowKind::SqrtHann }
    }
}

impl StftParams {
    pub fn new(
        window_length: usize,
        hop_length: usize,
        fft_size: usize,
        window: WindowKind,
    ) -> Result<Self, StftError> {
        let p = Self { window_length, hop_length, fft_size, window };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StftError> {
        if self.window_length == 0 || self.hop_length == 0 {
            return Err(StftError::InvalidArgument("window and hop must be > 0".into()));
        }
        if self.hop_length > self.window_length {
            return Err(StftError::InvalidArgument(format!(
                "hop {} exceeds window {}",
                self.hop_length, self.window_length
            )));
        }
        if self.fft_size < self.window_length {
            return Err(StftError::InvalidArgument(format!(
                "fft size {} smaller than window {}",
                self.fft_size, self.window_length
            )));
        }
        // overlap-add coverage: the analysis×synthesis product summed over
        // the hop grid must be bounded away from zero everywhere
        let w = self.window_samples();
        let mut min_cov = f64::INFINITY;
        for phase in 0..self.hop_length {
            let mut cov = 0.0;
            let mut n = phase;
            while n < self.window_length {
                cov += w[n] * w[n];
                n += self.hop_length;
            }
            min_cov = min_cov.min(cov);
        }
        if min_cov < 1e-6 {
            return Err(StftError::InvalidArgument(format!(
                "window/hop pair does not satisfy the overlap-add coverage condition \
                 (minimum coverage {min_cov:.2e})"
            )));
        }
        Ok(())
    }

    pub fn frequency_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub(crate) fn window_samples(&self) -> Vec<f64> {
        (0..self.window_length).map(|n| self.window.evaluate(n, self.window_length)).collect()
    }

    fn pad_left(&self) -> usize {
        self.window_length - self.hop_length
    }

    fn frame_count(&self, signal_len: usize) -> usize {
        (self.pad_left() + signal_len.max(1) - 1) / self.hop_length + 1
    }
}

/// Complex time-frequency matrix (frames × frequency bins) plus everything
/// needed to invert it back to exactly the original number of samples.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub params: StftParams,
    pub sample_rate: u32,
    pub original_length: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn frequency_bins(&self) -> usize {
        self.bins.ncols()
    }

    /// |X| per bin.
    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    pub fn total_energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Forward STFT. Frames cover the padded signal so `istft` can return
/// exactly `original_length` samples.
pub fn stft(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram, StftError> {
    params.validate()?;
    if clip.is_empty() {
        return Err(StftError::InvalidArgument("cannot transform an empty clip".into()));
    }
    let window = params.window_samples();
    let pad_left = params.pad_left();
    let n_frames = params.frame_count(clip.len());
    let n_bins = params.frequency_bins();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(params.fft_size);
    let mut frame = vec![Complex64::default(); params.fft_size];
    let mut bins = Array2::default((n_frames, n_bins));

    let samples = clip.samples();
    for m in 0..n_frames {
        frame.fill(Complex64::default());
        let start = m as isize * params.hop_length as isize - pad_left as isize;
        for (n, w) in window.iter().enumerate() {
            let idx = start + n as isize;
            if idx >= 0 && (idx as usize) < samples.len() {
                frame[n] = Complex64::new(samples[idx as usize] * w, 0.0);
            }
        }
        fft.process(&mut frame);
        for (k, b) in bins.row_mut(m).iter_mut().enumerate() {
            *b = frame[k];
        }
    }

    Ok(Spectrogram {
        bins,
        params: *params,
        sample_rate: clip.sample_rate(),
        original_length: clip.len(),
    })
}

/// Inverse STFT: windowed overlap-add normalized by the accumulated
/// window product, trimmed to the stored original length.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip, StftError> {
    let params = &spec.params;
    params.validate()?;
    let n_bins = params.frequency_bins();
    if spec.bins.ncols() != n_bins {
        return Err(StftError::ShapeMismatch {
            expected: (spec.bins.nrows(), n_bins),
            got: (spec.bins.nrows(), spec.bins.ncols()),
        });
    }
    let expected_frames = params.frame_count(spec.original_length);
    if spec.bins.nrows() != expected_frames {
        return Err(StftError::ShapeMismatch {
            expected: (expected_frames, n_bins),
            got: (spec.bins.nrows(), spec.bins.ncols()),
        });
    }

    let window = params.window_samples();
    let pad_left = params.pad_left();
    let n_frames = spec.bins.nrows();
    let padded_len = (n_frames - 1) * params.hop_length + params.window_length;

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(params.fft_size);
    let inv_n = 1.0 / params.fft_size as f64;

    let mut ola = vec![0.0f64; padded_len];
    let mut coverage = vec![0.0f64; padded_len];
    let mut frame = vec![Complex64::default(); params.fft_size];
    for m in 0..n_frames {
        // rebuild the full Hermitian spectrum from the half kept
        for k in 0..n_bins {
            frame[k] = spec.bins[(m, k)];
        }
        for k in n_bins..params.fft_size {
            frame[k] = spec.bins[(m, params.fft_size - k)].conj();
        }
        ifft.process(&mut frame);
        let start = m * params.hop_length;
        for (n, w) in window.iter().enumerate() {
            ola[start + n] += frame[n].re * inv_n * w;
            coverage[start + n] += w * w;
        }
    }

    let mut out = vec![0.0f64; spec.original_length];
    for (i, o) in out.iter_mut().enumerate() {
        let p = pad_left + i;
        if p < padded_len && coverage[p] > 1e-12 {
            *o = ola[p] / coverage[p];
        }
    }
    Ok(AudioClip::new(out, spec.sample_rate)?)
}

/// Scale each complex bin by a real mask entry in [0, 1]; phase is preserved.
pub fn apply_mask(spec: &Spectrogram, mask: &Array2<f64>) -> Result<Spectrogram, StftError> {
    if mask.dim() != spec.bins.dim() {
        return Err(StftError::ShapeMismatch { expected: spec.bins.dim(), got: mask.dim() });
    }
    if let Some(bad) = mask.iter().find(|&&m| !(0.0..=1.0).contains(&m)) {
        return Err(StftError::InvalidArgument(format!(
            "mask entry {bad} outside [0, 1]"
        )));
    }
    let mut out = spec.clone();
    ndarray::Zip::from(&mut out.bins).and(mask).for_each(|b, &m| *b *= m);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, rate: u32) -> AudioClip {
        AudioClip::new(samples, rate).unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let c = AudioClip::silence(4000, 16000).unwrap();
        let s = stft(&c, &StftParams::default()).unwrap();
        assert!(s.bins.iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn bin_center_sinusoid_concentrates_energy() {
        let params = StftParams::default();
        let rate = 16000u32;
        // bin 64 of a 1024-point FFT at 16 kHz => exactly 1000 Hz
        let k = 64usize;
        let freq = k as f64 * rate as f64 / params.fft_size as f64;
        let n = 16000;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        let s = stft(&clip(samples, rate), &params).unwrap();
        // interior frame: at least 99% of energy within ±1 bin of k
        let m = s.frames() / 2;
        let row = s.bins.row(m);
        let total: f64 = row.iter().map(|c| c.norm_sqr()).sum();
        let near: f64 = (k - 1..=k + 1).map(|j| row[j].norm_sqr()).sum();
        assert!(near / total >= 0.99, "concentration {}", near / total);
    }

    #[test]
    fn round_trip_reconstructs_exactly() {
        let params = StftParams::default();
        let n = 12345;
        let samples: Vec<f64> =
            (0..n).map(|i| (i as f64 * 0.017).sin() + 0.3 * (i as f64 * 0.31).cos()).collect();
        let c = clip(samples, 16000);
        let back = istft(&stft(&c, &params).unwrap()).unwrap();
        assert_eq!(back.len(), c.len());
        assert!(rel_l2(back.samples(), c.samples()) < 1e-6);
    }

    #[test]
    fn unit_impulse_reconstructs() {
        let params = StftParams::default();
        let mut samples = vec![0.0; 5000];
        samples[2500] = 1.0;
        let c = clip(samples, 16000);
        let back = istft(&stft(&c, &params).unwrap()).unwrap();
        let mut diff = back.samples().to_vec();
        diff[2500] -= 1.0;
        let err: f64 = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn zero_spectrogram_inverts_to_zero_clip() {
        let params = StftParams::default();
        let c = AudioClip::silence(3000, 16000).unwrap();
        let s = stft(&c, &params).unwrap();
        let back = istft(&s).unwrap();
        assert_eq!(back.len(), 3000);
        assert!(back.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mask_identity_zero_and_half() {
        let params = StftParams::default();
        let samples: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.05).sin()).collect();
        let s = stft(&clip(samples, 16000), &params).unwrap();
        let shape = s.bins.dim();

        let ones = Array2::from_elem(shape, 1.0);
        let masked = apply_mask(&s, &ones).unwrap();
        assert_eq!(masked.bins, s.bins);

        let zeros = Array2::from_elem(shape, 0.0);
        let masked = apply_mask(&s, &zeros).unwrap();
        assert!(masked.bins.iter().all(|b| b.norm() == 0.0));

        let half = Array2::from_elem(shape, 0.5);
        let masked = apply_mask(&s, &half).unwrap();
        for (a, b) in masked.bins.iter().zip(s.bins.iter()) {
            assert!((a.norm() - 0.5 * b.norm()).abs() < 1e-12);
            if b.norm() > 1e-9 {
                assert!((a.arg() - b.arg()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_validation() {
        let params = StftParams::default();
        let s = stft(&clip(vec![0.5; 2048], 16000), &params).unwrap();
        let bad = Array2::from_elem(s.bins.dim(), 1.5);
        assert!(matches!(apply_mask(&s, &bad), Err(StftError::InvalidArgument(_))));
        let wrong = Array2::from_elem((1, 1), 0.5);
        assert!(matches!(apply_mask(&s, &wrong), Err(StftError::ShapeMismatch { .. })));
    }

    #[test]
    fn rejects_uncovered_window_hop_pair() {
        // full hann at hop == window leaves the frame edges uncovered
        assert!(StftParams::new(1024, 1024, 1024, WindowKind::Hann).is_err());
        // rect at hop == window is fine
        assert!(StftParams::new(1024, 1024, 1024, WindowKind::Rect).is_ok());
    }

    #[test]
    fn short_signal_round_trip() {
        let params = StftParams::default();
        let c = clip(vec![0.7, -0.3, 0.2], 16000);
        let back = istft(&stft(&c, &params).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.samples().iter().zip(c.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

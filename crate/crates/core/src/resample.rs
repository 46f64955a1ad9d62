//! Sample-rate conversion with a 64-tap Blackman-windowed sinc kernel.

use crate::audio::{AudioClip, AudioError};

const HALF_TAPS: usize = 32;
const CUTOFF_ROLLOFF: f64 = 0.945;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample to `target_rate`. Identity when rates already match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidArgument("target rate must be > 0".into()));
    }
    if clip.sample_rate() == target_rate {
        return Ok(clip.clone());
    }
    let src = clip.samples();
    let ratio = target_rate as f64 / clip.sample_rate() as f64;
    let out_len = (src.len() as f64 * ratio).round() as usize;
    // cutoff as a fraction of the source Nyquist, with rolloff margin
    let cutoff = CUTOFF_ROLLOFF * ratio.min(1.0);
    let mut out = vec![0.0; out_len];
    for (j, o) in out.iter_mut().enumerate() {
        let center = j as f64 / ratio;
        let k_lo = (center - HALF_TAPS as f64).ceil().max(0.0) as usize;
        let k_hi = ((center + HALF_TAPS as f64).floor() as usize).min(src.len().saturating_sub(1));
        let mut acc = 0.0;
        for k in k_lo..=k_hi {
            let t = center - k as f64;
            acc += src[k] * cutoff * sinc(cutoff * t) * blackman(t / HALF_TAPS as f64);
        }
        *o = acc;
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, seconds: f64) -> AudioClip {
        let n = (seconds * rate as f64) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    #[test]
    fn identity_when_rates_match() {
        let c = sine(440.0, 16000, 0.1);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.samples(), c.samples());
    }

    #[test]
    fn downsampled_sine_preserves_frequency_and_level() {
        let c = sine(440.0, 44100, 0.5);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.sample_rate(), 16000);
        // compare against an ideal 440 Hz sine at the new rate, skipping filter edges
        let skip = 256;
        let ideal = sine(440.0, 16000, r.duration_seconds());
        let mut err = 0.0f64;
        let mut energy = 0.0f64;
        for i in skip..r.len().saturating_sub(skip).min(ideal.len()) {
            let d = r.samples()[i] - ideal.samples()[i];
            err += d * d;
            energy += ideal.samples()[i] * ideal.samples()[i];
        }
        assert!(err / energy < 1e-3, "relative error {}", err / energy);
    }

    #[test]
    fn upsampling_rejects_nothing_above_old_nyquist() {
        // a 7 kHz tone at 16 kHz upsampled to 44.1 kHz stays a 7 kHz tone
        let c = sine(7000.0, 16000, 0.25);
        let r = resample(&c, 44100).unwrap();
        let skip = 512;
        let ideal = sine(7000.0, 44100, r.duration_seconds());
        let mut err = 0.0f64;
        let mut energy = 0.0f64;
        for i in skip..r.len().saturating_sub(skip).min(ideal.len()) {
            let d = r.samples()[i] - ideal.samples()[i];
            err += d * d;
            energy += ideal.samples()[i] * ideal.samples()[i];
        }
        assert!(err / energy < 2e-2, "relative error {}", err / energy);
    }
}

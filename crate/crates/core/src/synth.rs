//! Band-limited additive synthesizer for rendering note events to audio.

use crate::audio::{db_to_gain, AudioClip};
use crate::score::NoteEvent;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use thiserror::Error;

/// Hard cap on additive partials per note, independent of Nyquist.
const MAX_PARTIALS: usize = 256;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty score: no events to render")]
    EmptyScore,
    #[error("no patch assigned to track {0}")]
    MissingAssignment(usize),
    #[error("instrument {name:?} not in patch bank; available: {available:?}")]
    UnknownInstrument { name: String, available: Vec<String> },
    #[error("patch index {index} out of range for instrument {name:?} ({count} patches)")]
    PatchIndex { name: String, index: usize, count: usize },
    #[error("external renderer failed: {0}")]
    ExternalRenderer(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Sine,
    Sawtooth,
    Square,
    Triangle,
}

/// Attack/decay/release in seconds, sustain as a level in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adsr {
    pub attack: f64,
    pub decay: f64,
    pub sustain: f64,
    pub release: f64,
}

impl Default for Adsr {
    fn default() -> Self {
        Self { attack: 0.01, decay: 0.05, sustain: 0.8, release: 0.05 }
    }
}

impl Adsr {
    fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("attack", self.attack),
            ("decay", self.decay),
            ("release", self.release),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::InvalidArgument(format!("adsr {name} {v} must be ≥ 0")));
            }
        }
        if !(self.sustain.is_finite() && (0.0..=1.0).contains(&self.sustain)) {
            return Err(SynthError::InvalidArgument(format!(
                "adsr sustain {} outside [0, 1]",
                self.sustain
            )));
        }
        Ok(())
    }

    /// Envelope level while the note is held (t < duration).
    fn held_level(&self, t: f64) -> f64 {
        if t < self.attack {
            t / self.attack
        } else if t < self.attack + self.decay {
            1.0 + (self.sustain - 1.0) * (t - self.attack) / self.decay
        } else {
            self.sustain
        }
    }

    fn level(&self, t: f64, duration: f64) -> f64 {
        if t < duration {
            self.held_level(t)
        } else if self.release > 0.0 && t < duration + self.release {
            self.held_level(duration) * (1.0 - (t - duration) / self.release)
        } else {
            0.0
        }
    }
}

/// Sinusoidal frequency modulation of the oscillator phase increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vibrato {
    pub rate_hz: f64,
    pub depth_cents: f64,
}

impl Default for Vibrato {
    fn default() -> Self {
        Self { rate_hz: 0.0, depth_cents: 0.0 }
    }
}

impl Vibrato {
    fn validate(&self) -> Result<(), SynthError> {
        if !(self.rate_hz.is_finite() && self.rate_hz >= 0.0) {
            return Err(SynthError::InvalidArgument(format!(
                "vibrato rate {} must be ≥ 0",
                self.rate_hz
            )));
        }
        if !(self.depth_cents.is_finite() && self.depth_cents >= 0.0) {
            return Err(SynthError::InvalidArgument(format!(
                "vibrato depth {} must be ≥ 0",
                self.depth_cents
            )));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.rate_hz > 0.0 && self.depth_cents > 0.0
    }
}

/// A synthesizer timbre preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub waveform: Waveform,
    #[serde(default)]
    pub adsr: Adsr,
    #[serde(default)]
    pub detune_cents: f64,
    #[serde(default)]
    pub vibrato: Vibrato,
    /// dB; −∞ is an explicit mute.
    #[serde(default)]
    pub gain_db: f64,
}

impl Default for Patch {
    fn default() -> Self {
        Self {
            waveform: Waveform::Sine,
            adsr: Adsr::default(),
            detune_cents: 0.0,
            vibrato: Vibrato::default(),
            gain_db: 0.0,
        }
    }
}

impl Patch {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.adsr.validate()?;
        self.vibrato.validate()?;
        if !(self.detune_cents.is_finite() && self.detune_cents.abs() <= 100.0) {
            return Err(SynthError::InvalidArgument(format!(
                "detune {} cents outside [-100, 100]",
                self.detune_cents
            )));
        }
        if self.gain_db.is_nan() || self.gain_db == f64::INFINITY {
            return Err(SynthError::InvalidArgument(format!(
                "patch gain {} dB must be finite or -inf",
                self.gain_db
            )));
        }
        Ok(())
    }

    fn gain(&self) -> Result<f64, SynthError> {
        if self.gain_db == f64::NEG_INFINITY {
            Ok(0.0)
        } else {
            Ok(db_to_gain(self.gain_db)?)
        }
    }
}

/// Named instrument → patch variants. Every instrument has at least one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchBank {
    patches: BTreeMap<String, Vec<Patch>>,
}

impl PatchBank {
    pub fn new(patches: BTreeMap<String, Vec<Patch>>) -> Result<Self, SynthError> {
        let bank = Self { patches };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, list) in &self.patches {
            if list.is_empty() {
                return Err(SynthError::InvalidArgument(format!(
                    "instrument {name:?} has no patches"
                )));
            }
            for patch in list {
                patch.validate()?;
            }
        }
        Ok(())
    }

    pub fn instruments(&self) -> impl Iterator<Item = &str> {
        self.patches.keys().map(String::as_str)
    }

    pub fn patches(&self, instrument: &str) -> Option<&[Patch]> {
        self.patches.get(instrument).map(Vec::as_slice)
    }

    pub fn get(&self, instrument: &str, index: usize) -> Result<Patch, SynthError> {
        let list = self.patches.get(instrument).ok_or_else(|| SynthError::UnknownInstrument {
            name: instrument.to_string(),
            available: self.patches.keys().cloned().collect(),
        })?;
        list.get(index).copied().ok_or_else(|| SynthError::PatchIndex {
            name: instrument.to_string(),
            index,
            count: list.len(),
        })
    }
}

/// 440 · 2^((pitch − 69 + cents/100)/12).
pub fn midi_pitch_to_hz(pitch: u8, detune_cents: f64) -> Result<f64, SynthError> {
    if pitch > 127 {
        return Err(SynthError::InvalidArgument(format!("pitch {pitch} outside 0–127")));
    }
    if !detune_cents.is_finite() {
        return Err(SynthError::InvalidArgument(format!("detune {detune_cents} not finite")));
    }
    Ok(440.0 * ((pitch as f64 - 69.0 + detune_cents / 100.0) / 12.0).exp2())
}

/// Harmonic series of a waveform, band-limited below `nyquist`.
fn partials(waveform: Waveform, f0: f64, nyquist: f64) -> Vec<(usize, f64)> {
    let max_n = ((nyquist / f0).ceil() as usize).saturating_sub(1).min(MAX_PARTIALS);
    let mut out = Vec::new();
    match waveform {
        Waveform::Sine => {
            if max_n >= 1 {
                out.push((1, 1.0));
            }
        }
        Waveform::Sawtooth => {
            let scale = 2.0 / std::f64::consts::PI;
            for n in 1..=max_n {
                let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
                out.push((n, scale * sign / n as f64));
            }
        }
        Waveform::Square => {
            let scale = 4.0 / std::f64::consts::PI;
            for n in (1..=max_n).step_by(2) {
                out.push((n, scale / n as f64));
            }
        }
        Waveform::Triangle => {
            let scale = 8.0 / (std::f64::consts::PI * std::f64::consts::PI);
            for (k, n) in (1..=max_n).step_by(2).enumerate() {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                out.push((n, scale * sign / (n * n) as f64));
            }
        }
    }
    out
}

/// Render one note. Length covers duration plus the release tail.
pub fn render_note(
    note: &NoteEvent,
    patch: &Patch,
    sample_rate: u32,
) -> Result<AudioClip, SynthError> {
    patch.validate()?;
    if sample_rate == 0 {
        return Err(SynthError::InvalidArgument("sample rate must be positive".into()));
    }
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let f0 = midi_pitch_to_hz(note.pitch, patch.detune_cents)?;
    let total_seconds = note.duration + patch.adsr.release;
    let n_samples = (total_seconds * fs).ceil() as usize;
    let amplitude = (note.velocity as f64 / 127.0) * patch.gain()?;
    if amplitude == 0.0 || f0 >= nyquist {
        return Ok(AudioClip::silence(n_samples.max(1), sample_rate)?);
    }

    let parts = partials(patch.waveform, f0, nyquist);
    let base_increment = 2.0 * std::f64::consts::PI * f0 / fs;
    let vibrato = patch.vibrato;
    let vib_phase_inc = 2.0 * std::f64::consts::PI * vibrato.rate_hz / fs;

    let mut samples = vec![0.0f64; n_samples.max(1)];
    let mut phase: f64 = 0.0;
    let mut vib_phase: f64 = 0.0;
    for (i, out) in samples.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let env = patch.adsr.level(t, note.duration);
        if env > 0.0 {
            // harmonic recurrence: sin((n+1)φ) = 2 cos φ sin(nφ) − sin((n−1)φ)
            let (sin1, cos1) = phase.sin_cos();
            let mut sin_prev = 0.0; // sin(0·φ)
            let mut sin_cur = sin1;
            let mut next_n = 1usize;
            let mut acc = 0.0;
            for &(n, amp) in &parts {
                while next_n < n {
                    let sin_next = 2.0 * cos1 * sin_cur - sin_prev;
                    sin_prev = sin_cur;
                    sin_cur = sin_next;
                    next_n += 1;
                }
                acc += amp * sin_cur;
            }
            *out = amplitude * env * acc;
        }
        let increment = if vibrato.is_active() {
            base_increment * (vibrato.depth_cents * vib_phase.sin() / 1200.0).exp2()
        } else {
            base_increment
        };
        phase += increment;
        if phase > 2.0 * std::f64::consts::PI {
            phase -= 2.0 * std::f64::consts::PI;
        }
        vib_phase += vib_phase_inc;
        if vib_phase > 2.0 * std::f64::consts::PI {
            vib_phase -= 2.0 * std::f64::consts::PI;
        }
    }
    Ok(AudioClip::new(samples, sample_rate)?)
}

/// Sum of `render_note` placed at onsets. Output is not normalized;
/// callers control gain staging.
pub fn render_events(
    events: &[NoteEvent],
    patch: &Patch,
    sample_rate: u32,
) -> Result<AudioClip, SynthError> {
    let end = events.iter().map(|e| e.end()).fold(0.0, f64::max) + patch.adsr.release;
    render_events_with_length(events, patch, sample_rate, end)
}

/// `render_events` into a buffer covering at least `min_seconds`.
pub fn render_events_with_length(
    events: &[NoteEvent],
    patch: &Patch,
    sample_rate: u32,
    min_seconds: f64,
) -> Result<AudioClip, SynthError> {
    if events.is_empty() {
        return Err(SynthError::EmptyScore);
    }
    patch.validate()?;
    if !(min_seconds.is_finite() && min_seconds >= 0.0) {
        return Err(SynthError::InvalidArgument(format!(
            "render length {min_seconds} must be ≥ 0"
        )));
    }
    let fs = sample_rate as f64;
    let note_end = events.iter().map(|e| e.end()).fold(0.0, f64::max) + patch.adsr.release;
    let n_samples = ((note_end.max(min_seconds)) * fs).ceil() as usize;
    let mut acc = AudioClip::silence(n_samples.max(1), sample_rate)?;
    for event in events {
        let note = render_note(event, patch, sample_rate)?;
        let offset = (event.onset * fs).round() as usize;
        acc.mix_at(&note, offset)?;
    }
    Ok(acc)
}

/// Per-track choice of instrument and patch variant from a bank.
pub type PatchAssignment = BTreeMap<usize, (String, usize)>;

/// Render every track with its assigned patch and sum at unity gain.
pub fn render_accompaniment(
    tracks: &[Vec<NoteEvent>],
    bank: &PatchBank,
    assignment: &PatchAssignment,
    sample_rate: u32,
) -> Result<AudioClip, SynthError> {
    bank.validate()?;
    let non_empty: Vec<usize> =
        (0..tracks.len()).filter(|&i| !tracks[i].is_empty()).collect();
    if non_empty.is_empty() {
        return Err(SynthError::EmptyScore);
    }
    let mut acc = AudioClip::silence(1, sample_rate)?;
    for &i in &non_empty {
        let (instrument, index) =
            assignment.get(&i).ok_or(SynthError::MissingAssignment(i))?;
        let patch = bank.get(instrument, *index)?;
        let rendered = render_events(&tracks[i], &patch, sample_rate)?;
        acc.mix_at(&rendered, 0)?;
    }
    Ok(acc)
}

/// Renders note events to audio. The built-in implementation is
/// [`AdditiveRenderer`]; [`ExternalRenderer`] shells out instead.
pub trait NoteRenderer {
    fn render(
        &self,
        events: &[NoteEvent],
        sample_rate: u32,
    ) -> Result<AudioClip, SynthError>;
}

/// The built-in additive synthesizer behind [`NoteRenderer`].
#[derive(Debug, Clone)]
pub struct AdditiveRenderer {
    pub patch: Patch,
}

impl NoteRenderer for AdditiveRenderer {
    fn render(
        &self,
        events: &[NoteEvent],
        sample_rate: u32,
    ) -> Result<AudioClip, SynthError> {
        render_events(events, &self.patch, sample_rate)
    }
}

/// Subprocess contract: the command receives an SMF path and a WAV
/// output path as its final two arguments and exits 0 on success.
#[derive(Debug, Clone)]
pub struct ExternalRenderer {
    pub command: String,
    pub args: Vec<String>,
    pub channel: u8,
    pub ticks_per_quarter: u16,
}

impl ExternalRenderer {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), args: Vec::new(), channel: 0, ticks_per_quarter: 480 }
    }
}

impl NoteRenderer for ExternalRenderer {
    fn render(
        &self,
        events: &[NoteEvent],
        sample_rate: u32,
    ) -> Result<AudioClip, SynthError> {
        if events.is_empty() {
            return Err(SynthError::EmptyScore);
        }
        let dir = tempdir_in_std().map_err(|e| SynthError::ExternalRenderer(e.to_string()))?;
        let midi_path = dir.join("input.mid");
        let wav_path = dir.join("output.wav");

        // seconds → ticks at the default 500000 µs/qn tempo
        let tpq = self.ticks_per_quarter as f64;
        let to_tick = |s: f64| (s * tpq / 0.5).round().max(0.0) as u64;
        let notes: Vec<(u64, u64, u8, u8)> = events
            .iter()
            .map(|e| {
                let on = to_tick(e.onset);
                (on, to_tick(e.end()).max(on + 1), e.pitch, e.velocity)
            })
            .collect();
        let bytes = crate::score::smf::encode(
            self.ticks_per_quarter,
            &[(0, 500_000)],
            &[crate::score::smf::SmfTrackSpec { name: None, channel: self.channel, notes }],
        );
        std::fs::write(&midi_path, bytes)
            .map_err(|e| SynthError::ExternalRenderer(format!("write SMF: {e}")))?;

        let status = Command::new(&self.command)
            .args(&self.args)
            .arg(&midi_path)
            .arg(&wav_path)
            .status()
            .map_err(|e| SynthError::ExternalRenderer(format!("spawn {}: {e}", self.command)))?;
        let result = if !status.success() {
            Err(SynthError::ExternalRenderer(format!(
                "{} exited with {status}",
                self.command
            )))
        } else {
            let wav = std::fs::read(&wav_path)
                .map_err(|e| SynthError::ExternalRenderer(format!("read WAV: {e}")))?;
            let clip = crate::wav::parse_wav(&wav)
                .map_err(|e| SynthError::ExternalRenderer(format!("parse WAV: {e}")))?;
            if clip.sample_rate() != sample_rate {
                crate::resample::resample(&clip, sample_rate)
                    .map_err(|e| SynthError::ExternalRenderer(e.to_string()))
            } else {
                Ok(clip)
            }
        };
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

fn tempdir_in_std() -> std::io::Result<std::path::PathBuf> {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_nanos();
    let dir = std::env::temp_dir().join(format!("scoresep-render-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Write `events` to a standalone single-track SMF on disk, for handing
/// scores to external tools.
pub fn write_events_as_midi(
    events: &[NoteEvent],
    ticks_per_quarter: u16,
    path: &Path,
) -> Result<(), SynthError> {
    if events.is_empty() {
        return Err(SynthError::EmptyScore);
    }
    let tpq = ticks_per_quarter as f64;
    let to_tick = |s: f64| (s * tpq / 0.5).round().max(0.0) as u64;
    let notes: Vec<(u64, u64, u8, u8)> = events
        .iter()
        .map(|e| {
            let on = to_tick(e.onset);
            (on, to_tick(e.end()).max(on + 1), e.pitch, e.velocity)
        })
        .collect();
    let bytes = crate::score::smf::encode(
        ticks_per_quarter,
        &[(0, 500_000)],
        &[crate::score::smf::SmfTrackSpec { name: None, channel: 0, notes }],
    );
    std::fs::write(path, bytes).map_err(|e| SynthError::ExternalRenderer(format!("{e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::NoteEvent;

    fn sustain_only() -> Adsr {
        Adsr { attack: 0.0, decay: 0.0, sustain: 1.0, release: 0.0 }
    }

    fn note(pitch: u8, velocity: u8, duration: f64) -> NoteEvent {
        NoteEvent::new(0.0, duration, pitch, velocity, 0).unwrap()
    }

    #[test]
    fn pitch_to_hz_reference_points() {
        assert_eq!(midi_pitch_to_hz(69, 0.0).unwrap(), 440.0);
        assert!((midi_pitch_to_hz(81, 0.0).unwrap() - 880.0).abs() < 1e-9);
        // middle C detuned +50 cents
        assert!((midi_pitch_to_hz(60, 50.0).unwrap() - 269.291779).abs() < 1e-4);
        assert!(midi_pitch_to_hz(128, 0.0).is_err());
    }

    #[test]
    fn sine_peak_lands_in_the_right_bin() {
        let patch = Patch { adsr: sustain_only(), ..Patch::default() };
        let clip = render_note(&note(69, 127, 1.0), &patch, 16_000).unwrap();
        let spec = crate::stft::stft(&clip, &crate::stft::StftParams::default()).unwrap();
        let mag = spec.magnitude();
        // average the magnitude over frames, find the peak bin
        let n_bins = mag.shape()[1];
        let mut sums = vec![0.0; n_bins];
        for row in mag.rows() {
            for (b, v) in row.iter().enumerate() {
                sums[b] += v;
            }
        }
        let peak_bin = sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = 16_000.0f64 / 1024.0;
        let expected = (440.0 / bin_hz).round() as usize;
        assert!(
            (peak_bin as isize - expected as isize).abs() <= 1,
            "peak bin {peak_bin}, expected ≈ {expected}"
        );
    }

    #[test]
    fn velocity_scales_amplitude_linearly() {
        let patch = Patch { adsr: sustain_only(), ..Patch::default() };
        let loud = render_note(&note(60, 127, 0.5), &patch, 16_000).unwrap();
        let soft = render_note(&note(60, 64, 0.5), &patch, 16_000).unwrap();
        let ratio = loud.peak() / soft.peak();
        assert!((ratio - 127.0 / 64.0).abs() / (127.0 / 64.0) < 0.01, "ratio {ratio}");
    }

    #[test]
    fn every_valid_note_renders_non_empty() {
        let patch = Patch::default();
        let clip = render_note(&note(127, 1, 0.01), &patch, 8_000).unwrap();
        assert!(!clip.is_empty());
    }

    #[test]
    fn muted_patch_renders_silence() {
        let patch = Patch { gain_db: f64::NEG_INFINITY, ..Patch::default() };
        let clip = render_note(&note(60, 127, 0.2), &patch, 16_000).unwrap();
        assert_eq!(clip.peak(), 0.0);
    }

    #[test]
    fn band_limited_sawtooth_has_no_alias_energy() {
        // pitch 108 ≈ 4186 Hz at 16 kHz: only the fundamental fits below
        // 8 kHz, so the output must be a pure sinusoid. An unlimited
        // sawtooth's second partial would fold to fs − 2·f0 ≈ 7628 Hz.
        let patch = Patch {
            waveform: Waveform::Sawtooth,
            adsr: sustain_only(),
            ..Patch::default()
        };
        let clip = render_note(&note(108, 127, 1.0), &patch, 16_000).unwrap();

        // steady-state interior slice under a 4-term Blackman-Harris
        // window (sidelobes < −90 dB, main lobe ~8 bins wide)
        let n = 8192;
        let slice = &clip.samples()[2000..2000 + n];
        let mut buf: Vec<num_complex::Complex64> = slice
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
                let w = 0.35875 - 0.48829 * t.cos() + 0.14128 * (2.0 * t).cos()
                    - 0.01168 * (3.0 * t).cos();
                num_complex::Complex64::new(x * w, 0.0)
            })
            .collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);

        let f0 = midi_pitch_to_hz(108, 0.0).unwrap();
        let fundamental_bin = (f0 * n as f64 / 16_000.0).round() as isize;
        let fund = (0..=n / 2)
            .filter(|&b| (b as isize - fundamental_bin).abs() <= 8)
            .map(|b| buf[b].norm())
            .fold(0.0, f64::max);
        let worst_alias = (0..=n / 2)
            .filter(|&b| (b as isize - fundamental_bin).abs() > 8)
            .map(|b| buf[b].norm())
            .fold(0.0, f64::max);
        assert!(
            20.0 * (worst_alias / fund).log10() < -60.0,
            "alias level {} dB",
            20.0 * (worst_alias / fund).log10()
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let patch = Patch {
            waveform: Waveform::Square,
            vibrato: Vibrato { rate_hz: 5.0, depth_cents: 20.0 },
            ..Patch::default()
        };
        let events = vec![note(60, 100, 0.3), NoteEvent::new(0.2, 0.4, 67, 90, 0).unwrap()];
        let a = render_events(&events, &patch, 16_000).unwrap();
        let b = render_events(&events, &patch, 16_000).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn render_events_is_linear() {
        let patch = Patch::default();
        let a = vec![note(60, 100, 0.3)];
        let b = vec![NoteEvent::new(0.5, 0.3, 64, 100, 0).unwrap()];
        let both: Vec<NoteEvent> = a.iter().chain(b.iter()).copied().collect();
        let len = 1.0;
        let ra = render_events_with_length(&a, &patch, 16_000, len).unwrap();
        let rb = render_events_with_length(&b, &patch, 16_000, len).unwrap();
        let rboth = render_events_with_length(&both, &patch, 16_000, len).unwrap();
        let sum = ra.add(&rb).unwrap();
        let diff = rboth.sub(&sum).unwrap();
        assert!(diff.peak() < 1e-9, "linearity error {}", diff.peak());
    }

    #[test]
    fn singleton_render_matches_padded_note() {
        let patch = Patch::default();
        let e = NoteEvent::new(0.25, 0.3, 72, 80, 0).unwrap();
        let events = render_events(&[e], &patch, 16_000).unwrap();
        let alone = render_note(&e, &patch, 16_000).unwrap();
        let offset = (0.25f64 * 16_000.0).round() as usize;
        for (i, s) in alone.samples().iter().enumerate() {
            assert_eq!(events.samples()[offset + i], *s);
        }
        for s in &events.samples()[..offset] {
            assert_eq!(*s, 0.0);
        }
    }

    #[test]
    fn hundred_note_stress_render_is_finite() {
        let patch = Patch { waveform: Waveform::Triangle, ..Patch::default() };
        let events: Vec<NoteEvent> = (0..100)
            .map(|i| {
                NoteEvent::new(i as f64 * 0.05, 0.2, 40 + (i % 40) as u8, 100, 0).unwrap()
            })
            .collect();
        let clip = render_events(&events, &patch, 16_000).unwrap();
        assert!(clip.samples().iter().all(|s| s.is_finite()));
        assert!(clip.peak() > 0.0);
    }

    #[test]
    fn empty_event_list_is_an_error() {
        assert!(matches!(
            render_events(&[], &Patch::default(), 16_000),
            Err(SynthError::EmptyScore)
        ));
    }

    fn test_bank() -> PatchBank {
        let mut map = BTreeMap::new();
        map.insert(
            "lead".to_string(),
            vec![Patch { waveform: Waveform::Sawtooth, ..Patch::default() }],
        );
        map.insert(
            "pad".to_string(),
            vec![Patch { waveform: Waveform::Triangle, ..Patch::default() }, Patch::default()],
        );
        PatchBank::new(map).unwrap()
    }

    #[test]
    fn accompaniment_sums_assigned_tracks() {
        let bank = test_bank();
        let tracks = vec![vec![note(60, 100, 0.3)], vec![note(48, 100, 0.3)]];
        let mut assignment = PatchAssignment::new();
        assignment.insert(0, ("lead".to_string(), 0));
        assignment.insert(1, ("pad".to_string(), 1));
        let mix = render_accompaniment(&tracks, &bank, &assignment, 16_000).unwrap();

        // permuting track order changes nothing
        let tracks_rev = vec![tracks[1].clone(), tracks[0].clone()];
        let mut assignment_rev = PatchAssignment::new();
        assignment_rev.insert(0, ("pad".to_string(), 1));
        assignment_rev.insert(1, ("lead".to_string(), 0));
        let mix_rev =
            render_accompaniment(&tracks_rev, &bank, &assignment_rev, 16_000).unwrap();
        let diff = mix.sub(&mix_rev).unwrap();
        assert!(diff.peak() < 1e-12);
    }

    #[test]
    fn muted_track_contributes_nothing() {
        let mut map = BTreeMap::new();
        map.insert("live".to_string(), vec![Patch::default()]);
        map.insert(
            "muted".to_string(),
            vec![Patch { gain_db: f64::NEG_INFINITY, ..Patch::default() }],
        );
        let bank = PatchBank::new(map).unwrap();
        let tracks = vec![vec![note(60, 100, 0.3)], vec![note(72, 100, 0.3)]];
        let mut assignment = PatchAssignment::new();
        assignment.insert(0, ("live".to_string(), 0));
        assignment.insert(1, ("muted".to_string(), 0));
        let mix = render_accompaniment(&tracks, &bank, &assignment, 16_000).unwrap();
        let solo = render_events(&tracks[0], &Patch::default(), 16_000).unwrap();
        let mut solo_padded = AudioClip::silence(mix.len(), 16_000).unwrap();
        solo_padded.mix_at(&solo, 0).unwrap();
        let diff = mix.sub(&solo_padded).unwrap();
        assert!(diff.peak() < 1e-12);
    }

    #[test]
    fn missing_assignment_is_a_config_error() {
        let bank = test_bank();
        let tracks = vec![vec![note(60, 100, 0.3)]];
        let assignment = PatchAssignment::new();
        assert!(matches!(
            render_accompaniment(&tracks, &bank, &assignment, 16_000),
            Err(SynthError::MissingAssignment(0))
        ));
    }

    #[test]
    fn bank_rejects_empty_instrument() {
        let mut map = BTreeMap::new();
        map.insert("empty".to_string(), Vec::new());
        assert!(PatchBank::new(map).is_err());
    }

    #[test]
    fn patch_invariants_enforced() {
        let bad_sustain = Patch {
            adsr: Adsr { sustain: 1.5, ..Adsr::default() },
            ..Patch::default()
        };
        assert!(bad_sustain.validate().is_err());
        let bad_detune = Patch { detune_cents: 150.0, ..Patch::default() };
        assert!(bad_detune.validate().is_err());
        let bad_attack = Patch {
            adsr: Adsr { attack: -0.1, ..Adsr::default() },
            ..Patch::default()
        };
        assert!(bad_attack.validate().is_err());
    }
}

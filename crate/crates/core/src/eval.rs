//! Quantitative evaluation on synthetic benchmark songs.
//!
//! Each song is generated from a seed: a pentatonic melody (the target)
//! over a bass line and block chords (the accompaniment). Ground-truth
//! stems build the test mixture; a surrogate stream trained from the
//! melody score alone drives the network, exactly as a real run would,
//! so the benchmark exercises the full pipeline against known stems.

use crate::augment::{
    score_target_source, AugmentError, AugmentRanges, BackgroundSource, BackgroundStrategy,
    CompressorParams, ExampleStream,
};
use crate::model::{tpsa_target, Adam, MaskNet, MaskNetConfig, ModelError, TrainConfig};
use crate::score::{NoteEvent, ScoreError};
use crate::separate::{separate, ChunkSpec, SeparateError};
use crate::stft::{apply_mask, istft, stft, StftError, StftParams};
use crate::synth::{render_events, Adsr, Patch, SynthError, Vibrato, Waveform};
use crate::{AudioClip, AudioError};
use ndarray::Zip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Separate(#[from] SeparateError),
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// SI-SDR values are clamped to ±60 dB; a zero error term (perfect
/// reconstruction up to scale) reports the +60 cap.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant signal-to-distortion ratio of `estimate` against
/// `reference`, in dB.
pub fn si_sdr(estimate: &AudioClip, reference: &AudioClip) -> Result<f64, EvalError> {
    if estimate.len() != reference.len() {
        return Err(EvalError::InvalidArgument(format!(
            "length mismatch: estimate {} vs reference {} samples",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.samples().iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(EvalError::InvalidArgument("reference is silent".into()));
    }
    let dot: f64 =
        estimate.samples().iter().zip(reference.samples()).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let signal = alpha * alpha * ref_energy;
    let error: f64 = estimate
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(e, r)| {
            let d = alpha * r - e;
            d * d
        })
        .sum();
    if error == 0.0 || signal / error > 1e6 {
        return Ok(SI_SDR_CAP_DB);
    }
    if signal == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (signal / error).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Seeds that fully determine one benchmark song's run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSeeds {
    /// Drives score generation.
    pub song: u64,
    /// Drives the surrogate example stream.
    pub stream: u64,
    /// Drives network initialization.
    pub network: u64,
    /// Drives training-time dropout.
    pub train: u64,
}

/// Per-song evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub song: String,
    pub estimate_si_sdr_db: f64,
    pub baseline_si_sdr_db: f64,
    /// Always estimate − baseline.
    pub si_sdr_improvement_db: f64,
    /// SI-SDR of the oracle tPSA mask computed from the true stems; an
    /// upper bound no trained mask should beat.
    pub oracle_si_sdr_db: f64,
    pub final_train_loss: f64,
    pub seeds: ReportSeeds,
    pub config_hash: String,
    pub wall_time_s: f64,
}

/// One synthetic song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SongSpec {
    pub name: String,
    pub seed: u64,
    /// Song length in seconds.
    #[serde(default = "default_song_seconds")]
    pub seconds: f64,
    /// Render ground-truth stems with different patches than training
    /// used, modeling a transcription that is only loosely similar.
    #[serde(default)]
    pub mismatched_patches: bool,
    /// Drop the accompaniment from the test mixture entirely.
    #[serde(default)]
    pub silent_accompaniment: bool,
}

fn default_song_seconds() -> f64 {
    12.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub songs: Vec<SongSpec>,
    #[serde(default = "default_bench_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_bench_stft")]
    pub stft: StftParams,
    #[serde(default = "default_bench_hidden")]
    pub hidden_units_per_direction: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_bench_ranges")]
    pub ranges: AugmentRanges,
    #[serde(default)]
    pub compressor: CompressorParams,
    #[serde(default)]
    pub chunk: ChunkSpec,
}

fn default_bench_rate() -> u32 {
    8000
}

fn default_bench_stft() -> StftParams {
    StftParams { window_length: 512, hop_length: 128, fft_size: 512, ..StftParams::default() }
}

fn default_bench_hidden() -> usize {
    64
}

fn default_bench_ranges() -> AugmentRanges {
    AugmentRanges { excerpt_seconds: 4.0, ..AugmentRanges::default() }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.songs.is_empty() {
            return Err(EvalError::InvalidArgument("benchmark needs ≥ 1 song".into()));
        }
        if self.sample_rate == 0 {
            return Err(EvalError::InvalidArgument("sample rate must be ≥ 1".into()));
        }
        if self.hidden_units_per_direction == 0 {
            return Err(EvalError::InvalidArgument("hidden units must be ≥ 1".into()));
        }
        for song in &self.songs {
            if song.name.is_empty() {
                return Err(EvalError::InvalidArgument("song names may not be empty".into()));
            }
            if !(song.seconds.is_finite() && song.seconds > 0.0) {
                return Err(EvalError::InvalidArgument(format!(
                    "song {} length {} s must be positive",
                    song.name, song.seconds
                )));
            }
            if song.seconds < self.ranges.excerpt_seconds {
                return Err(EvalError::InvalidArgument(format!(
                    "song {} ({} s) is shorter than the {} s training excerpt",
                    song.name, song.seconds, self.ranges.excerpt_seconds
                )));
            }
        }
        self.stft.validate().map_err(EvalError::Stft)?;
        self.train.validate().map_err(EvalError::Model)?;
        self.ranges.validate().map_err(EvalError::Augment)?;
        self.compressor.validate().map_err(EvalError::Augment)?;
        self.chunk.validate().map_err(EvalError::Separate)?;
        Ok(())
    }

    /// Hash of the serialized config; stamped into every report so runs
    /// can be told apart after the fact.
    pub fn content_hash(&self) -> Result<String, EvalError> {
        Ok(crate::augment::sha256_hex(&serde_json::to_vec(self)?))
    }

    /// The bundled benchmark: three songs with mismatched train and test
    /// patches, sized so the whole sweep stays within a desktop-CPU
    /// budget while leaving clear headroom over its quality floors.
    pub fn bundled() -> Self {
        let song = |name: &str, seed: u64| SongSpec {
            name: name.to_string(),
            seed,
            seconds: default_song_seconds(),
            mismatched_patches: true,
            silent_accompaniment: false,
        };
        Self {
            songs: vec![song("song-a", 11), song("song-b", 23), song("song-c", 37)],
            sample_rate: default_bench_rate(),
            stft: default_bench_stft(),
            hidden_units_per_direction: default_bench_hidden(),
            train: TrainConfig { steps: 600, ..TrainConfig::default() },
            ranges: default_bench_ranges(),
            compressor: CompressorParams::default(),
            chunk: ChunkSpec::default(),
        }
    }
}

/// A song's scores, by part.
#[derive(Debug, Clone)]
pub struct SongScores {
    pub melody: Vec<NoteEvent>,
    pub bass: Vec<NoteEvent>,
    pub chords: Vec<NoteEvent>,
}

/// Two patches per part: index 0 trains, index 1 stands in for the
/// "loosely similar" real instrument when a song asks for a mismatch.
pub fn benchmark_patches() -> [[Patch; 2]; 3] {
    let lead_a = Patch {
        waveform: Waveform::Sawtooth,
        adsr: Adsr { attack: 0.01, decay: 0.08, sustain: 0.75, release: 0.06 },
        detune_cents: 0.0,
        vibrato: Vibrato { rate_hz: 5.0, depth_cents: 8.0 },
        gain_db: 0.0,
    };
    let lead_b = Patch {
        waveform: Waveform::Sawtooth,
        adsr: Adsr { attack: 0.02, decay: 0.12, sustain: 0.65, release: 0.09 },
        detune_cents: 6.0,
        vibrato: Vibrato { rate_hz: 4.3, depth_cents: 14.0 },
        gain_db: -1.0,
    };
    let bass_a = Patch {
        waveform: Waveform::Triangle,
        adsr: Adsr { attack: 0.008, decay: 0.1, sustain: 0.8, release: 0.08 },
        detune_cents: 0.0,
        vibrato: Vibrato::default(),
        gain_db: -3.0,
    };
    let bass_b = Patch { detune_cents: -5.0, gain_db: -4.0, ..bass_a.clone() };
    let chords_a = Patch {
        waveform: Waveform::Square,
        adsr: Adsr { attack: 0.015, decay: 0.15, sustain: 0.6, release: 0.1 },
        detune_cents: 0.0,
        vibrato: Vibrato::default(),
        gain_db: -9.0,
    };
    let chords_b = Patch { detune_cents: 4.0, gain_db: -10.0, ..chords_a.clone() };
    [[lead_a, lead_b], [bass_a, bass_b], [chords_a, chords_b]]
}

/// Generate a song's scores from its seed: a pentatonic melody in
/// eighth-ish notes, roots and fifths in the bass, and a triad pad.
pub fn generate_song(spec: &SongSpec) -> Result<SongScores, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let root: u8 = 60 + rng.random_range(0..5); // C4..E4
    let scale = [0u8, 2, 4, 7, 9];

    let mut melody = Vec::new();
    let mut t = 0.0;
    while t < spec.seconds - 0.3 {
        let step = rng.random_range(0.22..0.42);
        if rng.random_range(0.0..1.0) < 0.15 {
            t += step; // rest
            continue;
        }
        let degree = scale[rng.random_range(0..scale.len())];
        let octave = if rng.random_range(0.0..1.0) < 0.25 { 12 } else { 0 };
        let pitch = root + 12 + degree + octave;
        let duration = (step * rng.random_range(0.8..1.1)).min(spec.seconds - t);
        let velocity = rng.random_range(80..=115);
        melody.push(NoteEvent::new(t, duration, pitch, velocity, 0)?);
        t += step;
    }

    let mut bass = Vec::new();
    let mut t = 0.0;
    let mut bar = 0usize;
    while t < spec.seconds - 0.5 {
        let fifth = bar % 2 == 1;
        let pitch = root - 24 + if fifth { 7 } else { 0 };
        bass.push(NoteEvent::new(t, 0.7, pitch, 96, 1)?);
        t += 0.8;
        bar += 1;
    }

    let mut chords = Vec::new();
    let mut t = 0.4;
    while t < spec.seconds - 0.6 {
        for interval in [0u8, 4, 7] {
            chords.push(NoteEvent::new(t, 0.55, root + interval, 72, 2)?);
        }
        t += 0.8;
    }

    if melody.is_empty() || bass.is_empty() || chords.is_empty() {
        return Err(EvalError::InvalidArgument(format!(
            "song {} too short to populate all parts",
            spec.name
        )));
    }
    Ok(SongScores { melody, bass, chords })
}

/// Bass plus chords rendered with one column of the patch table.
fn render_accompaniment_parts(
    scores: &SongScores,
    column: usize,
    sample_rate: u32,
) -> Result<AudioClip, EvalError> {
    let patches = benchmark_patches();
    let mut accompaniment = render_events(&scores.bass, &patches[1][column], sample_rate)?;
    let chords = render_events(&scores.chords, &patches[2][column], sample_rate)?;
    accompaniment.mix_at(&chords, 0)?;
    Ok(accompaniment)
}

/// Ground-truth stems for a song: (target, accompaniment or silence).
fn render_stems(
    spec: &SongSpec,
    scores: &SongScores,
    sample_rate: u32,
) -> Result<(AudioClip, AudioClip), EvalError> {
    let patches = benchmark_patches();
    let test = usize::from(spec.mismatched_patches);
    let target = render_events(&scores.melody, &patches[0][test], sample_rate)?;
    if spec.silent_accompaniment {
        return Ok((target.clone(), AudioClip::silence(target.len(), sample_rate)?));
    }
    let accompaniment = render_accompaniment_parts(scores, test, sample_rate)?;
    Ok((target, accompaniment))
}

/// Oracle separation: apply the tPSA mask computed from the true stems.
pub fn oracle_separation(
    mixture: &AudioClip,
    target_stem: &AudioClip,
    stft_params: &StftParams,
) -> Result<AudioClip, EvalError> {
    let mix_spec = stft(mixture, stft_params)?;
    let tgt_spec = stft(target_stem, stft_params)?;
    let target = tpsa_target(&mix_spec, &tgt_spec)?;
    let magnitude = mix_spec.magnitude();
    let mask = Zip::from(&target)
        .and(&magnitude)
        .map_collect(|&t, &m| if m > 0.0 { t / m } else { 0.0 });
    Ok(istft(&apply_mask(&mix_spec, &mask)?)?)
}

/// Run every song in the config; failures are recorded per song and do
/// not stop the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongResult {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub songs: Vec<SongResult>,
    pub total_wall_time_s: f64,
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport, EvalError> {
    run_benchmark_with(config, |_, _| {})
}

/// `on_song` observes each finished song (name, Some(report) on
/// success), mainly for progress logging.
pub fn run_benchmark_with(
    config: &BenchConfig,
    mut on_song: impl FnMut(&str, Option<&EvalReport>),
) -> Result<BenchReport, EvalError> {
    config.validate()?;
    let started = Instant::now();
    let mut songs = Vec::with_capacity(config.songs.len());
    for spec in &config.songs {
        match run_song(config, spec) {
            Ok(report) => {
                on_song(&spec.name, Some(&report));
                songs.push(SongResult { name: spec.name.clone(), report: Some(report), error: None });
            }
            Err(e) => {
                on_song(&spec.name, None);
                songs.push(SongResult {
                    name: spec.name.clone(),
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(BenchReport { songs, total_wall_time_s: started.elapsed().as_secs_f64() })
}

fn run_song(config: &BenchConfig, spec: &SongSpec) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    let scores = generate_song(spec)?;
    let (target_stem, accompaniment) = render_stems(spec, &scores, config.sample_rate)?;
    let mut mixture = target_stem.clone();
    mixture.mix_at(&accompaniment, 0)?;

    // surrogate training sees only the training patch and the mixture
    let patches = benchmark_patches();
    let target_source = score_target_source(
        scores.melody.clone(),
        vec![patches[0][0].clone()],
        config.sample_rate,
    )?;
    let background =
        BackgroundSource::new(BackgroundStrategy::OriginalMixture, mixture.clone())?;

    let seeds = ReportSeeds {
        song: spec.seed,
        stream: spec.seed.wrapping_add(1),
        network: spec.seed.wrapping_add(2),
        train: config.train.seed,
    };
    let need = config.train.steps * config.train.batch_size as u64;
    let stream = ExampleStream::new(
        seeds.stream,
        need,
        target_source,
        background,
        config.ranges.clone(),
        config.compressor,
    )?;

    let spec_probe = stft(&mixture, &config.stft)?;
    let net_config = MaskNetConfig {
        hidden_units_per_direction: config.hidden_units_per_direction,
        ..MaskNetConfig::new(spec_probe.frequency_bins())
    };
    let mut net = MaskNet::<f32>::new(net_config, seeds.network)?;
    let mut opt = Adam::new(net.parameters().len());
    let records = crate::model::train(
        &mut net,
        &mut opt,
        &stream,
        &config.stft,
        &config.train,
        |_| Ok(()),
        |_, _, _| Ok(()),
    )?;

    let separation = separate(&mixture, &net, &config.stft, &config.chunk)?;
    let estimate_si_sdr_db = si_sdr(&separation.estimate, &target_stem)?;
    let baseline_si_sdr_db = si_sdr(&mixture, &target_stem)?;
    let oracle_estimate = oracle_separation(&mixture, &target_stem, &config.stft)?;
    let oracle_si_sdr_db = si_sdr(&oracle_estimate, &target_stem)?;

    Ok(EvalReport {
        song: spec.name.clone(),
        estimate_si_sdr_db,
        baseline_si_sdr_db,
        si_sdr_improvement_db: estimate_si_sdr_db - baseline_si_sdr_db,
        oracle_si_sdr_db,
        final_train_loss: records.last().map_or(f64::NAN, |r| r.loss),
        seeds,
        config_hash: config.content_hash()?,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

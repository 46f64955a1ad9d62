//! Surrogate training-mixture construction: sampled gains, crops and
//! time scaling, background summation, dynamic range compression, and
//! peak normalization, all deterministically seeded.

use crate::audio::{db_to_gain, gain_to_db, peak_normalize, AudioClip, AudioError};
use crate::score::{time_scale, NoteEvent, ScoreError};
use crate::synth::{render_events_with_length, Patch, SynthError};
use crate::wav::WavError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// A crop window in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub offset_seconds: f64,
    pub length_seconds: f64,
}

impl Crop {
    fn validate(&self) -> Result<(), AugmentError> {
        if !(self.offset_seconds.is_finite() && self.offset_seconds >= 0.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "crop offset {} must be ≥ 0",
                self.offset_seconds
            )));
        }
        if !(self.length_seconds.is_finite() && self.length_seconds > 0.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "crop length {} must be > 0",
                self.length_seconds
            )));
        }
        Ok(())
    }

    fn end(&self) -> f64 {
        self.offset_seconds + self.length_seconds
    }
}

/// Everything needed to rebuild one training mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRecipe {
    pub gain_target_db: f64,
    pub gain_background_db: f64,
    pub compression_ratio: f64,
    pub target_crop: Crop,
    pub background_crop: Crop,
    pub time_scale_factor: f64,
    pub seed: u64,
}

impl MixRecipe {
    /// Structural checks; distribution bounds are enforced at sampling
    /// and configuration time instead.
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, g) in [
            ("target gain", self.gain_target_db),
            ("background gain", self.gain_background_db),
        ] {
            if !g.is_finite() {
                return Err(AugmentError::InvalidArgument(format!("{name} {g} not finite")));
            }
        }
        if !(self.compression_ratio.is_finite() && self.compression_ratio >= 1.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "compression ratio {} must be ≥ 1",
                self.compression_ratio
            )));
        }
        self.target_crop.validate()?;
        self.background_crop.validate()?;
        if (self.target_crop.length_seconds - self.background_crop.length_seconds).abs() > 1e-9 {
            return Err(AugmentError::InvalidArgument(
                "target and background crops must have equal length".into(),
            ));
        }
        if !(0.5..=2.0).contains(&self.time_scale_factor) {
            return Err(AugmentError::InvalidArgument(format!(
                "time-scale factor {} outside [0.5, 2.0]",
                self.time_scale_factor
            )));
        }
        Ok(())
    }
}

/// Feed-forward peak compressor settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressorParams {
    pub threshold_dbfs: f64,
    pub ratio: f64,
    pub attack_seconds: f64,
    pub release_seconds: f64,
    pub makeup_gain_db: f64,
}

impl Default for CompressorParams {
    /// Conventional bus-compression settings.
    fn default() -> Self {
        Self {
            threshold_dbfs: -20.0,
            ratio: 4.0,
            attack_seconds: 0.005,
            release_seconds: 0.100,
            makeup_gain_db: 0.0,
        }
    }
}

impl CompressorParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !self.threshold_dbfs.is_finite() {
            return Err(AugmentError::InvalidArgument("threshold must be finite".into()));
        }
        if !(self.ratio.is_finite() && self.ratio >= 1.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "ratio {} must be ≥ 1",
                self.ratio
            )));
        }
        for (name, v) in [("attack", self.attack_seconds), ("release", self.release_seconds)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(AugmentError::InvalidArgument(format!("{name} {v} must be > 0")));
            }
        }
        if !self.makeup_gain_db.is_finite() {
            return Err(AugmentError::InvalidArgument("makeup gain must be finite".into()));
        }
        Ok(())
    }
}

/// Where the background audio comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundStrategy {
    /// The original recorded mixture itself.
    OriginalMixture,
    /// Accompaniment synthesized from the remaining score tracks.
    SynthesizedAccompaniment,
}

#[derive(Debug, Clone)]
pub struct BackgroundSource {
    pub strategy: BackgroundStrategy,
    payload: AudioClip,
}

impl BackgroundSource {
    pub fn new(strategy: BackgroundStrategy, payload: AudioClip) -> Result<Self, AugmentError> {
        if payload.is_empty() {
            return Err(AugmentError::InvalidArgument("background payload is empty".into()));
        }
        Ok(Self { strategy, payload })
    }

    pub fn payload(&self) -> &AudioClip {
        &self.payload
    }
}

/// Sampling ranges for recipe generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    /// Uniform gain range, dB, applied independently to target and background.
    pub gain_db: (f64, f64),
    /// Compression ratios drawn uniformly from this set.
    pub compression_ratios: Vec<f64>,
    /// Uniform time-scale factor range applied to the target score.
    pub time_scale: (f64, f64),
    /// Length of each training excerpt, seconds.
    pub excerpt_seconds: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            gain_db: (-12.0, 6.0),
            compression_ratios: vec![2.0, 4.0, 8.0, 12.0, 16.0, 20.0],
            time_scale: (0.9, 1.1),
            excerpt_seconds: 8.0,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let (lo, hi) = self.gain_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(AugmentError::InvalidArgument(format!(
                "gain range ({lo}, {hi}) must be finite and ordered"
            )));
        }
        if self.compression_ratios.is_empty() {
            return Err(AugmentError::InvalidArgument("no compression ratios".into()));
        }
        for &r in &self.compression_ratios {
            if !(r.is_finite() && r >= 1.0) {
                return Err(AugmentError::InvalidArgument(format!("ratio {r} must be ≥ 1")));
            }
        }
        let (tlo, thi) = self.time_scale;
        if !(tlo.is_finite() && thi.is_finite() && 0.5 <= tlo && tlo <= thi && thi <= 2.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "time-scale range ({tlo}, {thi}) must sit inside [0.5, 2.0]"
            )));
        }
        if !(self.excerpt_seconds.is_finite() && self.excerpt_seconds > 0.0) {
            return Err(AugmentError::InvalidArgument("excerpt length must be > 0".into()));
        }
        Ok(())
    }

    /// Reject values outside the documented training distribution
    /// (gains in [−12, 6] dB, ratios from {2, 4, 8, 12, 16, 20},
    /// time scale in [0.9, 1.1]). Configs may opt out explicitly.
    pub fn check_standard_bounds(&self) -> Result<(), AugmentError> {
        let d = AugmentRanges::default();
        if self.gain_db.0 < d.gain_db.0 || self.gain_db.1 > d.gain_db.1 {
            return Err(AugmentError::InvalidArgument(format!(
                "gain range ({}, {}) outside the standard ({}, {}) dB",
                self.gain_db.0, self.gain_db.1, d.gain_db.0, d.gain_db.1
            )));
        }
        for &r in &self.compression_ratios {
            if !d.compression_ratios.iter().any(|&s| (s - r).abs() < 1e-12) {
                return Err(AugmentError::InvalidArgument(format!(
                    "compression ratio {r} outside the standard set {:?}",
                    d.compression_ratios
                )));
            }
        }
        if self.time_scale.0 < d.time_scale.0 || self.time_scale.1 > d.time_scale.1 {
            return Err(AugmentError::InvalidArgument(format!(
                "time-scale range ({}, {}) outside the standard ({}, {})",
                self.time_scale.0, self.time_scale.1, d.time_scale.0, d.time_scale.1
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; decorrelates sequential seeds.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for element `index` of a stream keyed by `seed`.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Draw one recipe with the default ranges.
pub fn sample_recipe(
    rng: &mut impl Rng,
    target_len: f64,
    background_len: f64,
    excerpt_len: f64,
) -> Result<MixRecipe, AugmentError> {
    let mut ranges = AugmentRanges::default();
    ranges.excerpt_seconds = excerpt_len;
    sample_recipe_with(rng, &ranges, target_len, background_len)
}

/// Draw one recipe. Field order is fixed (gains, ratio, time scale,
/// crops, seed) so a given rng state always yields the same recipe.
pub fn sample_recipe_with(
    rng: &mut impl Rng,
    ranges: &AugmentRanges,
    target_len: f64,
    background_len: f64,
) -> Result<MixRecipe, AugmentError> {
    ranges.validate()?;
    let excerpt = ranges.excerpt_seconds;
    if excerpt > target_len || excerpt > background_len {
        return Err(AugmentError::InvalidArgument(format!(
            "excerpt {excerpt} s exceeds a source (target {target_len} s, background {background_len} s)"
        )));
    }

    let (glo, ghi) = ranges.gain_db;
    let gain_target_db = rng.random_range(glo..=ghi);
    let gain_background_db = rng.random_range(glo..=ghi);
    let compression_ratio =
        ranges.compression_ratios[rng.random_range(0..ranges.compression_ratios.len())];

    // the scaled target must still cover one excerpt
    let (tlo, thi) = ranges.time_scale;
    let tlo_eff = tlo.max(excerpt / target_len);
    if tlo_eff > thi {
        return Err(AugmentError::InvalidArgument(format!(
            "excerpt {excerpt} s cannot fit the target at any time scale in ({tlo}, {thi})"
        )));
    }
    let time_scale_factor = rng.random_range(tlo_eff..=thi);

    let target_max_offset = (time_scale_factor * target_len - excerpt).max(0.0);
    let background_max_offset = (background_len - excerpt).max(0.0);
    let target_offset = rng.random_range(0.0..=target_max_offset);
    let background_offset = rng.random_range(0.0..=background_max_offset);
    let seed = rng.random::<u64>();

    Ok(MixRecipe {
        gain_target_db,
        gain_background_db,
        compression_ratio,
        target_crop: Crop { offset_seconds: target_offset, length_seconds: excerpt },
        background_crop: Crop { offset_seconds: background_offset, length_seconds: excerpt },
        time_scale_factor,
        seed,
    })
}

/// Feed-forward compressor. A peak tracker (instant rise, release-rate
/// decay) feeds an exponential smoother (attack coefficient when rising,
/// release when falling); that keeps a steady sinusoid's envelope at its
/// crest instead of sagging toward the rectified mean. Reduction is
/// min(0, (threshold − envelope_dB)·(1 − 1/ratio)); makeup comes last.
pub fn compress(clip: &AudioClip, params: &CompressorParams) -> Result<AudioClip, AugmentError> {
    params.validate()?;
    let fs = clip.sample_rate() as f64;
    let attack_coef = (-1.0 / (params.attack_seconds * fs)).exp();
    let release_coef = (-1.0 / (params.release_seconds * fs)).exp();
    let slope = 1.0 - 1.0 / params.ratio;
    let makeup = db_to_gain(params.makeup_gain_db)?;

    let mut peak = 0.0f64;
    let mut envelope = 0.0f64;
    let out: Vec<f64> = clip
        .samples()
        .iter()
        .map(|&x| {
            peak = x.abs().max(release_coef * peak);
            let coef = if peak > envelope { attack_coef } else { release_coef };
            envelope = coef * envelope + (1.0 - coef) * peak;
            let reduction_db = ((params.threshold_dbfs - gain_to_db(envelope)) * slope).min(0.0);
            x * 10f64.powf(reduction_db / 20.0) * makeup
        })
        .collect();
    Ok(AudioClip::new(out, clip.sample_rate())?)
}

fn check_crop(crop: &Crop, clip: &AudioClip, what: &str) -> Result<(), AugmentError> {
    // half-sample slack absorbs rounding at the crop boundary
    let slack = 0.5 / clip.sample_rate() as f64;
    if crop.end() > clip.duration_seconds() + slack {
        return Err(AugmentError::InvalidArgument(format!(
            "{what} crop [{:.3}, {:.3}) s exceeds the {:.3} s source",
            crop.offset_seconds,
            crop.end(),
            clip.duration_seconds()
        )));
    }
    Ok(())
}

/// Build one (mix, reference) pair:
/// crop both sources, apply the recipe gains, sum, compress at the
/// recipe's ratio, peak-normalize, and scale the pre-compression target
/// crop by the same normalization constant. The reference stays a
/// scalar multiple of the cropped target.
pub fn make_training_example(
    target: &AudioClip,
    background: &BackgroundSource,
    recipe: &MixRecipe,
    comp: &CompressorParams,
) -> Result<(AudioClip, AudioClip), AugmentError> {
    recipe.validate()?;
    comp.validate()?;
    if target.sample_rate() != background.payload.sample_rate() {
        return Err(AudioError::SampleRateMismatch(
            target.sample_rate(),
            background.payload.sample_rate(),
        )
        .into());
    }
    check_crop(&recipe.target_crop, target, "target")?;
    check_crop(&recipe.background_crop, background.payload(), "background")?;

    let t = target
        .crop_seconds(recipe.target_crop.offset_seconds, recipe.target_crop.length_seconds)?
        .scaled(db_to_gain(recipe.gain_target_db)?)?;
    let b = background
        .payload
        .crop_seconds(
            recipe.background_crop.offset_seconds,
            recipe.background_crop.length_seconds,
        )?
        .scaled(db_to_gain(recipe.gain_background_db)?)?;

    let effective = CompressorParams { ratio: recipe.compression_ratio, ..*comp };
    let compressed = compress(&t.add(&b)?, &effective)?;
    let (mix, scale) = peak_normalize(&compressed)?;
    let reference = t.scaled(scale)?;
    Ok((mix, reference))
}

/// A target that can be re-rendered per example with a patch variant
/// and a time-scale factor. `render` receives (patch index, time scale,
/// (crop offset s, crop length s)) and must return a clip covering
/// [0, offset + length); audio outside the crop window may be silent.
pub struct TargetSource<'a> {
    nominal_seconds: f64,
    patch_count: usize,
    sample_rate: u32,
    #[allow(clippy::type_complexity)]
    render: Box<dyn Fn(usize, f64, (f64, f64)) -> Result<AudioClip, AugmentError> + Send + Sync + 'a>,
}

impl<'a> TargetSource<'a> {
    pub fn new(
        nominal_seconds: f64,
        patch_count: usize,
        sample_rate: u32,
        render: impl Fn(usize, f64, (f64, f64)) -> Result<AudioClip, AugmentError>
            + Send
            + Sync
            + 'a,
    ) -> Result<Self, AugmentError> {
        if !(nominal_seconds.is_finite() && nominal_seconds > 0.0) {
            return Err(AugmentError::InvalidArgument(format!(
                "target duration {nominal_seconds} must be > 0"
            )));
        }
        if patch_count == 0 {
            return Err(AugmentError::InvalidArgument("target needs ≥ 1 patch".into()));
        }
        Ok(Self { nominal_seconds, patch_count, sample_rate, render: Box::new(render) })
    }

    /// A fixed clip as the target. Time scaling is unsupported here, so
    /// pair this with a (1.0, 1.0) time-scale range.
    pub fn from_clip(clip: AudioClip) -> Result<TargetSource<'static>, AugmentError> {
        if clip.is_empty() {
            return Err(AugmentError::InvalidArgument("target clip is empty".into()));
        }
        let nominal = clip.duration_seconds();
        let rate = clip.sample_rate();
        TargetSource::new(nominal, 1, rate, move |_, ts, _| {
            if (ts - 1.0).abs() > 1e-9 {
                return Err(AugmentError::InvalidArgument(
                    "a fixed-clip target cannot be time-scaled".into(),
                ));
            }
            Ok(clip.clone())
        })
    }

    pub fn nominal_seconds(&self) -> f64 {
        self.nominal_seconds
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }
}

/// Target built from score events and patch variants. Only notes
/// overlapping the requested crop window are rendered.
pub fn score_target_source(
    events: Vec<NoteEvent>,
    patches: Vec<Patch>,
    sample_rate: u32,
) -> Result<TargetSource<'static>, AugmentError> {
    if events.is_empty() {
        return Err(AugmentError::InvalidArgument("target score has no events".into()));
    }
    if patches.is_empty() {
        return Err(AugmentError::InvalidArgument("target needs ≥ 1 patch".into()));
    }
    for patch in &patches {
        patch.validate()?;
    }
    let nominal = events.iter().map(|e| e.end()).fold(0.0, f64::max);
    let patch_count = patches.len();
    TargetSource::new(nominal, patch_count, sample_rate, move |patch_index, ts, (off, len)| {
        let patch = &patches[patch_index];
        let scaled = time_scale(&events, ts)?;
        let window_end = off + len;
        let tail = patch.adsr.release;
        let subset: Vec<NoteEvent> = scaled
            .into_iter()
            .filter(|e| e.onset < window_end && e.end() + tail > off)
            .collect();
        if subset.is_empty() {
            let n = (window_end * sample_rate as f64).ceil() as usize;
            return Ok(AudioClip::silence(n.max(1), sample_rate)?);
        }
        Ok(render_events_with_length(&subset, patch, sample_rate, window_end)?)
    })
}

/// One element of the deterministic example stream.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub mix: AudioClip,
    pub reference: AudioClip,
    pub recipe: MixRecipe,
    pub patch_index: usize,
}

/// Lazily yields (mix, reference) pairs. Example `i` depends only on
/// (seed, i), so elements are random-access reproducible.
pub struct ExampleStream<'a> {
    seed: u64,
    count: u64,
    target: TargetSource<'a>,
    background: BackgroundSource,
    ranges: AugmentRanges,
    compressor: CompressorParams,
}

impl<'a> ExampleStream<'a> {
    pub fn new(
        seed: u64,
        count: u64,
        target: TargetSource<'a>,
        background: BackgroundSource,
        ranges: AugmentRanges,
        compressor: CompressorParams,
    ) -> Result<Self, AugmentError> {
        if count == 0 {
            return Err(AugmentError::InvalidArgument("example count must be ≥ 1".into()));
        }
        ranges.validate()?;
        compressor.validate()?;
        if target.sample_rate != background.payload.sample_rate() {
            return Err(AudioError::SampleRateMismatch(
                target.sample_rate,
                background.payload.sample_rate(),
            )
            .into());
        }
        let excerpt = ranges.excerpt_seconds;
        if excerpt > target.nominal_seconds || excerpt > background.payload.duration_seconds() {
            return Err(AugmentError::InvalidArgument(format!(
                "excerpt {excerpt} s exceeds a source (target {} s, background {} s)",
                target.nominal_seconds,
                background.payload.duration_seconds()
            )));
        }
        Ok(Self { seed, count, target, background, ranges, compressor })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires count ≥ 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn example(&self, index: u64) -> Result<TrainingExample, AugmentError> {
        if index >= self.count {
            return Err(AugmentError::InvalidArgument(format!(
                "example index {index} outside stream of {}",
                self.count
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index));
        let recipe = sample_recipe_with(
            &mut rng,
            &self.ranges,
            self.target.nominal_seconds,
            self.background.payload.duration_seconds(),
        )?;
        let patch_index = (splitmix64(recipe.seed) % self.target.patch_count as u64) as usize;
        let rendered = (self.target.render)(
            patch_index,
            recipe.time_scale_factor,
            (recipe.target_crop.offset_seconds, recipe.target_crop.length_seconds),
        )?;
        let (mix, reference) =
            make_training_example(&rendered, &self.background, &recipe, &self.compressor)?;
        Ok(TrainingExample { mix, reference, recipe, patch_index })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TrainingExample, AugmentError>> + '_ {
        (0..self.count).map(move |i| self.example(i))
    }
}

/// One manifest line of a materialized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub recipe: MixRecipe,
    pub patch_index: usize,
    pub mix_path: String,
    pub reference_path: String,
    pub mix_sha256: String,
    pub reference_sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write `count` (mix, reference) WAV pairs plus a JSON-lines manifest
/// into `dir`. Returns the manifest entries in order.
pub fn materialize_dataset(
    stream: &ExampleStream,
    count: u64,
    dir: &Path,
) -> Result<Vec<ManifestEntry>, AugmentError> {
    if count == 0 || count > stream.len() {
        return Err(AugmentError::InvalidArgument(format!(
            "count {count} outside stream of {}",
            stream.len()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(count as usize);
    let mut manifest = String::new();
    for index in 0..count {
        let example = stream.example(index)?;
        let mix_name = format!("mix_{index:05}.wav");
        let ref_name = format!("ref_{index:05}.wav");
        let mix_bytes = crate::wav::encode_wav(&example.mix, crate::wav::BitDepth::Float32)?;
        let ref_bytes =
            crate::wav::encode_wav(&example.reference, crate::wav::BitDepth::Float32)?;
        std::fs::write(dir.join(&mix_name), &mix_bytes)?;
        std::fs::write(dir.join(&ref_name), &ref_bytes)?;
        let entry = ManifestEntry {
            index,
            recipe: example.recipe,
            patch_index: example.patch_index,
            mix_path: mix_name,
            reference_path: ref_name,
            mix_sha256: sha256_hex(&mix_bytes),
            reference_sha256: sha256_hex(&ref_bytes),
        };
        manifest.push_str(&serde_json::to_string(&entry)?);
        manifest.push('\n');
        entries.push(entry);
    }
    std::fs::write(dir.join("manifest.jsonl"), manifest)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::NoteEvent;

    fn sine(freq: f64, amp: f64, seconds: f64, fs: u32) -> AudioClip {
        let n = (seconds * fs as f64).round() as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin())
            .collect();
        AudioClip::new(samples, fs).unwrap()
    }

    #[test]
    fn recipes_are_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ra = sample_recipe(&mut a, 30.0, 30.0, 8.0).unwrap();
        let rb = sample_recipe(&mut b, 30.0, 30.0, 8.0).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn recipe_marginals_match_the_documented_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut gain_sum = 0.0;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            let r = sample_recipe(&mut rng, 30.0, 30.0, 8.0).unwrap();
            for g in [r.gain_target_db, r.gain_background_db] {
                assert!((-12.0..=6.0).contains(&g), "gain {g} out of range");
            }
            gain_sum += r.gain_target_db + r.gain_background_db;
            *counts.entry(r.compression_ratio.to_bits()).or_insert(0u32) += 1;
            assert!((0.9..=1.1).contains(&r.time_scale_factor));
            assert!(r.target_crop.offset_seconds >= 0.0);
            assert!(r.target_crop.end() <= r.time_scale_factor * 30.0 + 1e-9);
            assert!(r.background_crop.end() <= 30.0 + 1e-9);
        }
        let mean = gain_sum / (2.0 * n as f64);
        assert!((-3.5..=-2.5).contains(&mean), "gain mean {mean}");

        let expected: Vec<u64> = [2.0f64, 4.0, 8.0, 12.0, 16.0, 20.0]
            .iter()
            .map(|r| r.to_bits())
            .collect();
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), expected);
        for (&bits, &count) in &counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() <= 0.03 / 6.0,
                "ratio {} frequency {freq}",
                f64::from_bits(bits)
            );
        }
    }

    #[test]
    fn oversized_excerpt_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_recipe(&mut rng, 5.0, 30.0, 8.0).is_err());
        assert!(sample_recipe(&mut rng, 30.0, 5.0, 8.0).is_err());
    }

    #[test]
    fn ratio_one_compression_is_identity() {
        let clip = sine(440.0, 0.9, 0.5, 16_000);
        let params = CompressorParams { ratio: 1.0, ..CompressorParams::default() };
        let out = compress(&clip, &params).unwrap();
        for (a, b) in clip.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn static_curve_matches_the_analytic_value() {
        // 0 dBFS sine, threshold −20, ratio 4: reduction 20·(1 − 1/4) = 15 dB
        let clip = sine(440.0, 1.0, 1.0, 16_000);
        let out = compress(&clip, &CompressorParams::default()).unwrap();
        let tail = out.crop_seconds(0.75, 0.25).unwrap();
        let level_db = gain_to_db(tail.peak());
        assert!((level_db + 15.0).abs() <= 0.5, "steady-state level {level_db} dBFS");
    }

    #[test]
    fn below_threshold_signal_passes_through() {
        let clip = sine(440.0, 0.01, 0.5, 16_000); // −40 dBFS
        let out = compress(&clip, &CompressorParams::default()).unwrap();
        for (a, b) in clip.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn compressor_is_monotone_in_input_level() {
        let mut previous = f64::NEG_INFINITY;
        for level_db in (-40..=0).step_by(5) {
            let amp = db_to_gain(level_db as f64).unwrap();
            let clip = sine(440.0, amp, 1.0, 16_000);
            let out = compress(&clip, &CompressorParams::default()).unwrap();
            let steady = gain_to_db(out.crop_seconds(0.75, 0.25).unwrap().peak());
            assert!(
                steady >= previous - 1e-9,
                "level {level_db} dBFS mapped to {steady}, below previous {previous}"
            );
            previous = steady;
        }
    }

    fn recipe_at(offsets: (f64, f64), len: f64, gains: (f64, f64), ratio: f64) -> MixRecipe {
        MixRecipe {
            gain_target_db: gains.0,
            gain_background_db: gains.1,
            compression_ratio: ratio,
            target_crop: Crop { offset_seconds: offsets.0, length_seconds: len },
            background_crop: Crop { offset_seconds: offsets.1, length_seconds: len },
            time_scale_factor: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn silent_background_with_unit_ratio_gives_mix_equal_reference() {
        let target = sine(440.0, 0.5, 1.0, 16_000);
        let background = BackgroundSource::new(
            BackgroundStrategy::OriginalMixture,
            AudioClip::silence(16_000, 16_000).unwrap(),
        )
        .unwrap();
        let recipe = recipe_at((0.0, 0.0), 1.0, (-6.0, 0.0), 1.0);
        let (mix, reference) =
            make_training_example(&target, &background, &recipe, &CompressorParams::default())
                .unwrap();
        assert_eq!(mix.len(), reference.len());
        for (m, r) in mix.samples().iter().zip(reference.samples()) {
            assert!((m - r).abs() < 1e-9);
        }
        assert!((mix.peak() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn silent_target_yields_zero_reference() {
        let target = AudioClip::silence(16_000, 16_000).unwrap();
        let background =
            BackgroundSource::new(BackgroundStrategy::OriginalMixture, sine(330.0, 0.5, 1.0, 16_000))
                .unwrap();
        let recipe = recipe_at((0.0, 0.0), 1.0, (0.0, 0.0), 4.0);
        let (mix, reference) =
            make_training_example(&target, &background, &recipe, &CompressorParams::default())
                .unwrap();
        assert_eq!(reference.peak(), 0.0);
        assert!((mix.peak() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn both_silent_is_degenerate() {
        let target = AudioClip::silence(16_000, 16_000).unwrap();
        let background = BackgroundSource::new(
            BackgroundStrategy::OriginalMixture,
            AudioClip::silence(16_000, 16_000).unwrap(),
        )
        .unwrap();
        let recipe = recipe_at((0.0, 0.0), 1.0, (0.0, 0.0), 1.0);
        assert!(matches!(
            make_training_example(&target, &background, &recipe, &CompressorParams::default()),
            Err(AugmentError::Audio(AudioError::DegenerateSilence))
        ));
    }

    #[test]
    fn unit_gains_and_ratio_sum_sources_before_normalization() {
        let target = sine(440.0, 0.4, 1.0, 16_000);
        let bg_clip = sine(250.0, 0.3, 1.0, 16_000);
        let background =
            BackgroundSource::new(BackgroundStrategy::OriginalMixture, bg_clip.clone()).unwrap();
        let recipe = recipe_at((0.0, 0.0), 1.0, (0.0, 0.0), 1.0);
        let (mix, _) =
            make_training_example(&target, &background, &recipe, &CompressorParams::default())
                .unwrap();
        let raw = target.add(&bg_clip).unwrap();
        let expected = raw.scaled(1.0 / raw.peak()).unwrap();
        for (m, e) in mix.samples().iter().zip(expected.samples()) {
            assert!((m - e).abs() < 1e-9);
        }
    }

    fn test_stream(seed: u64) -> ExampleStream<'static> {
        let events: Vec<NoteEvent> = (0..24)
            .map(|i| NoteEvent::new(i as f64 * 0.5, 0.4, 60 + (i % 12) as u8, 100, 0).unwrap())
            .collect();
        let patches =
            vec![Patch::default(), Patch { waveform: crate::synth::Waveform::Sawtooth, ..Patch::default() }];
        let target = score_target_source(events, patches, 8_000).unwrap();
        let background =
            BackgroundSource::new(BackgroundStrategy::OriginalMixture, sine(220.0, 0.5, 13.0, 8_000))
                .unwrap();
        let ranges = AugmentRanges { excerpt_seconds: 4.0, ..AugmentRanges::default() };
        ExampleStream::new(seed, 64, target, background, ranges, CompressorParams::default())
            .unwrap()
    }

    #[test]
    fn stream_elements_are_reproducible() {
        let s1 = test_stream(42);
        let s2 = test_stream(42);
        for i in 0..10 {
            let a = s1.example(i).unwrap();
            let b = s2.example(i).unwrap();
            assert_eq!(a.recipe, b.recipe, "recipe {i}");
            assert_eq!(a.patch_index, b.patch_index);
            assert_eq!(a.mix.samples(), b.mix.samples(), "mix {i}");
            assert_eq!(a.reference.samples(), b.reference.samples(), "reference {i}");
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let s1 = test_stream(1);
        let s2 = test_stream(2);
        let differs = (0..10).any(|i| {
            let a = s1.example(i).unwrap();
            let b = s2.example(i).unwrap();
            a.recipe != b.recipe
        });
        assert!(differs);
    }

    #[test]
    fn zero_count_stream_is_rejected() {
        let target = TargetSource::from_clip(sine(440.0, 0.5, 10.0, 8_000)).unwrap();
        let background =
            BackgroundSource::new(BackgroundStrategy::OriginalMixture, sine(220.0, 0.5, 10.0, 8_000))
                .unwrap();
        let ranges = AugmentRanges {
            excerpt_seconds: 4.0,
            time_scale: (1.0, 1.0),
            ..AugmentRanges::default()
        };
        assert!(matches!(
            ExampleStream::new(0, 0, target, background, ranges, CompressorParams::default()),
            Err(AugmentError::InvalidArgument(_))
        ));
    }

    #[test]
    fn every_mix_is_peak_normalized_and_reference_is_colinear() {
        let stream = test_stream(5);
        for i in 0..6 {
            let ex = stream.example(i).unwrap();
            assert!((ex.mix.peak() - 1.0).abs() < 1e-9, "mix {i} peak {}", ex.mix.peak());

            // reference must be a scalar multiple of the cropped target
            let rendered = (stream.target.render)(
                ex.patch_index,
                ex.recipe.time_scale_factor,
                (ex.recipe.target_crop.offset_seconds, ex.recipe.target_crop.length_seconds),
            )
            .unwrap();
            let crop = rendered
                .crop_seconds(
                    ex.recipe.target_crop.offset_seconds,
                    ex.recipe.target_crop.length_seconds,
                )
                .unwrap();
            let dot: f64 =
                crop.samples().iter().zip(ex.reference.samples()).map(|(a, b)| a * b).sum();
            let na: f64 = crop.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb: f64 =
                ex.reference.samples().iter().map(|b| b * b).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                assert!((dot / (na * nb) - 1.0).abs() < 1e-9, "example {i} not colinear");
            }
        }
    }

    #[test]
    fn windowed_target_render_matches_full_render() {
        let stream = test_stream(11);
        let ex = stream.example(3).unwrap();
        // render the whole scaled score with the same patch, then crop
        let events: Vec<NoteEvent> = (0..24)
            .map(|i| NoteEvent::new(i as f64 * 0.5, 0.4, 60 + (i % 12) as u8, 100, 0).unwrap())
            .collect();
        let patches =
            vec![Patch::default(), Patch { waveform: crate::synth::Waveform::Sawtooth, ..Patch::default() }];
        let scaled = time_scale(&events, ex.recipe.time_scale_factor).unwrap();
        let full = crate::synth::render_events(&scaled, &patches[ex.patch_index], 8_000).unwrap();
        let want = full
            .crop_seconds(
                ex.recipe.target_crop.offset_seconds,
                ex.recipe.target_crop.length_seconds,
            )
            .unwrap()
            .scaled(db_to_gain(ex.recipe.gain_target_db).unwrap())
            .unwrap();
        // ex.reference = k · want for the mix's normalization constant k
        let k = ex.reference.peak() / want.peak();
        for (r, w) in ex.reference.samples().iter().zip(want.samples()) {
            assert!((r - w * k).abs() < 1e-9);
        }
    }

    #[test]
    fn materialized_dataset_round_trips_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let stream = test_stream(33);
        let entries = materialize_dataset(&stream, 3, dir.path()).unwrap();
        assert_eq!(entries.len(), 3);

        let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        let parsed: Vec<ManifestEntry> = manifest
            .lines()
            .map(|line| serde_json::from_str(line).unwrap())
            .collect();
        assert_eq!(parsed, entries);

        for entry in &entries {
            let mix_bytes = std::fs::read(dir.path().join(&entry.mix_path)).unwrap();
            assert_eq!(sha256_hex(&mix_bytes), entry.mix_sha256);
            let clip = crate::wav::parse_wav(&mix_bytes).unwrap();
            let expected = stream.example(entry.index).unwrap().mix;
            assert_eq!(clip.len(), expected.len());
            for (a, b) in clip.samples().iter().zip(expected.samples()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

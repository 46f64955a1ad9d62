//! Training loop, optimizer, and the finite-difference gradient check.

use super::loss::{tpsa_loss, tpsa_loss_grad, tpsa_target};
use super::net::{fl, MaskNet};
use super::{featurize, MaskNetConfig, ModelError};
use crate::augment::{derive_seed, ExampleStream, TrainingExample};
use crate::stft::{stft, StftParams};
use ndarray::{s, Array3, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Dropout masks are drawn from a stream keyed by (seed ^ salt, step) so
/// resumed runs replay the exact masks of an uninterrupted run.
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7421;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_clip_norm")]
    pub gradient_clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_steps() -> u64 {
    2000
}
fn default_batch_size() -> usize {
    4
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_clip_norm() -> f64 {
    5.0
}
fn default_checkpoint_every() -> u64 {
    500
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            gradient_clip_norm: default_clip_norm(),
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    /// Zero learning rate is deliberately legal: it turns training into a
    /// pure evaluation loop, which the null-update test relies on.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps == 0 {
            return Err(ModelError::InvalidArgument("steps must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidArgument("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "learning rate {} must be finite and ≥ 0",
                self.learning_rate
            )));
        }
        if !(self.gradient_clip_norm.is_finite() && self.gradient_clip_norm > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "gradient clip norm {} must be finite and > 0",
                self.gradient_clip_norm
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(ModelError::InvalidArgument("checkpoint_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub wall_time_s: f64,
}

/// Adam with fixed β₁ = 0.9, β₂ = 0.999, ε = 1e−8. Bias corrections are
/// computed in f64 regardless of the parameter precision.
#[derive(Debug, Clone)]
pub struct Adam<F: NdFloat> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl<F: NdFloat> Adam<F> {
    pub fn new(param_count: usize) -> Self {
        Self { m: vec![F::zero(); param_count], v: vec![F::zero(); param_count], t: 0 }
    }

    pub(crate) fn from_parts(m: Vec<F>, v: Vec<F>, t: u64) -> Result<Self, ModelError> {
        if m.len() != v.len() {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "optimizer moment lengths differ: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self { m, v, t })
    }

    pub fn first_moment(&self) -> &[F] {
        &self.m
    }

    pub fn second_moment(&self) -> &[F] {
        &self.v
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut [F],
        grads: &[F],
        learning_rate: f64,
    ) -> Result<(), ModelError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ModelError::InvalidArgument(format!(
                "optimizer sized for {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = fl::<F>(1.0 - BETA1.powi(self.t as i32));
        let bc2 = fl::<F>(1.0 - BETA2.powi(self.t as i32));
        let (b1, b2) = (fl::<F>(BETA1), fl::<F>(BETA2));
        let (one_b1, one_b2) = (fl::<F>(1.0 - BETA1), fl::<F>(1.0 - BETA2));
        let (lr, eps) = (fl::<F>(learning_rate), fl::<F>(EPS));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Where training batches come from. Implementations must be
/// random-access deterministic: `fetch(i)` always returns the same
/// example for the same `i`.
pub trait BatchSource {
    fn available(&self) -> u64;
    fn fetch(&self, index: u64) -> Result<TrainingExample, ModelError>;
}

impl BatchSource for ExampleStream<'_> {
    fn available(&self) -> u64 {
        self.len()
    }

    fn fetch(&self, index: u64) -> Result<TrainingExample, ModelError> {
        Ok(self.example(index)?)
    }
}

/// A single example served for every index: the pure-overfit regime.
#[derive(Debug, Clone)]
pub struct RepeatedExample(pub TrainingExample);

impl BatchSource for RepeatedExample {
    fn available(&self) -> u64 {
        u64::MAX
    }

    fn fetch(&self, _index: u64) -> Result<TrainingExample, ModelError> {
        Ok(self.0.clone())
    }
}

/// Runs training steps `net.step() + 1 ..= tc.steps` in place.
///
/// Step `s` consumes stream indices `(s−1)·batch_size .. s·batch_size`,
/// so interrupting after a checkpoint and calling again with the same
/// config reproduces the uninterrupted run bit for bit (optimizer state
/// must be carried across too). `on_record` sees every step; failures
/// from either callback abort training.
pub fn train<S: BatchSource>(
    net: &mut MaskNet<f32>,
    opt: &mut Adam<f32>,
    source: &S,
    stft_params: &StftParams,
    tc: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord) -> Result<(), ModelError>,
    mut on_checkpoint: impl FnMut(u64, &MaskNet<f32>, &Adam<f32>) -> Result<(), ModelError>,
) -> Result<Vec<TrainRecord>, ModelError> {
    tc.validate()?;
    let need = tc.steps * tc.batch_size as u64;
    if source.available() < need {
        return Err(ModelError::StreamExhausted { have: source.available(), need });
    }
    if net.step() > tc.steps {
        return Err(ModelError::InvalidArgument(format!(
            "network already trained for {} steps, past the configured {}",
            net.step(),
            tc.steps
        )));
    }
    net.set_training(true);
    let result = train_loop(net, opt, source, stft_params, tc, &mut on_record, &mut on_checkpoint);
    net.set_training(false);
    result
}

fn train_loop<S: BatchSource>(
    net: &mut MaskNet<f32>,
    opt: &mut Adam<f32>,
    source: &S,
    stft_params: &StftParams,
    tc: &TrainConfig,
    on_record: &mut dyn FnMut(&TrainRecord) -> Result<(), ModelError>,
    on_checkpoint: &mut dyn FnMut(u64, &MaskNet<f32>, &Adam<f32>) -> Result<(), ModelError>,
) -> Result<Vec<TrainRecord>, ModelError> {
    let started = Instant::now();
    let batch = tc.batch_size;
    let mut records = Vec::new();
    for s in net.step() + 1..=tc.steps {
        let mut examples = Vec::with_capacity(batch);
        for j in 0..batch {
            examples.push(source.fetch((s - 1) * batch as u64 + j as u64)?);
        }
        let recipe_seeds: Vec<u64> = examples.iter().map(|e| e.recipe.seed).collect();

        let (features, magnitude, target) = assemble_batch(&examples, stft_params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed ^ DROPOUT_SALT, s));
        let tape = net.forward_batch(&features, Some(&mut rng))?;
        let loss = tpsa_loss(&tape.mask, &magnitude, &target)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: s, recipe_seeds });
        }

        let d_mask = tpsa_loss_grad(&tape.mask, &magnitude, &target)?;
        let mut grads = net.backward(&tape, &d_mask)?;
        clip_global_norm(&mut grads, tc.gradient_clip_norm);
        opt.step(net.parameters_mut(), &grads, tc.learning_rate)?;
        net.step = s;

        let record =
            TrainRecord { step: s, loss, wall_time_s: started.elapsed().as_secs_f64() };
        on_record(&record)?;
        records.push(record);
        if s % tc.checkpoint_every == 0 || s == tc.steps {
            on_checkpoint(s, net, opt)?;
        }
    }
    Ok(records)
}

/// STFT and featurize a batch of examples into (frames, batch, bins)
/// feature, mixture-magnitude, and tPSA-target tensors.
fn assemble_batch(
    examples: &[TrainingExample],
    stft_params: &StftParams,
) -> Result<(Array3<f32>, Array3<f32>, Array3<f32>), ModelError> {
    let mut features = None;
    let mut magnitude = None;
    let mut target = None;
    for (j, ex) in examples.iter().enumerate() {
        let mix_spec = stft(&ex.mix, stft_params)?;
        let ref_spec = stft(&ex.reference, stft_params)?;
        let feats = featurize(&mix_spec);
        let mag = mix_spec.magnitude();
        let targ = tpsa_target(&mix_spec, &ref_spec)?;

        let (frames, bins) = feats.dim();
        let f_all = features
            .get_or_insert_with(|| Array3::<f32>::zeros((frames, examples.len(), bins)));
        if f_all.dim().0 != frames || f_all.dim().2 != bins {
            return Err(ModelError::ShapeMismatch {
                expected: format!("({}, {}) spectrogram", f_all.dim().0, f_all.dim().2),
                got: format!("({frames}, {bins}) at batch position {j}"),
            });
        }
        let m_all = magnitude
            .get_or_insert_with(|| Array3::<f32>::zeros((frames, examples.len(), bins)));
        let t_all =
            target.get_or_insert_with(|| Array3::<f32>::zeros((frames, examples.len(), bins)));
        f_all.slice_mut(s![.., j, ..]).assign(&feats.mapv(|v| v as f32));
        m_all.slice_mut(s![.., j, ..]).assign(&mag.mapv(|v| v as f32));
        t_all.slice_mut(s![.., j, ..]).assign(&targ.mapv(|v| v as f32));
    }
    match (features, magnitude, target) {
        (Some(f), Some(m), Some(t)) => Ok((f, m, t)),
        _ => Err(ModelError::InvalidArgument("empty training batch".into())),
    }
}

fn clip_global_norm(grads: &mut [f32], max_norm: f64) {
    let norm = grads.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// A synthetic batch for gradient checking: consistent (features,
/// magnitude, target) tensors with 0 ≤ target ≤ magnitude.
#[derive(Debug, Clone)]
pub struct CheckBatch {
    pub features: Array3<f64>,
    pub magnitude: Array3<f64>,
    pub target: Array3<f64>,
}

pub fn random_check_batch(frames: usize, batch: usize, bins: usize, seed: u64) -> CheckBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = Array3::from_shape_fn((frames, batch, bins), |_| rng.random_range(0.0..1.5));
    // magnitude is the exact featurize preimage, so the pair is coherent
    let magnitude = features.mapv(f64::exp_m1);
    let fractions = Array3::from_shape_fn((frames, batch, bins), |_| rng.random_range(0.0..1.0));
    let target = &magnitude * &fractions;
    CheckBatch { features, magnitude, target }
}

/// Compares analytic gradients of the tPSA loss against central finite
/// differences (h = 1e−5) on a double-precision network, over at least
/// 200 randomly sampled parameters (all of them for small nets).
/// Returns the maximum relative error.
pub fn gradient_check(
    config: &MaskNetConfig,
    batch: &CheckBatch,
    seed: u64,
) -> Result<f64, ModelError> {
    gradient_check_impl(config, batch, seed, false)
}

/// Same check with every analytic gradient corrupted (g·1.5 + 0.01); a
/// working comparator must report a large error here.
pub fn gradient_check_with_corruption(
    config: &MaskNetConfig,
    batch: &CheckBatch,
    seed: u64,
) -> Result<f64, ModelError> {
    gradient_check_impl(config, batch, seed, true)
}

fn gradient_check_impl(
    config: &MaskNetConfig,
    batch: &CheckBatch,
    seed: u64,
    corrupt: bool,
) -> Result<f64, ModelError> {
    // dropout off: finite differences need a deterministic graph
    let cfg = MaskNetConfig { dropout_probability: 0.0, ..config.clone() };
    let mut net = MaskNet::<f64>::new(cfg, seed)?;

    let tape = net.forward_batch(&batch.features, None)?;
    let d_mask = tpsa_loss_grad(&tape.mask, &batch.magnitude, &batch.target)?;
    let mut grads = net.backward(&tape, &d_mask)?;
    if corrupt {
        for g in &mut grads {
            *g = *g * 1.5 + 0.01;
        }
    }

    let n = net.parameters().len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let indices: Vec<usize> = if n <= 200 {
        (0..n).collect()
    } else {
        rand::seq::index::sample(&mut rng, n, 200).into_vec()
    };

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for &i in &indices {
        let original = net.parameters()[i];
        net.parameters_mut()[i] = original + h;
        let plus = loss_at(&net, batch)?;
        net.parameters_mut()[i] = original - h;
        let minus = loss_at(&net, batch)?;
        net.parameters_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[i];
        // the floor keeps near-zero gradients from amplifying FD noise
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

fn loss_at(net: &MaskNet<f64>, batch: &CheckBatch) -> Result<f64, ModelError> {
    let tape = net.forward_batch(&batch.features, None)?;
    tpsa_loss(&tape.mask, &batch.magnitude, &batch.target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{Crop, MixRecipe};
    use crate::stft::WindowKind;
    use crate::AudioClip;

    fn tiny_config(bins: usize) -> MaskNetConfig {
        MaskNetConfig {
            input_bins: bins,
            recurrent_layers: 2,
            hidden_units_per_direction: 8,
            bidirectional: true,
            dropout_probability: 0.0,
        }
    }

    fn tiny_stft() -> StftParams {
        StftParams::new(64, 16, 64, WindowKind::SqrtHann).unwrap()
    }

    /// A fixed tone-plus-hiss example small enough to train on in tests.
    fn fixed_example() -> TrainingExample {
        let rate = 4000;
        let n = 1600; // 0.4 s
        let tone: Vec<f64> = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 330.0 * i as f64 / rate as f64).sin())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mix: Vec<f64> =
            tone.iter().map(|&t| t + 0.2 * rng.random_range(-1.0..=1.0)).collect();
        TrainingExample {
            mix: AudioClip::new(mix, rate).unwrap(),
            reference: AudioClip::new(tone, rate).unwrap(),
            recipe: MixRecipe {
                gain_target_db: 0.0,
                gain_background_db: 0.0,
                compression_ratio: 1.0,
                target_crop: Crop { offset_seconds: 0.0, length_seconds: 0.4 },
                background_crop: Crop { offset_seconds: 0.0, length_seconds: 0.4 },
                time_scale_factor: 1.0,
                seed: 1234,
            },
            patch_index: 0,
        }
    }

    struct FiniteSource(u64);

    impl BatchSource for FiniteSource {
        fn available(&self) -> u64 {
            self.0
        }

        fn fetch(&self, _index: u64) -> Result<TrainingExample, ModelError> {
            Ok(fixed_example())
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config(16);
        let batch = random_check_batch(5, 3, 16, 21);
        let err = gradient_check(&cfg, &batch, 77).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradients_are_detected() {
        let cfg = tiny_config(16);
        let batch = random_check_batch(5, 3, 16, 21);
        let err = gradient_check_with_corruption(&cfg, &batch, 77).unwrap();
        assert!(err > 1e-1, "corruption went unnoticed: {err}");
    }

    #[test]
    fn unidirectional_gradients_also_check_out() {
        let cfg = MaskNetConfig { bidirectional: false, ..tiny_config(12) };
        let batch = random_check_batch(4, 2, 12, 5);
        let err = gradient_check(&cfg, &batch, 31).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn zero_batch_passes_the_check() {
        let cfg = tiny_config(16);
        let batch = CheckBatch {
            features: Array3::zeros((5, 2, 16)),
            magnitude: Array3::zeros((5, 2, 16)),
            target: Array3::zeros((5, 2, 16)),
        };
        let err = gradient_check(&cfg, &batch, 77).unwrap();
        assert!(err < 1e-3, "zero batch error {err}");
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let params = tiny_stft();
        let spec = stft(&fixed_example().mix, &params).unwrap();
        let bins = spec.frequency_bins();
        let mut net = MaskNet::<f32>::new(tiny_config(bins), 3).unwrap();
        let before = net.parameters().to_vec();
        let mut opt = Adam::new(before.len());
        let tc = TrainConfig {
            steps: 5,
            batch_size: 1,
            learning_rate: 0.0,
            seed: 8,
            ..TrainConfig::default()
        };
        let records = train(
            &mut net,
            &mut opt,
            &RepeatedExample(fixed_example()),
            &params,
            &tc,
            |_| Ok(()),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(records.len(), 5);
        assert_eq!(net.parameters(), &before[..]);
        for w in records.windows(2) {
            assert!((w[0].loss - w[1].loss).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_decreases_when_overfitting_one_example() {
        let params = tiny_stft();
        let spec = stft(&fixed_example().mix, &params).unwrap();
        let bins = spec.frequency_bins();
        let mut net = MaskNet::<f32>::new(tiny_config(bins), 3).unwrap();
        let mut opt = Adam::new(net.parameters().len());
        let tc = TrainConfig {
            steps: 150,
            batch_size: 1,
            learning_rate: 1e-2,
            seed: 8,
            checkpoint_every: 60,
            ..TrainConfig::default()
        };
        let mut checkpoints = Vec::new();
        let records = train(
            &mut net,
            &mut opt,
            &RepeatedExample(fixed_example()),
            &params,
            &tc,
            |_| Ok(()),
            |s, _, _| {
                checkpoints.push(s);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(checkpoints, vec![60, 120, 150]);
        let first = records.first().unwrap().loss;
        let last = records.last().unwrap().loss;
        assert!(last < 0.5 * first, "loss went {first} -> {last}");
        assert!(!net.training(), "training flag must be restored");
        assert_eq!(net.step(), 150);
    }

    #[test]
    fn same_seed_gives_identical_loss_curves() {
        let params = tiny_stft();
        let spec = stft(&fixed_example().mix, &params).unwrap();
        let bins = spec.frequency_bins();
        // dropout active: exercises the per-step mask stream
        let cfg = MaskNetConfig { dropout_probability: 0.3, ..tiny_config(bins) };
        let run = || {
            let mut net = MaskNet::<f32>::new(cfg.clone(), 3).unwrap();
            let mut opt = Adam::new(net.parameters().len());
            let tc =
                TrainConfig { steps: 6, batch_size: 2, seed: 41, ..TrainConfig::default() };
            train(
                &mut net,
                &mut opt,
                &RepeatedExample(fixed_example()),
                &params,
                &tc,
                |_| Ok(()),
                |_, _, _| Ok(()),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(b.iter()) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        }
    }

    #[test]
    fn resumed_training_matches_an_uninterrupted_run() {
        let params = tiny_stft();
        let spec = stft(&fixed_example().mix, &params).unwrap();
        let bins = spec.frequency_bins();
        let cfg = MaskNetConfig { dropout_probability: 0.3, ..tiny_config(bins) };
        let source = RepeatedExample(fixed_example());

        let mut whole = MaskNet::<f32>::new(cfg.clone(), 3).unwrap();
        let mut opt_whole = Adam::new(whole.parameters().len());
        let tc8 = TrainConfig { steps: 8, batch_size: 1, seed: 5, ..TrainConfig::default() };
        train(&mut whole, &mut opt_whole, &source, &params, &tc8, |_| Ok(()), |_, _, _| Ok(()))
            .unwrap();

        let mut split = MaskNet::<f32>::new(cfg, 3).unwrap();
        let mut opt_split = Adam::new(split.parameters().len());
        let tc4 = TrainConfig { steps: 4, ..tc8.clone() };
        train(&mut split, &mut opt_split, &source, &params, &tc4, |_| Ok(()), |_, _, _| Ok(()))
            .unwrap();
        train(&mut split, &mut opt_split, &source, &params, &tc8, |_| Ok(()), |_, _, _| Ok(()))
            .unwrap();

        assert_eq!(whole.parameters(), split.parameters());
        assert_eq!(whole.step(), split.step());
    }

    #[test]
    fn exhausted_stream_is_an_error() {
        let params = tiny_stft();
        let mut net = MaskNet::<f32>::new(tiny_config(33), 3).unwrap();
        let mut opt = Adam::new(net.parameters().len());
        let tc = TrainConfig { steps: 4, batch_size: 2, ..TrainConfig::default() };
        let err = train(
            &mut net,
            &mut opt,
            &FiniteSource(7),
            &params,
            &tc,
            |_| Ok(()),
            |_, _, _| Ok(()),
        )
        .unwrap_err();
        match err {
            ModelError::StreamExhausted { have, need } => {
                assert_eq!((have, need), (7, 8));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let params = tiny_stft();
        let spec = stft(&fixed_example().mix, &params).unwrap();
        let bins = spec.frequency_bins();
        let mut net = MaskNet::<f32>::new(tiny_config(bins), 3).unwrap();
        net.parameters_mut()[0] = f32::NAN;
        let mut opt = Adam::new(net.parameters().len());
        let tc = TrainConfig { steps: 3, batch_size: 1, ..TrainConfig::default() };
        let err = train(
            &mut net,
            &mut opt,
            &RepeatedExample(fixed_example()),
            &params,
            &tc,
            |_| Ok(()),
            |_, _, _| Ok(()),
        )
        .unwrap_err();
        match err {
            ModelError::NonFiniteLoss { step, recipe_seeds } => {
                assert_eq!(step, 1);
                assert_eq!(recipe_seeds, vec![1234]);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(!net.training(), "training flag must be cleared on abort");
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1e-3, ..TrainConfig::default() }
            .validate()
            .is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() }
            .validate()
            .is_err());
        assert!(TrainConfig { gradient_clip_norm: 0.0, ..TrainConfig::default() }
            .validate()
            .is_err());
        assert!(TrainConfig { checkpoint_every: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn adam_moves_parameters_against_the_gradient() {
        let mut opt = Adam::<f32>::new(3);
        let mut params = vec![1.0f32, -1.0, 0.5];
        let grads = vec![1.0f32, -2.0, 0.0];
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert!(params[0] < 1.0);
        assert!(params[1] > -1.0);
        assert_eq!(params[2], 0.5);
        assert_eq!(opt.timestep(), 1);
        assert!(opt.step(&mut params, &[0.0; 2], 0.1).is_err());
    }
}

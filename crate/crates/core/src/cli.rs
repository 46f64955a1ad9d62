//! Command-line surface over the full pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input or validation
//! error. Every failure message is tagged with the stage that raised it.
//!
//! A `run` executes parse, synthesis, training, and separation into a
//! fresh `run-NNNN` directory. `train` does the training half and can
//! resume an existing directory; `separate` applies its latest
//! checkpoint; `eval` scores the synthetic benchmark; `quickstart`
//! writes a tiny self-contained project and runs it end to end.

use crate::audio::AudioClip;
use crate::augment::{
    score_target_source, AugmentRanges, BackgroundSource, BackgroundStrategy, ExampleStream,
};
use crate::config::{resolve_path, ProjectConfig};
use crate::eval::{run_benchmark_with, BenchConfig};
use crate::experiment::{ExperimentDir, SeedRecord, TrainLogWriter};
use crate::model::{
    load_checkpoint, save_checkpoint, Adam, MaskNet, ModelError, TrainConfig, TrainRecord,
};
use crate::score::{parse_midi, NoteEvent};
use crate::separate::{separate, SeparationResult};
use crate::stft::StftParams;
use crate::synth::{render_accompaniment, render_events, Adsr, Patch, PatchBank, Vibrato, Waveform};
use crate::wav::{read_wav, write_wav, BitDepth};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

const EXIT_OK: i32 = 0;
const EXIT_RUNTIME: i32 = 1;
const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
enum CliError {
    /// Bad input or configuration. Exit code 2.
    Usage { stage: &'static str, message: String },
    /// Failure while executing a valid request. Exit code 1.
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    fn stage(&self) -> &'static str {
        match self {
            CliError::Usage { stage, .. } | CliError::Runtime { stage, .. } => stage,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage { message, .. } | CliError::Runtime { message, .. } => message,
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => EXIT_USAGE,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}

fn usage(stage: &'static str) -> impl Fn(&dyn Display) -> CliError {
    move |e| CliError::Usage { stage, message: e.to_string() }
}

fn runtime(stage: &'static str) -> impl Fn(&dyn Display) -> CliError {
    move |e| CliError::Runtime { stage, message: e.to_string() }
}

#[derive(Parser)]
#[command(name = "scoresep", version, about = "Score-informed single-source separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the note tracks of a MIDI file.
    Tracks {
        /// Standard MIDI file to inspect.
        midi: PathBuf,
    },
    /// Full pipeline: parse, synthesize, train, separate, write stems.
    Run(RunArgs),
    /// Train only. Writes checkpoints and a training log; resumable.
    Train(TrainArgs),
    /// Separate the configured mixture with an experiment's latest checkpoint.
    Separate(SeparateArgs),
    /// Score the synthetic benchmark and write its report.
    Eval(EvalArgs),
    /// Write a tiny self-contained demo project and run it end to end.
    Quickstart(QuickstartArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Project config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Experiment root (default: config output_dir, then $SCORESEP_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Project config (JSON) for a fresh training run.
    #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Existing experiment directory whose training should continue.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the config's global seed (fresh runs only).
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Override the target number of training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Experiment root for fresh runs.
    #[arg(long, conflicts_with = "resume")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeparateArgs {
    /// Experiment directory holding the checkpoint to apply.
    #[arg(long)]
    experiment: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Benchmark config (JSON); defaults to the bundled three-song benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override training steps per song.
    #[arg(long)]
    steps: Option<u64>,
    /// Report root (default: $SCORESEP_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuickstartArgs {
    /// Where to write the demo project (default ./quickstart).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training steps for the demo run.
    #[arg(long, default_value_t = 200)]
    steps: u64,
    /// Global seed for the demo run.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Parse arguments and execute. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help and version through the same error path
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match &cli.command {
        Command::Tracks { midi } => cmd_tracks(midi),
        Command::Run(args) => cmd_run(args),
        Command::Train(args) => cmd_train(args),
        Command::Separate(args) => cmd_separate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Quickstart(args) => cmd_quickstart(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage(), e.message());
            e.code()
        }
    }
}

fn cmd_tracks(midi: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(midi)
        .map_err(|e| usage("tracks")(&format!("cannot read {}: {e}", midi.display())))?;
    let score = parse_midi(&bytes).map_err(|e| usage("tracks")(&e))?;
    for (index, track) in score.tracks.iter().enumerate() {
        let name = if track.name.is_empty() { "(unnamed)" } else { &track.name };
        let range = match (
            track.events.iter().map(|e| e.pitch).min(),
            track.events.iter().map(|e| e.pitch).max(),
        ) {
            (Some(lo), Some(hi)) => format!("pitches {lo}..{hi}"),
            _ => "no pitches".to_string(),
        };
        println!("{index}: {name} ({} notes, {range})", track.events.len());
    }
    let w = &score.warnings;
    if w.unmatched_note_ons > 0 || w.orphan_note_offs > 0 {
        eprintln!(
            "warnings: {} unmatched note-ons, {} orphan note-offs",
            w.unmatched_note_ons, w.orphan_note_offs
        );
    }
    Ok(())
}

/// A validated config plus where it came from, so relative paths keep
/// resolving against the file's own directory.
struct Project {
    config: ProjectConfig,
    raw: String,
    config_path: PathBuf,
    base_dir: PathBuf,
}

fn load_project(
    path: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
) -> Result<Project, CliError> {
    let (mut config, raw) = ProjectConfig::load(path).map_err(|e| usage("config")(&e))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = steps {
        config.train.steps = n;
    }
    let base_dir = match path.parent() {
        Some(p) if p != Path::new("") => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    config.validate(&base_dir).map_err(|e| usage("config")(&e))?;
    Ok(Project { config, raw, config_path: path.to_path_buf(), base_dir })
}

/// Where a run directory's inputs live; resumed stages read this to
/// resolve the snapshot's relative paths.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Provenance {
    config_path: PathBuf,
    base_dir: PathBuf,
    seed_override: Option<u64>,
    steps_override: Option<u64>,
}

fn absolutize(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        match std::env::current_dir() {
            Ok(cwd) => cwd.join(path),
            Err(_) => path.to_path_buf(),
        }
    }
}

fn provenance_path(dir: &ExperimentDir) -> PathBuf {
    dir.root().join("provenance.json")
}

fn write_provenance(dir: &ExperimentDir, p: &Provenance) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(p).map_err(|e| runtime("setup")(&e))?;
    std::fs::write(provenance_path(dir), text).map_err(|e| runtime("setup")(&e))
}

fn read_provenance(dir: &ExperimentDir) -> Result<Provenance, CliError> {
    let path = provenance_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        usage("setup")(&format!("missing provenance.json in {}: {e}", dir.root().display()))
    })?;
    serde_json::from_str(&text).map_err(|e| usage("setup")(&e))
}

/// The mixture and the split transcription, loaded and resampled.
struct Inputs {
    mixture: AudioClip,
    target_events: Vec<NoteEvent>,
    accompaniment_events: Vec<NoteEvent>,
}

fn load_inputs(config: &ProjectConfig, base_dir: &Path) -> Result<Inputs, CliError> {
    let stage = usage("inputs");
    let wav_path = resolve_path(base_dir, &config.input.mixture_wav);
    let raw_clip =
        read_wav(&wav_path).map_err(|e| stage(&format!("{}: {e}", wav_path.display())))?;
    let mixture = crate::resample::resample(&raw_clip, config.sample_rate)
        .map_err(|e| stage(&format!("{}: {e}", wav_path.display())))?;

    let midi_path = resolve_path(base_dir, &config.input.midi);
    let bytes = std::fs::read(&midi_path)
        .map_err(|e| stage(&format!("cannot read {}: {e}", midi_path.display())))?;
    let score = parse_midi(&bytes).map_err(|e| stage(&format!("{}: {e}", midi_path.display())))?;
    let (target_events, accompaniment_events) =
        crate::score::select_target(&score, &config.input.target_track.selector())
            .map_err(|e| stage(&e))?;
    if target_events.is_empty() {
        return Err(stage(&format!(
            "target track {} has no notes",
            config.input.target_track.selector()
        )));
    }
    Ok(Inputs { mixture, target_events, accompaniment_events })
}

fn build_background(
    config: &ProjectConfig,
    inputs: &Inputs,
) -> Result<BackgroundSource, CliError> {
    let stage = usage("inputs");
    match config.background {
        BackgroundStrategy::OriginalMixture => {
            BackgroundSource::new(BackgroundStrategy::OriginalMixture, inputs.mixture.clone())
                .map_err(|e| stage(&e))
        }
        BackgroundStrategy::SynthesizedAccompaniment => {
            let n_tracks = inputs
                .accompaniment_events
                .iter()
                .map(|e| e.track_index + 1)
                .max()
                .unwrap_or(0);
            let mut tracks: Vec<Vec<NoteEvent>> = vec![Vec::new(); n_tracks];
            for e in &inputs.accompaniment_events {
                tracks[e.track_index].push(*e);
            }
            let clip = render_accompaniment(
                &tracks,
                &config.patch_bank,
                &config.accompaniment,
                config.sample_rate,
            )
            .map_err(|e| stage(&e))?;
            BackgroundSource::new(BackgroundStrategy::SynthesizedAccompaniment, clip)
                .map_err(|e| stage(&e))
        }
    }
}

struct TrainOutcome {
    net: MaskNet<f32>,
    final_loss: Option<f64>,
    steps_completed: u64,
}

/// Train (or continue training) against the experiment directory:
/// records go to the log, checkpoints to checkpoints/.
fn train_stage(
    dir: &ExperimentDir,
    config: &ProjectConfig,
    seeds: &SeedRecord,
    inputs: &Inputs,
    resume: Option<(MaskNet<f32>, Option<Adam<f32>>)>,
) -> Result<TrainOutcome, CliError> {
    let patches = config
        .patch_bank
        .patches(&config.input.target_instrument)
        .expect("validated config has the target instrument")
        .to_vec();
    let target = score_target_source(inputs.target_events.clone(), patches, config.sample_rate)
        .map_err(|e| usage("inputs")(&e))?;
    let background = build_background(config, inputs)?;

    let tc = TrainConfig { seed: seeds.train, ..config.train };
    let need = tc.steps.saturating_mul(tc.batch_size as u64);
    let stream = ExampleStream::new(
        seeds.stream,
        need,
        target,
        background,
        config.ranges.clone(),
        config.compressor,
    )
    .map_err(|e| usage("inputs")(&e))?;

    let bins = config.stft.frequency_bins();
    let (mut net, mut opt) = match resume {
        Some((net, opt)) => {
            let opt = opt.unwrap_or_else(|| Adam::new(net.parameters().len()));
            (net, opt)
        }
        None => {
            let net = MaskNet::<f32>::new(config.network.mask_net_config(bins), seeds.network)
                .map_err(|e| usage("config")(&e))?;
            let opt = Adam::new(net.parameters().len());
            (net, opt)
        }
    };

    if net.step() >= tc.steps {
        println!("training already complete at step {}", net.step());
        return Ok(TrainOutcome { net, final_loss: None, steps_completed: 0 });
    }

    let mut log = dir.train_log_writer().map_err(|e| runtime("train")(&e))?;
    let every = (tc.steps / 10).max(1);
    let total = tc.steps;
    let train_seed = seeds.train;
    let records = crate::model::train(
        &mut net,
        &mut opt,
        &stream,
        &config.stft,
        &tc,
        |r: &TrainRecord| {
            append_record(&mut log, r)?;
            if r.step % every == 0 || r.step == total || r.step == 1 {
                println!("step {}/{total} loss {:.6}", r.step, r.loss);
            }
            Ok(())
        },
        |step, net, opt| save_checkpoint(net, Some(opt), train_seed, &dir.checkpoint_path(step)),
    )
    .map_err(|e| runtime("train")(&e))?;

    let final_loss = records.last().map(|r| r.loss);
    Ok(TrainOutcome { net, final_loss, steps_completed: records.len() as u64 })
}

fn append_record(log: &mut TrainLogWriter, r: &TrainRecord) -> Result<(), ModelError> {
    log.append(r).map_err(|e| ModelError::Io(std::io::Error::other(e.to_string())))
}

/// Everything report.json records about a run, train, or separate stage.
#[derive(Serialize)]
struct StageReport {
    stage: &'static str,
    seed: u64,
    steps_completed: u64,
    final_train_loss: Option<f64>,
    mean_mask: Option<f64>,
    masked_energy_fraction: Option<f64>,
    stems: Vec<String>,
    wall_time_s: f64,
}

fn separate_stage(
    dir: &ExperimentDir,
    config: &ProjectConfig,
    mixture: &AudioClip,
    net: &MaskNet<f32>,
) -> Result<(SeparationResult, Vec<String>), CliError> {
    let stage = runtime("separate");
    let result = separate(mixture, net, &config.stft, &config.chunk).map_err(|e| stage(&e))?;
    let stems = [
        ("mixture.wav", mixture),
        ("estimate.wav", &result.estimate),
        ("residual.wav", &result.residual),
    ];
    let mut written = Vec::with_capacity(stems.len());
    for (name, clip) in stems {
        let path = dir.stem_path(name);
        write_wav(&path, clip, BitDepth::Float32)
            .map_err(|e| stage(&format!("{}: {e}", path.display())))?;
        written.push(format!("stems/{name}"));
        println!("wrote {}", path.display());
    }
    Ok((result, written))
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let project = load_project(&args.config, args.seed, args.steps)?;
    let out_root =
        args.out.clone().unwrap_or_else(|| project.config.output_root(&project.base_dir));
    let dir = ExperimentDir::create_under(&out_root).map_err(|e| runtime("setup")(&e))?;
    println!("experiment: {}", dir.root().display());
    setup_experiment(&dir, &project, args.seed, args.steps)?;
    let seeds = SeedRecord::derive(project.config.seed, project.config.train.seed);

    let result = (|| {
        let inputs = load_inputs(&project.config, &project.base_dir)?;
        let trained = train_stage(&dir, &project.config, &seeds, &inputs, None)?;
        let (separation, stems) = separate_stage(&dir, &project.config, &inputs.mixture, &trained.net)?;
        let report = StageReport {
            stage: "run",
            seed: project.config.seed,
            steps_completed: trained.steps_completed,
            final_train_loss: trained.final_loss,
            mean_mask: Some(separation.diagnostics.mean_mask),
            masked_energy_fraction: Some(separation.diagnostics.masked_energy_fraction),
            stems,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        dir.write_report(&report).map_err(|e| runtime("report")(&e))?;
        dir.finalize_manifest().map_err(|e| runtime("report")(&e))?;
        Ok(())
    })();
    fail_marked(&dir, result)
}

/// Snapshot the config and seeds into a fresh experiment directory.
fn setup_experiment(
    dir: &ExperimentDir,
    project: &Project,
    seed_override: Option<u64>,
    steps_override: Option<u64>,
) -> Result<(), CliError> {
    dir.write_config_snapshot(&project.raw).map_err(|e| runtime("setup")(&e))?;
    let seeds = SeedRecord::derive(project.config.seed, project.config.train.seed);
    dir.write_seeds(&seeds).map_err(|e| runtime("setup")(&e))?;
    write_provenance(
        dir,
        &Provenance {
            config_path: absolutize(&project.config_path),
            base_dir: absolutize(&project.base_dir),
            seed_override,
            steps_override,
        },
    )
}

/// On failure, leave a stage-tagged marker in the directory and keep
/// the partial contents for inspection.
fn fail_marked(dir: &ExperimentDir, result: Result<(), CliError>) -> Result<(), CliError> {
    if let Err(e) = &result {
        let _ = dir.mark_failed(e.stage(), e.message());
        eprintln!("partial experiment kept at {}", dir.root().display());
    }
    result
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    match (&args.config, &args.resume) {
        (Some(config_path), None) => {
            let started = Instant::now();
            let project = load_project(config_path, args.seed, args.steps)?;
            let out_root =
                args.out.clone().unwrap_or_else(|| project.config.output_root(&project.base_dir));
            let dir = ExperimentDir::create_under(&out_root).map_err(|e| runtime("setup")(&e))?;
            println!("experiment: {}", dir.root().display());
            setup_experiment(&dir, &project, args.seed, args.steps)?;
            let seeds = SeedRecord::derive(project.config.seed, project.config.train.seed);
            let result = (|| {
                let inputs = load_inputs(&project.config, &project.base_dir)?;
                let trained = train_stage(&dir, &project.config, &seeds, &inputs, None)?;
                finish_train(&dir, &project.config, trained, started)
            })();
            fail_marked(&dir, result)
        }
        (None, Some(resume_dir)) => {
            let started = Instant::now();
            let dir = ExperimentDir::open(resume_dir).map_err(|e| usage("setup")(&e))?;
            let raw = dir.read_config_snapshot().map_err(|e| usage("setup")(&e))?;
            let mut config = ProjectConfig::from_json_str(&raw).map_err(|e| usage("setup")(&e))?;
            if let Some(n) = args.steps {
                config.train.steps = n;
            }
            let seeds = dir.read_seeds().map_err(|e| usage("setup")(&e))?;
            let provenance = read_provenance(&dir)?;
            config.validate(&provenance.base_dir).map_err(|e| usage("config")(&e))?;

            let resume = match dir.latest_checkpoint().map_err(|e| runtime("setup")(&e))? {
                Some((step, path)) => {
                    let loaded = load_checkpoint(&path).map_err(|e| runtime("setup")(&e))?;
                    println!("resuming from step {step}");
                    Some((loaded.net, loaded.optimizer))
                }
                // No checkpoint yet: the previous attempt died before the
                // first save, so training restarts from step one.
                None => None,
            };
            let result = (|| {
                let inputs = load_inputs(&config, &provenance.base_dir)?;
                let trained = train_stage(&dir, &config, &seeds, &inputs, resume)?;
                finish_train(&dir, &config, trained, started)
            })();
            fail_marked(&dir, result)
        }
        // clap's required_unless_present/conflicts_with make these unreachable
        _ => Err(usage("setup")(&"pass exactly one of --config or --resume")),
    }
}

fn finish_train(
    dir: &ExperimentDir,
    config: &ProjectConfig,
    trained: TrainOutcome,
    started: Instant,
) -> Result<(), CliError> {
    let report = StageReport {
        stage: "train",
        seed: config.seed,
        steps_completed: trained.steps_completed,
        final_train_loss: trained.final_loss,
        mean_mask: None,
        masked_energy_fraction: None,
        stems: Vec::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    dir.write_report(&report).map_err(|e| runtime("report")(&e))?;
    dir.finalize_manifest().map_err(|e| runtime("report")(&e))?;
    println!("trained to step {}", trained.net.step());
    Ok(())
}

fn cmd_separate(args: &SeparateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = ExperimentDir::open(&args.experiment).map_err(|e| usage("setup")(&e))?;
    let raw = dir.read_config_snapshot().map_err(|e| usage("setup")(&e))?;
    let config = ProjectConfig::from_json_str(&raw).map_err(|e| usage("setup")(&e))?;
    let provenance = read_provenance(&dir)?;
    config.validate(&provenance.base_dir).map_err(|e| usage("config")(&e))?;

    let Some((step, path)) = dir.latest_checkpoint().map_err(|e| runtime("setup")(&e))? else {
        return Err(usage("separate")(&format!(
            "no checkpoint in {}: run the train stage first",
            dir.root().display()
        )));
    };
    let loaded = load_checkpoint(&path).map_err(|e| runtime("setup")(&e))?;
    println!("separating with the step-{step} checkpoint");

    let result = (|| {
        let inputs = load_inputs(&config, &provenance.base_dir)?;
        let (separation, stems) = separate_stage(&dir, &config, &inputs.mixture, &loaded.net)?;
        let report = StageReport {
            stage: "separate",
            seed: config.seed,
            steps_completed: 0,
            final_train_loss: None,
            mean_mask: Some(separation.diagnostics.mean_mask),
            masked_energy_fraction: Some(separation.diagnostics.masked_energy_fraction),
            stems,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        dir.write_report(&report).map_err(|e| runtime("report")(&e))?;
        dir.finalize_manifest().map_err(|e| runtime("report")(&e))?;
        Ok(())
    })();
    fail_marked(&dir, result)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let (mut config, raw) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage("config")(&format!("cannot read {}: {e}", path.display())))?;
            let config: BenchConfig =
                serde_json::from_str(&text).map_err(|e| usage("config")(&e))?;
            (config, text)
        }
        None => {
            let config = BenchConfig::bundled();
            let text =
                serde_json::to_string_pretty(&config).map_err(|e| runtime("setup")(&e))?;
            (config, text)
        }
    };
    if let Some(n) = args.steps {
        config.train.steps = n;
    }
    config.validate().map_err(|e| usage("config")(&e))?;

    let out_root = args.out.clone().unwrap_or_else(default_out_root);
    let dir = ExperimentDir::create_under(&out_root).map_err(|e| runtime("setup")(&e))?;
    println!("evaluating {} songs into {}", config.songs.len(), dir.root().display());
    dir.write_config_snapshot(&raw).map_err(|e| runtime("setup")(&e))?;

    let result = (|| {
        let report = run_benchmark_with(&config, |name, report| match report {
            Some(r) => println!(
                "{name}: SI-SDRi {:+.2} dB (estimate {:+.2}, baseline {:+.2}, oracle {:+.2})",
                r.si_sdr_improvement_db,
                r.estimate_si_sdr_db,
                r.baseline_si_sdr_db,
                r.oracle_si_sdr_db
            ),
            None => println!("{name}: failed"),
        })
        .map_err(|e| runtime("eval")(&e))?;
        dir.write_report(&report).map_err(|e| runtime("report")(&e))?;
        dir.finalize_manifest().map_err(|e| runtime("report")(&e))?;

        let failures: Vec<&str> = report
            .songs
            .iter()
            .filter(|s| s.error.is_some())
            .map(|s| s.name.as_str())
            .collect();
        if failures.is_empty() {
            println!("report: {}", dir.report_path().display());
            Ok(())
        } else {
            Err(runtime("eval")(&format!(
                "{} of {} songs failed: {}",
                failures.len(),
                report.songs.len(),
                failures.join(", ")
            )))
        }
    })();
    fail_marked(&dir, result)
}

fn default_out_root() -> PathBuf {
    if let Some(env) = std::env::var_os("SCORESEP_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

fn cmd_quickstart(args: &QuickstartArgs) -> Result<(), CliError> {
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("quickstart"));
    let stage = runtime("quickstart");
    std::fs::create_dir_all(&out).map_err(|e| stage(&format!("{}: {e}", out.display())))?;

    let config_path = write_quickstart_project(&out, args.steps, args.seed)
        .map_err(|e| stage(&e))?;
    println!("quickstart project in {}", out.display());

    cmd_run(&RunArgs { config: config_path, seed: None, steps: None, out: None })
}

/// Build the demo project: a two-track tune, a "recording" of it played
/// with patches the bank does not contain (so the surrogate-vs-real
/// mismatch is genuine), and a config wired to both.
fn write_quickstart_project(
    out: &Path,
    steps: u64,
    seed: u64,
) -> Result<PathBuf, Box<dyn std::error::Error>> {
    const RATE: u32 = 8000;
    let lead_pitches: [u8; 32] = [
        60, 62, 64, 67, 69, 67, 64, 62, 60, 64, 67, 72, 69, 67, 64, 62, 64, 67, 69, 72, 69, 67,
        64, 60, 62, 64, 67, 69, 67, 64, 62, 60,
    ];
    let lead: Vec<NoteEvent> = lead_pitches
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let velocity = if i % 4 == 0 { 104 } else { 88 };
            NoteEvent::new(i as f64 * 0.25, 0.22, p, velocity, 0)
        })
        .collect::<Result<_, _>>()?;
    let bass_pitches: [u8; 8] = [36, 43, 45, 41, 36, 43, 45, 43];
    let bass: Vec<NoteEvent> = bass_pitches
        .iter()
        .enumerate()
        .map(|(i, &p)| NoteEvent::new(i as f64, 0.9, p, 100, 1))
        .collect::<Result<_, _>>()?;

    // MIDI at 480 ticks per quarter, 120 bpm: one second is 960 ticks.
    let to_ticks = |events: &[NoteEvent]| {
        events
            .iter()
            .map(|e| {
                let on = (e.onset * 960.0).round() as u64;
                let off = ((e.onset + e.duration) * 960.0).round() as u64;
                (on, off.max(on + 1), e.pitch, e.velocity)
            })
            .collect::<Vec<_>>()
    };
    let midi_bytes = crate::score::smf::encode(
        480,
        &[(0, 500_000)],
        &[
            crate::score::smf::SmfTrackSpec {
                name: Some("Lead".into()),
                channel: 0,
                notes: to_ticks(&lead),
            },
            crate::score::smf::SmfTrackSpec {
                name: Some("Bass".into()),
                channel: 1,
                notes: to_ticks(&bass),
            },
        ],
    );
    std::fs::write(out.join("song.mid"), midi_bytes)?;

    // The "recording": same tune, different timbres than the bank.
    let lead_real = Patch {
        waveform: Waveform::Sawtooth,
        adsr: Adsr { attack: 0.012, decay: 0.10, sustain: 0.65, release: 0.12 },
        detune_cents: 3.0,
        vibrato: Vibrato { rate_hz: 5.0, depth_cents: 12.0 },
        gain_db: 0.0,
    };
    let bass_real = Patch {
        waveform: Waveform::Triangle,
        adsr: Adsr { attack: 0.008, decay: 0.05, sustain: 0.85, release: 0.08 },
        detune_cents: -2.0,
        vibrato: Vibrato::default(),
        gain_db: -3.0,
    };
    let mut mixture = render_events(&lead, &lead_real, RATE)?;
    let bass_clip = render_events(&bass, &bass_real, RATE)?;
    mixture.mix_at(&bass_clip, 0)?;
    let (normalized, _) = crate::audio::peak_normalize(&mixture)?;
    write_wav(out.join("mixture.wav"), &normalized.scaled(0.9)?, BitDepth::Float32)?;

    let bank = PatchBank::new(BTreeMap::from([
        (
            "lead".to_string(),
            vec![Patch {
                waveform: Waveform::Sawtooth,
                adsr: Adsr { attack: 0.01, decay: 0.08, sustain: 0.7, release: 0.1 },
                detune_cents: 0.0,
                vibrato: Vibrato::default(),
                gain_db: 0.0,
            }],
        ),
        (
            "bass".to_string(),
            vec![Patch {
                waveform: Waveform::Triangle,
                adsr: Adsr::default(),
                detune_cents: 0.0,
                vibrato: Vibrato::default(),
                gain_db: -3.0,
            }],
        ),
    ]))?;

    let config = ProjectConfig {
        sample_rate: RATE,
        stft: StftParams {
            window_length: 512,
            hop_length: 128,
            fft_size: 512,
            ..StftParams::default()
        },
        input: crate::config::InputConfig {
            mixture_wav: PathBuf::from("mixture.wav"),
            midi: PathBuf::from("song.mid"),
            target_track: crate::config::TrackRef::Name("Lead".into()),
            target_instrument: "lead".into(),
        },
        background: BackgroundStrategy::OriginalMixture,
        accompaniment: BTreeMap::new(),
        patch_bank: bank,
        ranges: AugmentRanges { excerpt_seconds: 2.0, ..AugmentRanges::default() },
        allow_extended_ranges: false,
        compressor: Default::default(),
        network: crate::config::NetworkConfig {
            hidden_units_per_direction: 32,
            ..Default::default()
        },
        train: TrainConfig { steps, ..TrainConfig::default() },
        chunk: crate::separate::ChunkSpec { seconds: 10.0, overlap_seconds: 5.0 },
        output_dir: Some(PathBuf::from("runs")),
        seed,
    };
    let config_path = out.join("config.json");
    std::fs::write(&config_path, config.to_json_string()?)?;
    Ok(config_path)
}

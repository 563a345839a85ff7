//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datakit::SyntheticSpec;
use crate::denoiser::{AudioInjection, DenoiserConfig};
use crate::diffusion::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::error::Error;
use crate::motion::ComponentTag;
use crate::sampler::{SamplerConfig, SamplerMode};
use crate::trainer::TrainConfig;
use config::{pick, ConfigError, FileConfig};
use manifest::{sidecar, EvalRun, Run, RunManifest, SampleRun, ScheduleRun, ScheduleSettings, SynthRun, TrainRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cmdt", version, about = "Audio-conditioned facial motion diffusion toolkit")]
pub struct Cli {
    /// Configuration file (TOML); defaults to $CMDT_CONFIG when set.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset with a known oracle.
    MakeSynth(SynthFlags),
    /// Train one component denoiser.
    Train(TrainFlags),
    /// Generate full motion for an audio track from three checkpoints.
    Sample(SampleFlags),
    /// Landmark metrics between generated and ground-truth sequences.
    Eval(EvalFlags),
    /// Print or emit the noise schedule tables.
    InspectSchedule(ScheduleFlags),
    /// Re-run a command from its run manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub d_audio: Option<usize>,
    #[arg(long)]
    pub gain: Option<f64>,
    /// Comma-separated oracle frequencies in cycles per frame.
    #[arg(long, value_delimiter = ',')]
    pub frequencies: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub no_phase_channels: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, value_parser = parse_generated)]
    pub component: ComponentTag,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Default settings: `full` (full-size model) or `desk` (small model).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "no_first_frame_loss")]
    pub first_frame_loss: bool,
    #[arg(long)]
    pub no_first_frame_loss: bool,
    #[arg(long)]
    pub windows_per_sequence: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub audio_layers: Option<usize>,
    #[arg(long)]
    pub ff_mult: Option<usize>,
    #[arg(long)]
    pub audio_injection: Option<AudioInjection>,
    #[arg(long, conflicts_with = "no_id_conditioning")]
    pub id_conditioning: bool,
    #[arg(long)]
    pub no_id_conditioning: bool,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub index_map: Option<PathBuf>,
    /// Curve log path; defaults to `<out>.curve.txt`.
    #[arg(long)]
    pub emit_curves: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SampleFlags {
    #[arg(long)]
    pub lips: PathBuf,
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub identity: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<SamplerMode>,
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub index_map: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, conflicts_with = "no_align")]
    pub align: bool,
    #[arg(long)]
    pub no_align: bool,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    #[arg(long)]
    pub nose_index: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScheduleFlags {
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub emit_curves: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn parse_generated(s: &str) -> Result<ComponentTag, String> {
    match s.parse::<ComponentTag>() {
        Ok(ComponentTag::Full) => Err("component must be one of lips, expression, pose".into()),
        Ok(tag) => Ok(tag),
        Err(e) => Err(e.to_string()),
    }
}

fn switch(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(ConfigError::Parse { .. }) => EXIT_USAGE,
            CliError::Config(ConfigError::Read { .. }) => EXIT_DATA,
            CliError::Run(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Command::Replay { manifest } = &cli.command {
        let m = RunManifest::read(manifest)?;
        if m.toolkit_version != manifest::TOOLKIT_VERSION {
            eprintln!("warning: manifest written by version {}, running {}", m.toolkit_version, manifest::TOOLKIT_VERSION);
        }
        return commands::perform(&m.run, false);
    }
    let (file, _) = FileConfig::discover(cli.config.as_deref())?;
    let (run, manifest_path, quiet) = resolve(cli.command, &file)?;
    if let Some(path) = &manifest_path {
        RunManifest::new(run.clone()).write(path)?;
    }
    commands::perform(&run, quiet)
}

fn resolve(command: Command, file: &FileConfig) -> Result<(Run, Option<PathBuf>, bool), CliError> {
    Ok(match command {
        Command::MakeSynth(f) => {
            let s = &file.synth;
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                n_sequences: pick(f.sequences, s.sequences, d.n_sequences),
                frames_per_sequence: pick(f.frames, s.frames, d.frames_per_sequence),
                d_audio: pick(f.d_audio, s.d_audio, d.d_audio),
                component: ComponentTag::Full,
                oracle_gain: pick(f.gain, s.gain, d.oracle_gain),
                oracle_frequencies: pick(f.frequencies, s.frequencies.clone(), d.oracle_frequencies),
                noise_sigma: pick(f.noise_sigma, s.noise_sigma, d.noise_sigma),
                seed: pick(f.seed, s.seed, d.seed),
                fps: pick(f.fps, s.fps, d.fps),
                phase_channels: pick(f.no_phase_channels.then_some(false), s.phase_channels, d.phase_channels),
            };
            let manifest = f.manifest.unwrap_or_else(|| f.out.join("run.manifest.toml"));
            (Run::MakeSynth(SynthRun { out: f.out, spec }), Some(manifest), false)
        }
        Command::Train(f) => {
            let run = resolve_train(&f, file)?;
            let manifest = f.manifest.clone().unwrap_or_else(|| sidecar(&f.out));
            (Run::Train(run), Some(manifest), f.quiet)
        }
        Command::Sample(f) => {
            let s = &file.sample;
            let d = SamplerConfig::default();
            let schedule = ScheduleSettings {
                steps: commands::checkpoint_steps(&f.lips)?,
                beta_start: pick(f.beta_start, file.schedule.beta_start, DEFAULT_BETA_START),
                beta_end: pick(f.beta_end, file.schedule.beta_end, DEFAULT_BETA_END),
            };
            let sampler = SamplerConfig {
                mode: pick(f.mode, s.mode, d.mode),
                ddim_steps: pick(f.ddim_steps, s.ddim_steps, d.ddim_steps),
                chunk_len: pick(f.chunk_len, s.chunk_len, d.chunk_len),
                seed: pick(f.seed, s.seed, d.seed),
            };
            let manifest = f.manifest.unwrap_or_else(|| sidecar(&f.out));
            let run = SampleRun {
                lips: f.lips,
                expr: f.expr,
                pose: f.pose,
                audio: f.audio,
                identity: f.identity,
                out: f.out,
                index_map: f.index_map.or_else(|| s.index_map.clone()),
                schedule,
                sampler,
            };
            (Run::Sample(run), Some(manifest), false)
        }
        Command::Eval(f) => {
            let e = &file.eval;
            let manifest = f.manifest.or_else(|| f.report.as_deref().map(sidecar));
            let run = EvalRun {
                align: pick(switch(f.align, f.no_align), e.align, true),
                chunk_len: pick(f.chunk_len, e.chunk_len, SamplerConfig::default().chunk_len),
                nose_index: pick(f.nose_index, e.nose_index, crate::metrics::NOSE_INDEX),
                gen: f.gen,
                gt: f.gt,
                report: f.report,
            };
            (Run::Eval(run), manifest, false)
        }
        Command::InspectSchedule(f) => {
            let s = &file.schedule;
            let schedule = ScheduleSettings {
                steps: pick(f.steps, s.steps, DEFAULT_STEPS),
                beta_start: pick(f.beta_start, s.beta_start, DEFAULT_BETA_START),
                beta_end: pick(f.beta_end, s.beta_end, DEFAULT_BETA_END),
            };
            let manifest = f.manifest.or_else(|| f.emit_curves.as_deref().map(sidecar));
            (Run::InspectSchedule(ScheduleRun { schedule, emit_curves: f.emit_curves }), manifest, false)
        }
        Command::Replay { .. } => return Err(CliError::Usage("replay cannot be resolved".into())),
    })
}

fn resolve_train(f: &TrainFlags, file: &FileConfig) -> Result<TrainRun, CliError> {
    let t = &file.train;
    let m = &file.model;
    let preset = f.preset.clone().or_else(|| t.preset.clone()).unwrap_or_else(|| "full".into());
    let full = match preset.as_str() {
        "full" => true,
        "desk" => false,
        other => return Err(CliError::Usage(format!("unknown preset {other:?}; expected full or desk"))),
    };
    let c = f.component;
    let td = if full { TrainConfig::full(c) } else { TrainConfig::desk(c) };
    let d_audio = commands::dataset_audio_dim(&f.data)?;
    let md = if full { DenoiserConfig::full(c, d_audio) } else { DenoiserConfig::desk(c, d_audio) };
    let train = TrainConfig {
        component: c,
        epochs: pick(f.epochs, t.epochs, td.epochs),
        batch_size: pick(f.batch, t.batch, td.batch_size),
        learning_rate: pick(f.lr, t.lr, td.learning_rate),
        lambda_weight: pick(f.lambda, t.lambda, td.lambda_weight),
        window_len: pick(f.window, t.window, td.window_len),
        diffusion_steps: pick(f.steps, file.schedule.steps, td.diffusion_steps),
        beta_start: pick(f.beta_start, file.schedule.beta_start, td.beta_start),
        beta_end: pick(f.beta_end, file.schedule.beta_end, td.beta_end),
        seed: pick(f.seed, t.seed, td.seed),
        first_frame_loss: pick(switch(f.first_frame_loss, f.no_first_frame_loss), t.first_frame_loss, td.first_frame_loss),
        windows_per_sequence: pick(f.windows_per_sequence, t.windows_per_sequence, td.windows_per_sequence),
        grad_clip: pick(f.grad_clip, t.grad_clip, td.grad_clip),
        ..td
    };
    let model = DenoiserConfig {
        d_model: pick(f.d_model, m.d_model, md.d_model),
        n_layers: pick(f.layers, m.layers, md.n_layers),
        n_heads: pick(f.heads, m.heads, md.n_heads),
        audio_layers: pick(f.audio_layers, m.audio_layers, md.audio_layers),
        ff_mult: pick(f.ff_mult, m.ff_mult, md.ff_mult),
        audio_injection: pick(f.audio_injection, m.audio_injection, md.audio_injection),
        use_id_conditioning: pick(switch(f.id_conditioning, f.no_id_conditioning), m.id_conditioning, md.use_id_conditioning),
        max_frames: pick(f.max_frames, m.max_frames, md.max_frames.max(train.window_len)),
        diffusion_steps: train.diffusion_steps,
        ..md
    };
    Ok(TrainRun {
        component: c,
        data: f.data.clone(),
        out: f.out.clone(),
        curve_log: f.emit_curves.clone().unwrap_or_else(|| with_suffix(&f.out, ".curve.txt")),
        index_map: f.index_map.clone().or_else(|| t.index_map.clone()),
        train,
        model,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

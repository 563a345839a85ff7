//! Reverse chains and recursive long-form generation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise, embed_timestep, encode_audio, encode_identity, ConditionBundle, DenoiserParams, NormStats};
use crate::diffusion::{ancestral_step, ddim_step, ddim_timesteps, DiffusionState, NoiseSchedule};
use crate::error::{invalid, shape_err, Error, Result};
use crate::index_map::ComponentIndexMap;
use crate::motion::{AudioFeatureSequence, ComponentTag, MotionSequence};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Ancestral,
    Ddim,
}

impl SamplerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ancestral => "ancestral",
            Self::Ddim => "ddim",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ancestral" | "ddpm" => Ok(Self::Ancestral),
            "ddim" => Ok(Self::Ddim),
            _ => invalid(format!("unknown sampler mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub ddim_steps: usize,
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { mode: SamplerMode::Ddim, ddim_steps: 25, chunk_len: 100, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.chunk_len < 2 {
            return invalid(format!("chunk_len must be at least 2, got {}", self.chunk_len));
        }
        if self.mode == SamplerMode::Ddim && (self.ddim_steps == 0 || self.ddim_steps > sched.steps()) {
            return invalid(format!("ddim_steps must be in [1, {}], got {}", sched.steps(), self.ddim_steps));
        }
        Ok(())
    }
}

/// Anything that maps a noisy state to a clean estimate (normalized units).
pub trait X0Predictor {
    fn predict_x0(&self, state: &DiffusionState) -> Result<Mat>;
}

impl<F: Fn(&DiffusionState) -> Result<Mat>> X0Predictor for F {
    fn predict_x0(&self, state: &DiffusionState) -> Result<Mat> {
        self(state)
    }
}

/// A denoiser with its audio and identity encodings computed once.
pub struct ConditionedDenoiser<'a> {
    params: &'a DenoiserParams,
    audio_encoding: Mat,
    id_encoding: Mat,
}

impl<'a> ConditionedDenoiser<'a> {
    /// `first_frame` is in raw (denormalized) units.
    pub fn new(params: &'a DenoiserParams, audio: &AudioFeatureSequence, first_frame: &Mat) -> Result<Self> {
        let first = params.norm_stats().normalize(first_frame);
        Ok(Self { params, audio_encoding: encode_audio(params, audio)?, id_encoding: encode_identity(params, &first)? })
    }
}

impl X0Predictor for ConditionedDenoiser<'_> {
    fn predict_x0(&self, state: &DiffusionState) -> Result<Mat> {
        let cond = ConditionBundle {
            audio_encoding: self.audio_encoding.clone(),
            id_encoding: self.id_encoding.clone(),
            timestep_embedding: embed_timestep(state.t, self.params.config().d_model),
        };
        denoise(self.params, state, &cond)
    }
}

/// Noise stream for one (seed, chunk, component) triple.
pub fn chunk_rng(seed: u64, chunk: usize, component: ComponentTag) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((chunk as u64) << 2) | u64::from(component.to_byte()));
    rng
}

/// Full reverse chain from unit Gaussian noise at `T` down to `t = 0`.
pub fn reverse_chain(
    predictor: &impl X0Predictor,
    shape: (usize, usize),
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Mat> {
    cfg.validate(sched)?;
    let (n, d) = shape;
    let mut state = DiffusionState::new(Mat::randn(n, d, rng), sched.steps());
    match cfg.mode {
        SamplerMode::Ancestral => {
            while state.t > 0 {
                let x0_hat = predictor.predict_x0(&state)?;
                let gamma = Mat::randn(n, d, rng);
                state = ancestral_step(&state, &x0_hat, sched, &gamma)?;
            }
        }
        SamplerMode::Ddim => {
            let ts = ddim_timesteps(sched.steps(), cfg.ddim_steps)?;
            for (i, &t) in ts.iter().enumerate() {
                debug_assert_eq!(state.t, t);
                let t_prev = ts.get(i + 1).copied().unwrap_or(0);
                let x0_hat = predictor.predict_x0(&state)?;
                state = ddim_step(&state, &x0_hat, t_prev, sched)?;
            }
        }
    }
    if !state.x.is_finite() {
        return Err(Error::NonFinite("reverse chain produced non-finite values".into()));
    }
    Ok(state.x)
}

/// Reverse chain through an arbitrary predictor, denormalized with `norm`.
pub fn sample_chunk_with(
    predictor: &impl X0Predictor,
    norm: &NormStats,
    shape: (usize, usize),
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Mat> {
    reverse_chain(predictor, shape, sched, cfg, rng).map(|x| norm.denormalize(&x))
}

fn check_params(params: &DenoiserParams, sched: &NoiseSchedule, cfg: &SamplerConfig) -> Result<()> {
    cfg.validate(sched)?;
    let mc = params.config();
    if mc.diffusion_steps != sched.steps() {
        return invalid(format!("model trained with T={} but schedule has T={}", mc.diffusion_steps, sched.steps()));
    }
    if cfg.chunk_len > mc.max_frames {
        return invalid(format!("chunk_len {} exceeds the model's max_frames {}", cfg.chunk_len, mc.max_frames));
    }
    Ok(())
}

fn sample_chunk_stream(
    params: &DenoiserParams,
    audio_chunk: &AudioFeatureSequence,
    first_frame: &Mat,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    chunk: usize,
) -> Result<Mat> {
    let mc = params.config();
    if audio_chunk.len() != cfg.chunk_len {
        return shape_err(format!("audio chunk has {} frames, expected {}", audio_chunk.len(), cfg.chunk_len));
    }
    if first_frame.shape() != (1, mc.d_motion) {
        return shape_err(format!("first frame must be 1x{}, got {:?}", mc.d_motion, first_frame.shape()));
    }
    let predictor = ConditionedDenoiser::new(params, audio_chunk, first_frame)?;
    let mut rng = chunk_rng(cfg.seed, chunk, mc.component);
    sample_chunk_with(&predictor, params.norm_stats(), (cfg.chunk_len, mc.d_motion), sched, cfg, &mut rng)
}

/// Generate one `chunk_len` window conditioned on `first_frame` (raw units).
pub fn sample_chunk(
    params: &DenoiserParams,
    audio_chunk: &AudioFeatureSequence,
    first_frame: &Mat,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<MotionSequence> {
    check_params(params, sched, cfg)?;
    let frames = sample_chunk_stream(params, audio_chunk, first_frame, sched, cfg, 0)?;
    MotionSequence::new(frames, audio_chunk.fps(), params.config().component)
}

/// Split audio into `chunk_len` windows, zero-padding the last.
pub fn audio_chunks(audio: &AudioFeatureSequence, chunk_len: usize) -> Result<Vec<AudioFeatureSequence>> {
    if chunk_len == 0 {
        return invalid("chunk_len must be positive");
    }
    let feats = audio.features();
    let n = feats.rows();
    (0..n.div_ceil(chunk_len))
        .map(|k| {
            let start = k * chunk_len;
            let end = (start + chunk_len).min(n);
            let mut chunk = feats.rows_range(start, end - start);
            if chunk.rows() < chunk_len {
                chunk = chunk.vcat(&Mat::zeros(chunk_len - chunk.rows(), feats.cols()));
            }
            AudioFeatureSequence::new(chunk, audio.fps())
        })
        .collect()
}

/// Seam bookkeeping for one component stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComponentTrace {
    /// Condition frame handed to chunk `k`.
    pub conditions: Vec<Mat>,
    /// Last generated frame of chunk `k`.
    pub last_frames: Vec<Mat>,
}

/// Recursive generation of a single component over the whole audio track.
pub fn generate_component_long(
    params: &DenoiserParams,
    audio: &AudioFeatureSequence,
    first_frame: &Mat,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<(MotionSequence, ComponentTrace)> {
    check_params(params, sched, cfg)?;
    let n = audio.len();
    if n == 0 {
        return invalid("audio must have at least one frame");
    }
    let mut trace = ComponentTrace::default();
    let mut condition = first_frame.clone();
    let mut pieces = Vec::new();
    for (k, chunk) in audio_chunks(audio, cfg.chunk_len)?.iter().enumerate() {
        let frames = sample_chunk_stream(params, chunk, &condition, sched, cfg, k)?;
        let last = frames.row_mat(frames.rows() - 1);
        trace.conditions.push(std::mem::replace(&mut condition, last.clone()));
        trace.last_frames.push(last);
        pieces.push(frames);
    }
    let mut all = pieces.remove(0);
    for p in &pieces {
        all = all.vcat(p);
    }
    let frames = all.rows_range(0, n);
    Ok((MotionSequence::new(frames, audio.fps(), params.config().component)?, trace))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationTrace {
    pub lips: ComponentTrace,
    pub expression: ComponentTrace,
    pub pose: ComponentTrace,
}

/// Recursive generation of all three components, assembled to the full
/// 70-d layout with the default index map.
pub fn generate_long(
    lips: &DenoiserParams,
    expression: &DenoiserParams,
    pose: &DenoiserParams,
    audio: &AudioFeatureSequence,
    identity_frame: &Mat,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<MotionSequence> {
    let map = ComponentIndexMap::default();
    generate_long_traced(lips, expression, pose, audio, identity_frame, sched, cfg, &map).map(|(m, _)| m)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_long_traced(
    lips: &DenoiserParams,
    expression: &DenoiserParams,
    pose: &DenoiserParams,
    audio: &AudioFeatureSequence,
    identity_frame: &Mat,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    map: &ComponentIndexMap,
) -> Result<(MotionSequence, GenerationTrace)> {
    let full = ComponentTag::Full.dim();
    if identity_frame.shape() != (1, full) {
        return shape_err(format!("identity frame must be 1x{full}, got {:?}", identity_frame.shape()));
    }
    let models = [(ComponentTag::Lips, lips), (ComponentTag::Expression, expression), (ComponentTag::Pose, pose)];
    for (tag, p) in models {
        let c = p.config();
        if c.component != tag || c.d_motion != tag.dim() {
            return shape_err(format!("{tag} slot holds a {} model of width {}", c.component, c.d_motion));
        }
        if c.d_audio != audio.dim() {
            return shape_err(format!("{tag} model expects audio width {}, got {}", c.d_audio, audio.dim()));
        }
    }
    let (id_l, id_e, id_p) = map.split(identity_frame)?;
    let (l, tl) = generate_component_long(lips, audio, &id_l, sched, cfg)?;
    let (e, te) = generate_component_long(expression, audio, &id_e, sched, cfg)?;
    let (p, tp) = generate_component_long(pose, audio, &id_p, sched, cfg)?;
    let frames = map.assemble(l.frames(), e.frames(), p.frames())?;
    let trace = GenerationTrace { lips: tl, expression: te, pose: tp };
    Ok((MotionSequence::new(frames, audio.fps(), ComponentTag::Full)?, trace))
}

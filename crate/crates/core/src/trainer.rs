//! Losses, the optimizer loop, and per-component training.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::{crop_random_window, Dataset, WindowPair};
use crate::denoiser::{full_forward, DenoiserConfig, DenoiserParams, NormStats};
use crate::diffusion::{forward_sample, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};
use crate::error::{invalid, shape_err, Error, Result};
use crate::index_map::ComponentIndexMap;
use crate::motion::ComponentTag;
use crate::tensor::Mat;

/// Mean squared error over every frame and dimension.
pub fn diffusion_loss(x0: &Mat, x0_hat: &Mat) -> Result<f64> {
    if !x0.same_shape(x0_hat) {
        return shape_err(format!("{:?} vs {:?}", x0.shape(), x0_hat.shape()));
    }
    Ok(x0.sub(x0_hat).sum_sq() / x0.len() as f64)
}

/// Mean squared error of the first frame only.
pub fn first_frame_loss(x0_first: &Mat, x0_hat_first: &Mat) -> Result<f64> {
    if x0_first.cols() != x0_hat_first.cols() || x0_first.rows() == 0 || x0_hat_first.rows() == 0 {
        return shape_err("first frames must share a width");
    }
    diffusion_loss(&x0_first.row_mat(0), &x0_hat_first.row_mat(0))
}

/// `λ·L_diff`, plus `L_first` for the head-pose model.
pub fn total_loss(component: ComponentTag, l_diff: f64, l_first: f64, lambda: f64) -> f64 {
    weighted_loss(component == ComponentTag::Pose, l_diff, l_first, lambda)
}

pub fn weighted_loss(with_first: bool, l_diff: f64, l_first: f64, lambda: f64) -> f64 {
    if with_first {
        lambda * l_diff + l_first
    } else {
        lambda * l_diff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub component: ComponentTag,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_weight: f64,
    pub window_len: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    /// Adds `L_first` to the objective; on by default only for pose.
    pub first_frame_loss: bool,
    /// Random windows drawn from each training sequence per epoch.
    pub windows_per_sequence: usize,
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    /// Published protocol: 200 epochs, batch 64, learning rate 1e-4, λ = 6.
    pub fn full(component: ComponentTag) -> Self {
        Self {
            component,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            lambda_weight: 6.0,
            window_len: 100,
            diffusion_steps: 500,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            seed: 0,
            first_frame_loss: component == ComponentTag::Pose,
            windows_per_sequence: 1,
            grad_clip: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    /// Settings for minute-scale runs on the synthetic dataset.
    pub fn desk(component: ComponentTag) -> Self {
        Self { epochs: 50, batch_size: 16, learning_rate: 2e-3, ..Self::full(component) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_len == 0 || self.windows_per_sequence == 0 {
            return invalid("batch size, window length and windows per sequence must be positive");
        }
        let positive = [self.lambda_weight, self.grad_clip, self.adam_eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid("lambda, grad_clip and adam_eps must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return invalid("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return invalid("adam decay constants must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

/// Loss terms and update diagnostics of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: u64,
    pub l_diff: f64,
    pub l_first: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub struct TrainState {
    pub params: DenoiserParams,
    first_moment: Vec<Mat>,
    second_moment: Vec<Mat>,
    pub step: u64,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: DenoiserParams, seed: u64) -> Self {
        let zeros = |p: &DenoiserParams| -> Vec<Mat> {
            p.tensors().iter().map(|t| Mat::zeros(t.value.rows(), t.value.cols())).collect()
        };
        Self {
            first_moment: zeros(&params),
            second_moment: zeros(&params),
            params,
            step: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_7EA1_u64),
        }
    }
}

/// One training example in normalized units.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub x0: Mat,
    pub audio: Mat,
    pub t: usize,
    pub noise: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub l_diff: f64,
    pub l_first: f64,
    pub total: f64,
}

/// Objective value and per-slot gradients for one sample.
pub fn objective_gradients(
    params: &DenoiserParams,
    sample: &TrainingSample,
    sched: &NoiseSchedule,
    lambda: f64,
    with_first: bool,
) -> Result<(LossParts, Vec<Mat>)> {
    let state = forward_sample(&sample.x0, sample.t, sched, &sample.noise)?;
    let first = sample.x0.row_mat(0);
    let (mut g, out) = full_forward(params, &state.x, sample.t, &sample.audio, &first);
    let l_diff = g.tape.mse(out, &sample.x0);
    let scaled = g.tape.scale(l_diff, lambda);
    let head = g.tape.first_row(out);
    let l_first = g.tape.mse(head, &first);
    let loss = if with_first { g.tape.add(scaled, l_first) } else { scaled };
    let parts = LossParts {
        l_diff: g.tape.value(l_diff)[(0, 0)],
        l_first: g.tape.value(l_first)[(0, 0)],
        total: g.tape.value(loss)[(0, 0)],
    };
    let grads = g
        .tape
        .backward(loss, params.n_slots())
        .into_iter()
        .zip(params.tensors())
        .map(|(g, t)| g.unwrap_or_else(|| Mat::zeros(t.value.rows(), t.value.cols())))
        .collect();
    Ok((parts, grads))
}

/// Objective value only.
pub fn objective(
    params: &DenoiserParams,
    sample: &TrainingSample,
    sched: &NoiseSchedule,
    lambda: f64,
    with_first: bool,
) -> Result<LossParts> {
    let state = forward_sample(&sample.x0, sample.t, sched, &sample.noise)?;
    let first = sample.x0.row_mat(0);
    let (g, out) = full_forward(params, &state.x, sample.t, &sample.audio, &first);
    let x0_hat = g.tape.value(out);
    let l_diff = diffusion_loss(&sample.x0, x0_hat)?;
    let l_first = first_frame_loss(&first, x0_hat)?;
    Ok(LossParts { l_diff, l_first, total: weighted_loss(with_first, l_diff, l_first, lambda) })
}

/// Sample `t` and noise per window, take one clipped Adam step on the
/// batch-mean objective.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &[WindowPair],
    sched: &NoiseSchedule,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    if sched.steps() != state.params.config().diffusion_steps {
        return invalid(format!(
            "schedule has {} steps but the model expects {}",
            sched.steps(),
            state.params.config().diffusion_steps
        ));
    }
    let d = state.params.config().d_motion;
    let mut sum: Vec<Mat> = state
        .params
        .tensors()
        .iter()
        .map(|t| Mat::zeros(t.value.rows(), t.value.cols()))
        .collect();
    let (mut l_diff, mut l_first, mut total) = (0.0, 0.0, 0.0);
    for w in batch {
        if w.motion.rows() != cfg.window_len || w.audio.rows() != cfg.window_len {
            return shape_err(format!("window of {} frames, expected {}", w.motion.rows(), cfg.window_len));
        }
        if w.motion.cols() != d {
            return shape_err(format!("window width {} != model width {d}", w.motion.cols()));
        }
        let t = state.rng.random_range(1..=sched.steps());
        let noise = Mat::randn(cfg.window_len, d, &mut state.rng);
        let sample = TrainingSample { x0: state.params.norm_stats().normalize(&w.motion), audio: w.audio.clone(), t, noise };
        let (parts, grads) = objective_gradients(&state.params, &sample, sched, cfg.lambda_weight, cfg.first_frame_loss)?;
        for (s, g) in sum.iter_mut().zip(&grads) {
            s.add_assign(g);
        }
        l_diff += parts.l_diff;
        l_first += parts.l_first;
        total += parts.total;
    }
    let inv = 1.0 / batch.len() as f64;
    let (l_diff, l_first, total) = (l_diff * inv, l_first * inv, total * inv);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {}", state.step + 1)));
    }
    let mut norm_sq = 0.0;
    for g in sum.iter_mut() {
        *g = g.scale(inv);
        norm_sq += g.sum_sq();
    }
    let grad_norm = norm_sq.sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {}", state.step + 1)));
    }
    let clip = if grad_norm > cfg.grad_clip { cfg.grad_clip / grad_norm } else { 1.0 };

    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let lr = cfg.learning_rate;
    for (slot, g) in sum.iter().enumerate() {
        let m = state.first_moment[slot].as_mut_slice();
        let v = state.second_moment[slot].as_mut_slice();
        let p = state.params.tensors_mut()[slot].value.as_mut_slice();
        for (((pi, mi), vi), gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.as_slice()) {
            let gi = gi * clip;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.adam_eps);
        }
    }
    if !state.params.all_finite() {
        return Err(Error::NonFinite(format!("weights after step {}", state.step)));
    }
    Ok(StepMetrics { epoch: state.epoch, step: state.step, l_diff, l_first, total, grad_norm })
}

/// Paired training sequences for one component model.
#[derive(Debug, Clone)]
pub struct ComponentData {
    pub component: ComponentTag,
    /// `(motion, audio)` pairs with equal frame counts.
    pub sequences: Vec<(Mat, Mat)>,
}

impl ComponentData {
    pub fn new(component: ComponentTag, sequences: Vec<(Mat, Mat)>) -> Result<Self> {
        for (i, (m, a)) in sequences.iter().enumerate() {
            if m.cols() != component.dim() {
                return shape_err(format!("sequence {i}: {component} expects width {}, got {}", component.dim(), m.cols()));
            }
            if m.rows() != a.rows() {
                return shape_err(format!("sequence {i}: motion and audio lengths differ"));
            }
        }
        Ok(Self { component, sequences })
    }

    /// Select the given dataset sequences and slice out `component`.
    pub fn from_dataset(ds: &Dataset, component: ComponentTag, map: &ComponentIndexMap, indices: &[usize]) -> Result<Self> {
        let sequences = indices
            .iter()
            .map(|&i| {
                let p = &ds.pairs[i];
                let motion = match p.motion.tag() {
                    t if t == component => p.motion.frames().clone(),
                    ComponentTag::Full => map.slice(p.motion.frames(), component)?,
                    t => return shape_err(format!("cannot train {component} from {t} motion")),
                };
                Ok((motion, p.audio.features().clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(component, sequences)
    }

    pub fn audio_dim(&self) -> Option<usize> {
        self.sequences.first().map(|(_, a)| a.cols())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub curve: Vec<StepMetrics>,
    /// Sequences shorter than the training window.
    pub skipped: usize,
}

/// Line-oriented training curve: `epoch step l_diff l_first total grad_norm`.
pub fn format_curve(curve: &[StepMetrics]) -> String {
    let mut s = String::from("# epoch\tstep\tl_diff\tl_first\ttotal\tgrad_norm\n");
    for m in curve {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", m.epoch, m.step, m.l_diff, m.l_first, m.total, m.grad_norm);
    }
    s
}

/// Train one component model from freshly initialized weights.
pub fn train_component(cfg: &TrainConfig, model: &DenoiserConfig, data: &ComponentData) -> Result<TrainOutcome> {
    train_component_with(cfg, model, data, |_, _| {})
}

/// As [`train_component`], calling `on_epoch(epoch, mean_total_loss)` after
/// every epoch.
pub fn train_component_with(
    cfg: &TrainConfig,
    model: &DenoiserConfig,
    data: &ComponentData,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.component != cfg.component || model.component != cfg.component {
        return invalid(format!(
            "component mismatch: train {}, model {}, data {}",
            cfg.component, model.component, data.component
        ));
    }
    if data.sequences.is_empty() {
        return invalid("empty dataset");
    }
    if cfg.window_len > model.max_frames {
        return invalid(format!("window {} exceeds max_frames {}", cfg.window_len, model.max_frames));
    }
    if model.diffusion_steps != cfg.diffusion_steps {
        return invalid("model and training configs disagree on the diffusion step count");
    }
    if data.audio_dim() != Some(model.d_audio) {
        return shape_err(format!("audio width {:?} != model d_audio {}", data.audio_dim(), model.d_audio));
    }
    let usable: Vec<&(Mat, Mat)> = data.sequences.iter().filter(|(m, _)| m.rows() >= cfg.window_len).collect();
    let skipped = data.sequences.len() - usable.len();
    if usable.is_empty() {
        return invalid(format!("no sequence reaches the {}-frame window", cfg.window_len));
    }
    let sched = cfg.schedule()?;
    let mut params = DenoiserParams::init(model.clone(), cfg.seed)?;
    params.set_norm_stats(NormStats::from_frames(usable.iter().map(|(m, _)| m), model.d_motion))?;
    let mut state = TrainState::new(params, cfg.seed);
    let mut window_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0A11_D0));
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let mut windows = Vec::with_capacity(usable.len() * cfg.windows_per_sequence);
        for (m, a) in &usable {
            for _ in 0..cfg.windows_per_sequence {
                windows.push(crop_random_window(m, a, cfg.window_len, &mut window_rng)?);
            }
        }
        windows.shuffle(&mut window_rng);
        let mut epoch_total = 0.0;
        let mut steps = 0;
        for batch in windows.chunks(cfg.batch_size) {
            let m = train_step(&mut state, cfg, batch, &sched)?;
            epoch_total += m.total;
            steps += 1;
            curve.push(m);
        }
        on_epoch(epoch, epoch_total / steps as f64);
    }
    Ok(TrainOutcome { params: state.params, curve, skipped })
}

/// Moving average over `window` consecutive values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

//! Noise schedule, forward noising, and reverse-step updates.
//!
//! Step indices are 1-based: `t ∈ [1, T]` addresses the schedule tables and
//! `t = 0` denotes clean data, with `ᾱ_0 = 1`.

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Mat;

pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Precomputed per-step tables of a linear variance schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule with `β` interpolated from `beta_start` to `beta_end`
    /// inclusive over `t = 1..=steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return invalid(format!("schedule needs at least 2 steps, got {steps}"));
        }
        if !(beta_start.is_finite() && beta_end.is_finite()) {
            return invalid("schedule endpoints must be finite");
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return invalid(format!(
                "schedule endpoints must satisfy 0 < start < end < 1, got ({beta_start}, {beta_end})"
            ));
        }
        let span = (steps - 1) as f64;
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
            })
            .collect();
        Ok(Self { beta_start, beta_end, beta, alpha, alpha_bar, posterior_var })
    }

    pub fn standard() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule constants are valid")
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_var
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return invalid(format!("step {t} outside [1, {}]", self.steps()));
        }
        Ok(())
    }
}

/// A noisy sequence together with its diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Mat,
    pub t: usize,
}

impl DiffusionState {
    pub fn new(x: Mat, t: usize) -> Self {
        Self { x, t }
    }
}

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Closed-form marginal `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`.
pub fn forward_sample(x0: &Mat, t: usize, sched: &NoiseSchedule, noise: &Mat) -> Result<DiffusionState> {
    same_shape(x0, noise, "noise must match x0")?;
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    Ok(DiffusionState::new(x0.lincomb(ab.sqrt(), noise, (1.0 - ab).sqrt()), t))
}

/// One Markov step `x_t = √(1−β_t)·x_{t−1} + √β_t·noise`.
pub fn forward_step(prev: &DiffusionState, sched: &NoiseSchedule, noise: &Mat) -> Result<DiffusionState> {
    same_shape(&prev.x, noise, "noise must match state")?;
    if prev.t >= sched.steps() {
        return invalid(format!("cannot step past T = {}", sched.steps()));
    }
    let t = prev.t + 1;
    let b = sched.beta(t);
    Ok(DiffusionState::new(prev.x.lincomb((1.0 - b).sqrt(), noise, b.sqrt()), t))
}

/// Noise implied by an `x̂₀` prediction: `ε̂ = (x_t − √ᾱ_t·x̂₀)/√(1−ᾱ_t)`.
pub fn derive_epsilon(state: &DiffusionState, x0_hat: &Mat, sched: &NoiseSchedule) -> Result<Mat> {
    same_shape(&state.x, x0_hat, "x0 prediction must match state")?;
    let ab = sched.alpha_bar(state.t);
    if ab >= 1.0 {
        return Err(Error::Degenerate(format!("alpha_bar at step {} equals 1", state.t)));
    }
    Ok(state.x.lincomb(1.0 / (1.0 - ab).sqrt(), x0_hat, -ab.sqrt() / (1.0 - ab).sqrt()))
}

/// Ancestral update
/// `x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·γ` with `σ_t² = β̃_t`.
/// The step into `t = 0` adds no noise.
pub fn ancestral_step(
    state: &DiffusionState,
    x0_hat: &Mat,
    sched: &NoiseSchedule,
    gamma: &Mat,
) -> Result<DiffusionState> {
    if state.t < 1 {
        return invalid("ancestral step needs t >= 1");
    }
    sched.check_step(state.t)?;
    same_shape(&state.x, gamma, "gamma must match state")?;
    let t = state.t;
    let eps = derive_epsilon(state, x0_hat, sched)?;
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mut x = state.x.lincomb(1.0 / a.sqrt(), &eps, -coef / a.sqrt());
    if t > 1 {
        let sigma = sched.posterior_var(t).sqrt();
        x = x.lincomb(1.0, gamma, sigma);
    }
    Ok(DiffusionState::new(x, t - 1))
}

/// Deterministic (η = 0) DDIM jump from `t` to `t_prev`.
pub fn ddim_step(
    state: &DiffusionState,
    x0_hat: &Mat,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<DiffusionState> {
    if t_prev >= state.t {
        return invalid(format!("DDIM target {t_prev} must precede current step {}", state.t));
    }
    sched.check_step(state.t)?;
    if t_prev == 0 {
        same_shape(&state.x, x0_hat, "x0 prediction must match state")?;
        return Ok(DiffusionState::new(x0_hat.clone(), 0));
    }
    let eps = derive_epsilon(state, x0_hat, sched)?;
    let ab = sched.alpha_bar(t_prev);
    Ok(DiffusionState::new(x0_hat.lincomb(ab.sqrt(), &eps, (1.0 - ab).sqrt()), t_prev))
}

/// Uniform-stride DDIM visit order, descending from `T`; the final jump
/// goes to 0.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return invalid(format!("ddim steps must be in [1, {total}], got {steps}"));
    }
    let stride = total as f64 / steps as f64;
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| total - (i as f64 * stride).round() as usize)
        .collect();
    ts.dedup();
    Ok(ts)
}

#![allow(dead_code)]

use cmdt::denoiser::{AudioInjection, DenoiserConfig, DenoiserParams};
use cmdt::diffusion::NoiseSchedule;
use cmdt::motion::ComponentTag;
use cmdt::tensor::Mat;
use cmdt::trainer::{objective, objective_gradients, TrainingSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct GroupCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_err: f64,
}

impl GroupCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err <= tol || self.analytic_norm.max(self.numeric_norm) < 1e-9
    }
}

pub fn toy_model(mode: AudioInjection, use_id: bool, seed: u64) -> DenoiserParams {
    let cfg = DenoiserConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        audio_layers: 1,
        max_frames: 4,
        audio_injection: mode,
        use_id_conditioning: use_id,
        ..DenoiserConfig::desk(ComponentTag::Pose, 3)
    };
    DenoiserParams::init(cfg, seed).unwrap()
}

pub fn toy_sample(seed: u64, t: usize) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainingSample {
        x0: Mat::randn(4, 6, &mut rng),
        audio: Mat::randn(4, 3, &mut rng),
        t,
        noise: Mat::randn(4, 6, &mut rng),
    }
}

/// Central finite differences over every scalar, compared per named group.
pub fn finite_difference_groups(
    params: &DenoiserParams,
    sample: &TrainingSample,
    sched: &NoiseSchedule,
    lambda: f64,
    with_first: bool,
    h: f64,
) -> Vec<GroupCheck> {
    let (_, grads) = objective_gradients(params, sample, sched, lambda, with_first).unwrap();
    let mut work = params.clone();
    let mut out = Vec::new();
    for slot in 0..params.n_slots() {
        let len = params.tensors()[slot].value.len();
        let mut numeric = vec![0.0; len];
        for (k, num) in numeric.iter_mut().enumerate() {
            let orig = work.tensors()[slot].value.as_slice()[k];
            work.tensors_mut()[slot].value.as_mut_slice()[k] = orig + h;
            let up = objective(&work, sample, sched, lambda, with_first).unwrap().total;
            work.tensors_mut()[slot].value.as_mut_slice()[k] = orig - h;
            let down = objective(&work, sample, sched, lambda, with_first).unwrap().total;
            work.tensors_mut()[slot].value.as_mut_slice()[k] = orig;
            *num = (up - down) / (2.0 * h);
        }
        let analytic = grads[slot].as_slice();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let an = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push(GroupCheck {
            name: params.tensors()[slot].name.clone(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_err: diff / an.max(nn).max(f64::MIN_POSITIVE),
        });
    }
    out
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{AudioInjection, DenoiserConfig};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Mat;

/// Per-dimension z-score statistics of the training motion.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    /// Statistics over the rows of every matrix; near-constant dimensions
    /// keep unit scale.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a Mat>, d: usize) -> Self {
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        let mut n = 0usize;
        for m in frames {
            for i in 0..m.rows() {
                for (j, v) in m.row(i).iter().enumerate() {
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(d);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / nf - m * m).max(0.0);
                let s = var.sqrt();
                if s < 1e-8 { 1.0 } else { s }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn denormalize(&self, z: &Mat) -> Mat {
        Mat::from_fn(z.rows(), z.cols(), |i, j| z[(i, j)] * self.std[j] + self.mean[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// Gaussian with standard deviation `1/√fan_in`.
    Weight,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnBlock {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub ln1: Norm,
    pub attn: AttnBlock,
    pub ln2: Norm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    pub ln1: Norm,
    pub self_attn: AttnBlock,
    pub id_attn: Option<AttnBlock>,
    pub reduce: Linear,
    pub audio_attn: Option<(Norm, AttnBlock)>,
    pub concat: Option<Linear>,
    pub ln2: Norm,
    pub ff: FeedForward,
}

/// Slot indices of every weight table, derived from a config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub specs: Vec<(String, usize, usize, Init)>,
    pub motion_in: Linear,
    pub audio_in: Linear,
    pub audio_layers: Vec<EncoderLayer>,
    pub audio_out: Norm,
    pub id_mlp: Option<(Linear, Linear)>,
    pub layers: Vec<DecoderLayer>,
    pub out_norm: Norm,
    pub out: Linear,
}

struct Builder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl Builder {
    fn slot(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name, rows, cols, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.slot(format!("{name}.weight"), fan_in, fan_out, Init::Weight),
            b: self.slot(format!("{name}.bias"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.slot(format!("{name}.gain"), 1, d, Init::Ones),
            b: self.slot(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnBlock {
        AttnBlock {
            wq: self.slot(format!("{name}.query"), d, d, Init::Weight),
            wk: self.slot(format!("{name}.key"), d, d, Init::Weight),
            wv: self.slot(format!("{name}.value"), d, d, Init::Weight),
            out: self.linear(&format!("{name}.out"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, mult: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, d * mult),
            down: self.linear(&format!("{name}.down"), d * mult, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder { specs: Vec::new() };
        let motion_in = b.linear("motion_in", cfg.d_motion, d);
        let audio_in = b.linear("audio_in", cfg.d_audio, d);
        let audio_layers = (0..cfg.audio_layers)
            .map(|l| {
                let p = format!("audio_enc.{l}");
                EncoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.ff_mult),
                }
            })
            .collect();
        let audio_out = b.norm("audio_enc.ln_out", d);
        let id_mlp = cfg
            .use_id_conditioning
            .then(|| (b.linear("id_mlp.0", cfg.d_motion, d), b.linear("id_mlp.1", d, d)));
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("layers.{l}");
                let concat = (cfg.audio_injection == AudioInjection::Concatenate)
                    .then(|| b.linear(&format!("{p}.audio_concat"), 2 * d, d));
                let ln1 = b.norm(&format!("{p}.ln1"), d);
                let self_attn = b.attn(&format!("{p}.self_attn"), d);
                let id_attn = cfg.use_id_conditioning.then(|| b.attn(&format!("{p}.id_attn"), d));
                let reduce = b.linear(&format!("{p}.reduce"), 2 * d, d);
                let audio_attn = (cfg.audio_injection == AudioInjection::CrossAttention).then(|| {
                    (b.norm(&format!("{p}.audio_attn_ln"), d), b.attn(&format!("{p}.audio_attn"), d))
                });
                DecoderLayer {
                    ln1,
                    self_attn,
                    id_attn,
                    reduce,
                    audio_attn,
                    concat,
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.ff_mult),
                }
            })
            .collect();
        let out_norm = b.norm("out.ln", d);
        let out = b.linear("out.proj", d, cfg.d_motion);
        Self { specs: b.specs, motion_in, audio_in, audio_layers, audio_out, id_mlp, layers, out_norm, out }
    }
}

/// A named weight table.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Mat,
}

/// All learnable weights of one component model, its configuration, and
/// the normalization statistics of its training data.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    tensors: Vec<NamedTensor>,
    norm: NormStats,
    pub(crate) layout: Layout,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors && self.norm == other.norm
    }
}

impl DenoiserParams {
    /// Freshly initialized weights, deterministic in `seed`.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|(name, r, c, init)| {
                let value = match init {
                    Init::Zeros => Mat::zeros(*r, *c),
                    Init::Ones => Mat::filled(*r, *c, 1.0),
                    Init::Weight => {
                        let s = 1.0 / (*r as f64).sqrt();
                        Mat::from_fn(*r, *c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
                    }
                };
                NamedTensor { name: name.clone(), value }
            })
            .collect();
        let norm = NormStats::identity(config.d_motion);
        Ok(Self { config, tensors, norm, layout })
    }

    /// Reassemble from named tables, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_parts(config: DenoiserConfig, tensors: Vec<NamedTensor>, norm: NormStats) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if tensors.len() != layout.specs.len() {
            return shape_err(format!(
                "config implies {} weight tables, found {}",
                layout.specs.len(),
                tensors.len()
            ));
        }
        for ((name, r, c, _), t) in layout.specs.iter().zip(&tensors) {
            if &t.name != name || t.value.shape() != (*r, *c) {
                return shape_err(format!(
                    "expected table {name} of {r}x{c}, found {} of {:?}",
                    t.name,
                    t.value.shape()
                ));
            }
            if !t.value.is_finite() {
                return Err(Error::NonFinite(format!("weight table {name}")));
            }
        }
        if norm.dim() != config.d_motion || norm.std.len() != config.d_motion {
            return shape_err("normalization statistics width does not match d_motion");
        }
        Ok(Self { config, tensors, norm, layout })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, slot: usize) -> &Mat {
        &self.tensors[slot].value
    }

    pub fn n_slots(&self) -> usize {
        self.tensors.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm_stats(&mut self, norm: NormStats) -> Result<()> {
        if norm.dim() != self.config.d_motion {
            return shape_err("normalization statistics width does not match d_motion");
        }
        self.norm = norm;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.is_finite())
    }
}

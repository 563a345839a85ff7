//! The conditional motion diffusion transformer.
//!
//! A noisy motion window is embedded, given a sinusoidal positional
//! encoding, and passed through a stack of decoder layers. Each layer runs
//! self-attention, cross-attention against the identity encoding (one
//! key/value token), concatenates the two outputs, projects back to
//! `d_model`, and applies a feedforward block. Audio features go through
//! a small transformer encoder and are injected according to
//! [`AudioInjection`]. The network predicts the clean window `x̂₀`.

pub mod attention;
mod config;
mod params;

pub use attention::{efficient_attention, efficient_attention_heads};
pub use config::{AudioInjection, DenoiserConfig};
pub use params::{DenoiserParams, NamedTensor, NormStats};

use crate::autograd::{Tape, Var};
use crate::diffusion::DiffusionState;
use crate::error::{shape_err, Result};
use crate::motion::AudioFeatureSequence;
use crate::tensor::Mat;
use params::{AttnBlock, FeedForward, Linear, Norm};

/// Conditioning inputs of one denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    /// `N × d_model`.
    pub audio_encoding: Mat,
    /// `1 × d_model`.
    pub id_encoding: Mat,
    /// `1 × d_model`.
    pub timestep_embedding: Mat,
}

/// Counters recorded during one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Number of times the audio encoding entered the token stream.
    pub audio_injections: usize,
    /// Number of identity cross-attention evaluations.
    pub id_attentions: usize,
}

/// Sinusoidal embedding of a single position or step: entries `2k` and
/// `2k+1` hold `sin(t·ω_k)` and `cos(t·ω_k)` with `ω_k = 10000^(−2k/d)`.
pub fn embed_timestep(t: usize, d_model: usize) -> Mat {
    let mut out = Mat::zeros(1, d_model);
    fill_sinusoid(out.row_mut(0), t as f64);
    out
}

fn fill_sinusoid(row: &mut [f64], pos: f64) {
    let d = row.len() as f64;
    for (j, v) in row.iter_mut().enumerate() {
        let k = (j / 2) as f64;
        let w = (-(2.0 * k / d) * 10000f64.ln()).exp();
        *v = if j % 2 == 0 { (pos * w).sin() } else { (pos * w).cos() };
    }
}

/// `n × d` positional table.
pub fn positional_encoding(n: usize, d: usize) -> Mat {
    let mut pe = Mat::zeros(n, d);
    for i in 0..n {
        fill_sinusoid(pe.row_mut(i), i as f64);
    }
    pe
}

/// Builds the network on a tape. Parameter leaves are created once per
/// slot so gradients accumulate correctly across reuse.
pub(crate) struct Graph<'a> {
    params: &'a DenoiserParams,
    pub tape: Tape,
    slots: Vec<Option<Var>>,
    pub trace: ForwardTrace,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a DenoiserParams) -> Self {
        Self { params, tape: Tape::new(), slots: vec![None; params.n_slots()], trace: ForwardTrace::default() }
    }

    fn p(&mut self, slot: usize) -> Var {
        if let Some(v) = self.slots[slot] {
            return v;
        }
        let v = self.tape.param(slot, self.params.tensor(slot));
        self.slots[slot] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, lin: Linear) -> Var {
        let w = self.p(lin.w);
        let b = self.p(lin.b);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, n: Norm) -> Var {
        let g = self.p(n.g);
        let b = self.p(n.b);
        self.tape.layer_norm(x, g, b)
    }

    fn attention(&mut self, query_src: Var, kv_src: Var, blk: AttnBlock) -> Var {
        let (wq, wk, wv) = (self.p(blk.wq), self.p(blk.wk), self.p(blk.wv));
        let q = self.tape.matmul(query_src, wq);
        let k = self.tape.matmul(kv_src, wk);
        let v = self.tape.matmul(kv_src, wv);
        let a = self.tape.attention(q, k, v, self.params.config().n_heads);
        self.linear(a, blk.out)
    }

    fn feedforward(&mut self, x: Var, ff: FeedForward) -> Var {
        let h = self.linear(x, ff.up);
        let h = self.tape.gelu(h);
        self.linear(h, ff.down)
    }

    pub fn encode_audio(&mut self, audio: &Mat) -> Var {
        let layout = &self.params.layout;
        let (audio_in, enc_layers, audio_out) = (layout.audio_in, layout.audio_layers.clone(), layout.audio_out);
        let x = self.tape.input(audio.clone());
        let mut h = self.linear(x, audio_in);
        let pe = self.tape.input(positional_encoding(audio.rows(), self.params.config().d_model));
        h = self.tape.add(h, pe);
        for layer in enc_layers {
            let a = self.norm(h, layer.ln1);
            let a = self.attention(a, a, layer.attn);
            h = self.tape.add(h, a);
            let f = self.norm(h, layer.ln2);
            let f = self.feedforward(f, layer.ff);
            h = self.tape.add(h, f);
        }
        self.norm(h, audio_out)
    }

    pub fn encode_identity(&mut self, first_frame: &Mat) -> Option<Var> {
        let (l0, l1) = self.params.layout.id_mlp?;
        let x = self.tape.input(first_frame.clone());
        let h = self.linear(x, l0);
        let h = self.tape.gelu(h);
        Some(self.linear(h, l1))
    }

    /// Decoder stack producing `x̂₀` in normalized units.
    pub fn denoise(&mut self, x_t: &Mat, audio_enc: Var, id_enc: Option<Var>, temb: Var) -> Var {
        let cfg = self.params.config().clone();
        let layout = &self.params.layout;
        let (motion_in, layers, out_norm, out) =
            (layout.motion_in, layout.layers.clone(), layout.out_norm, layout.out);
        let n = x_t.rows();
        let x = self.tape.input(x_t.clone());
        let mut h = self.linear(x, motion_in);
        let pe = self.tape.input(positional_encoding(n, cfg.d_model));
        h = self.tape.add(h, pe);
        let cond = self.tape.add_row(audio_enc, temb);
        let zeros = self.tape.input(Mat::zeros(n, cfg.d_model));
        for (l, layer) in layers.into_iter().enumerate() {
            match cfg.audio_injection {
                AudioInjection::AddPerLayer => {
                    h = self.tape.add(h, cond);
                    self.trace.audio_injections += 1;
                }
                AudioInjection::AddOnce => {
                    if l == 0 {
                        h = self.tape.add(h, cond);
                        self.trace.audio_injections += 1;
                    }
                }
                AudioInjection::Concatenate => {
                    let wide = self.tape.hcat(h, audio_enc);
                    let proj = layer.concat.expect("concat projection present in this mode");
                    h = self.linear(wide, proj);
                    h = self.tape.add_row(h, temb);
                    self.trace.audio_injections += 1;
                }
                AudioInjection::CrossAttention => {
                    h = self.tape.add_row(h, temb);
                }
            }
            let a = self.norm(h, layer.ln1);
            let s = self.attention(a, a, layer.self_attn);
            let c = match (layer.id_attn, id_enc) {
                (Some(blk), Some(id)) => {
                    self.trace.id_attentions += 1;
                    self.attention(s, id, blk)
                }
                _ => zeros,
            };
            let sc = self.tape.hcat(s, c);
            let r = self.linear(sc, layer.reduce);
            h = self.tape.add(h, r);
            if let Some((ln, blk)) = layer.audio_attn {
                let q = self.norm(h, ln);
                let a = self.attention(q, audio_enc, blk);
                h = self.tape.add(h, a);
                self.trace.audio_injections += 1;
            }
            let f = self.norm(h, layer.ln2);
            let f = self.feedforward(f, layer.ff);
            h = self.tape.add(h, f);
        }
        let h = self.norm(h, out_norm);
        self.linear(h, out)
    }
}

fn check_audio(params: &DenoiserParams, audio: &Mat) -> Result<()> {
    let cfg = params.config();
    if audio.rows() > cfg.max_frames {
        return shape_err(format!("{} audio frames exceed max_frames {}", audio.rows(), cfg.max_frames));
    }
    if audio.cols() != cfg.d_audio {
        return shape_err(format!("audio width {} != d_audio {}", audio.cols(), cfg.d_audio));
    }
    if audio.rows() == 0 {
        return shape_err("empty audio window");
    }
    Ok(())
}

/// Audio transformer encoder: one `d_model` row per input frame.
pub fn encode_audio(params: &DenoiserParams, audio: &AudioFeatureSequence) -> Result<Mat> {
    check_audio(params, audio.features())?;
    let mut g = Graph::new(params);
    let v = g.encode_audio(audio.features());
    Ok(g.tape.value(v).clone())
}

/// MLP encoding of the (normalized) first frame. Returns a zero row when
/// identity conditioning is disabled.
pub fn encode_identity(params: &DenoiserParams, first_frame: &Mat) -> Result<Mat> {
    let cfg = params.config();
    if first_frame.shape() != (1, cfg.d_motion) {
        return shape_err(format!("first frame must be 1x{}, got {:?}", cfg.d_motion, first_frame.shape()));
    }
    let mut g = Graph::new(params);
    Ok(match g.encode_identity(first_frame) {
        Some(v) => g.tape.value(v).clone(),
        None => Mat::zeros(1, cfg.d_model),
    })
}

/// Assemble the conditioning for one step.
pub fn condition(
    params: &DenoiserParams,
    audio: &AudioFeatureSequence,
    first_frame: &Mat,
    t: usize,
) -> Result<ConditionBundle> {
    Ok(ConditionBundle {
        audio_encoding: encode_audio(params, audio)?,
        id_encoding: encode_identity(params, first_frame)?,
        timestep_embedding: embed_timestep(t, params.config().d_model),
    })
}

fn check_denoise(params: &DenoiserParams, state: &DiffusionState, cond: &ConditionBundle) -> Result<()> {
    let cfg = params.config();
    let (n, d) = state.x.shape();
    if d != cfg.d_motion {
        return shape_err(format!("state width {d} != d_motion {}", cfg.d_motion));
    }
    if n == 0 || n > cfg.max_frames {
        return shape_err(format!("state length {n} outside [1, {}]", cfg.max_frames));
    }
    if cond.audio_encoding.shape() != (n, cfg.d_model) {
        return shape_err(format!(
            "audio encoding {:?} does not match {n}x{}",
            cond.audio_encoding.shape(),
            cfg.d_model
        ));
    }
    if cond.id_encoding.shape() != (1, cfg.d_model) || cond.timestep_embedding.shape() != (1, cfg.d_model) {
        return shape_err("identity encoding and timestep embedding must be 1 x d_model");
    }
    Ok(())
}

/// Predict the clean window `x̂₀` (normalized units) from a noisy state.
pub fn denoise(params: &DenoiserParams, state: &DiffusionState, cond: &ConditionBundle) -> Result<Mat> {
    denoise_traced(params, state, cond).map(|(x, _)| x)
}

pub fn denoise_traced(
    params: &DenoiserParams,
    state: &DiffusionState,
    cond: &ConditionBundle,
) -> Result<(Mat, ForwardTrace)> {
    check_denoise(params, state, cond)?;
    let mut g = Graph::new(params);
    let audio = g.tape.input(cond.audio_encoding.clone());
    let id = params.config().use_id_conditioning.then(|| g.tape.input(cond.id_encoding.clone()));
    let temb = g.tape.input(cond.timestep_embedding.clone());
    let out = g.denoise(&state.x, audio, id, temb);
    Ok((g.tape.value(out).clone(), g.trace))
}

/// Forward pass from raw inputs through both encoders and the decoder,
/// returning the tape and the output variable for differentiation.
pub(crate) fn full_forward<'a>(
    params: &'a DenoiserParams,
    x_t: &Mat,
    t: usize,
    audio: &Mat,
    first_frame: &Mat,
) -> (Graph<'a>, Var) {
    let mut g = Graph::new(params);
    let a = g.encode_audio(audio);
    let id = g.encode_identity(first_frame);
    let temb = g.tape.input(embed_timestep(t, params.config().d_model));
    let out = g.denoise(x_t, a, id, temb);
    (g, out)
}

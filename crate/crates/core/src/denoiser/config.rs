use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::ComponentTag;

/// How the audio encoding enters the decoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioInjection {
    /// Added to the token stream before every decoder layer.
    AddPerLayer,
    /// Attended to by an extra attention sublayer in every decoder layer.
    CrossAttention,
    /// Added once, before the first decoder layer.
    AddOnce,
    /// Concatenated to the token stream before every layer and projected
    /// back to `d_model`.
    Concatenate,
}

impl AudioInjection {
    pub const ALL: [AudioInjection; 4] = [
        AudioInjection::AddPerLayer,
        AudioInjection::CrossAttention,
        AudioInjection::AddOnce,
        AudioInjection::Concatenate,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            AudioInjection::AddPerLayer => "add_per_layer",
            AudioInjection::CrossAttention => "cross_attention",
            AudioInjection::AddOnce => "add_once",
            AudioInjection::Concatenate => "concatenate",
        }
    }
}

impl fmt::Display for AudioInjection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AudioInjection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .map_or_else(|| invalid(format!("unknown audio injection mode {s:?}")), Ok)
    }
}

/// Architecture of one component denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub component: ComponentTag,
    pub d_motion: usize,
    pub d_audio: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Depth of the audio transformer encoder.
    pub audio_layers: usize,
    /// Feedforward expansion factor.
    pub ff_mult: usize,
    pub audio_injection: AudioInjection,
    pub use_id_conditioning: bool,
    pub max_frames: usize,
    /// Diffusion step count `T` the model is trained for.
    pub diffusion_steps: usize,
}

impl DenoiserConfig {
    /// Full-size configuration: 8 layers, 8 heads, width 256.
    pub fn full(component: ComponentTag, d_audio: usize) -> Self {
        Self {
            component,
            d_motion: component.dim(),
            d_audio,
            d_model: 256,
            n_layers: 8,
            n_heads: 8,
            audio_layers: 2,
            ff_mult: 4,
            audio_injection: AudioInjection::AddPerLayer,
            use_id_conditioning: true,
            max_frames: 100,
            diffusion_steps: 500,
        }
    }

    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk(component: ComponentTag, d_audio: usize) -> Self {
        Self { d_model: 32, n_layers: 2, n_heads: 4, audio_layers: 1, ..Self::full(component, d_audio) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_motion != self.component.dim() {
            return invalid(format!(
                "{} model needs d_motion = {}, got {}",
                self.component,
                self.component.dim(),
                self.d_motion
            ));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return invalid(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 {
            return invalid("need at least one decoder layer");
        }
        if self.max_frames == 0 || self.d_audio == 0 || self.ff_mult == 0 {
            return invalid("max_frames, d_audio and ff_mult must be positive");
        }
        if self.diffusion_steps < 2 {
            return invalid("diffusion_steps must be at least 2");
        }
        Ok(())
    }
}

//! Structured-text configuration file. Flags override file values, which
//! override built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::denoiser::AudioInjection;
use crate::sampler::SamplerMode;

pub const CONFIG_ENV: &str = "CMDT_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub synth: SynthFile,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub sample: SampleFile,
    #[serde(default)]
    pub eval: EvalFile,
    #[serde(default)]
    pub schedule: ScheduleFile,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub sequences: Option<usize>,
    pub frames: Option<usize>,
    pub d_audio: Option<usize>,
    pub gain: Option<f64>,
    pub frequencies: Option<Vec<f64>>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub fps: Option<f64>,
    pub phase_channels: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub preset: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub window: Option<usize>,
    pub seed: Option<u64>,
    pub first_frame_loss: Option<bool>,
    pub windows_per_sequence: Option<usize>,
    pub grad_clip: Option<f64>,
    pub index_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub audio_layers: Option<usize>,
    pub ff_mult: Option<usize>,
    pub audio_injection: Option<AudioInjection>,
    pub id_conditioning: Option<bool>,
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFile {
    pub mode: Option<SamplerMode>,
    pub ddim_steps: Option<usize>,
    pub chunk_len: Option<usize>,
    pub seed: Option<u64>,
    pub index_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub align: Option<bool>,
    pub chunk_len: Option<usize>,
    pub nose_index: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(rename = "T")]
    pub steps: Option<usize>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    /// Load from `explicit`, else from the path in `CMDT_CONFIG`, else
    /// return the empty configuration.
    pub fn discover(explicit: Option<&Path>) -> Result<(Self, Option<PathBuf>), ConfigError> {
        let path = explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Ok((Self::load(&p)?, Some(p))),
            None => Ok((Self::default(), None)),
        }
    }
}

/// `flag > file > default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None::<i32>, None, 3), 3);
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let cfg = FileConfig::parse(
            "[train]\nepochs = 3\nlr = 0.5\n[model]\naudio_injection = \"add_once\"\n[schedule]\nT = 100\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, Some(3));
        assert_eq!(cfg.model.audio_injection, Some(AudioInjection::AddOnce));
        assert_eq!(cfg.schedule.steps, Some(100));
        assert!(FileConfig::parse("[train]\nepoch = 3\n", Path::new("x")).is_err());
    }
}

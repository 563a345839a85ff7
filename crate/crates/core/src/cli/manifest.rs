//! Run manifests: the fully resolved settings of one command, written
//! before the work starts and sufficient to repeat it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::SyntheticSpec;
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::motion::ComponentTag;
use crate::sampler::SamplerConfig;
use crate::trainer::TrainConfig;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub run: Run,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Run {
    MakeSynth(SynthRun),
    Train(TrainRun),
    Sample(SampleRun),
    Eval(EvalRun),
    InspectSchedule(ScheduleRun),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub out: PathBuf,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub component: ComponentTag,
    pub data: PathBuf,
    pub out: PathBuf,
    pub curve_log: PathBuf,
    pub index_map: Option<PathBuf>,
    pub train: TrainConfig,
    pub model: DenoiserConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSettings {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub lips: PathBuf,
    pub expr: PathBuf,
    pub pose: PathBuf,
    pub audio: PathBuf,
    pub identity: PathBuf,
    pub out: PathBuf,
    pub index_map: Option<PathBuf>,
    pub schedule: ScheduleSettings,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub gen: PathBuf,
    pub gt: PathBuf,
    pub report: Option<PathBuf>,
    pub align: bool,
    pub chunk_len: usize,
    pub nose_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRun {
    pub schedule: ScheduleSettings,
    pub emit_curves: Option<PathBuf>,
}

impl Run {
    pub fn command(&self) -> &'static str {
        match self {
            Run::MakeSynth(_) => "make-synth",
            Run::Train(_) => "train",
            Run::Sample(_) => "sample",
            Run::Eval(_) => "eval",
            Run::InspectSchedule(_) => "inspect-schedule",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Run::MakeSynth(r) => r.spec.seed,
            Run::Train(r) => r.train.seed,
            Run::Sample(r) => r.sampler.seed,
            Run::Eval(_) | Run::InspectSchedule(_) => 0,
        }
    }

    fn paths(&self) -> (Vec<PathBuf>, Vec<PathBuf>) {
        match self {
            Run::MakeSynth(r) => (vec![], vec![r.out.clone()]),
            Run::Train(r) => {
                let mut inputs = vec![r.data.clone()];
                inputs.extend(r.index_map.clone());
                (inputs, vec![r.out.clone(), r.curve_log.clone()])
            }
            Run::Sample(r) => {
                let mut inputs = vec![r.lips.clone(), r.expr.clone(), r.pose.clone(), r.audio.clone(), r.identity.clone()];
                inputs.extend(r.index_map.clone());
                (inputs, vec![r.out.clone()])
            }
            Run::Eval(r) => (vec![r.gen.clone(), r.gt.clone()], r.report.iter().cloned().collect()),
            Run::InspectSchedule(r) => (vec![], r.emit_curves.iter().cloned().collect()),
        }
    }
}

impl RunManifest {
    pub fn new(run: Run) -> Self {
        let (inputs, outputs) = run.paths();
        Self {
            command: run.command().to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            seed: run.seed(),
            inputs,
            outputs,
            run,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed(format!("run manifest: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Ok(fs::write(path, self.to_toml()?)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// `<path>.manifest.toml`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SamplerMode;

    #[test]
    fn round_trips_every_run_kind() {
        let schedule = ScheduleSettings { steps: 500, beta_start: 1e-4, beta_end: 0.02 };
        let runs = vec![
            Run::MakeSynth(SynthRun { out: "d".into(), spec: SyntheticSpec::default() }),
            Run::Train(TrainRun {
                component: ComponentTag::Pose,
                data: "d".into(),
                out: "p.ckpt".into(),
                curve_log: "p.curve.txt".into(),
                index_map: None,
                train: TrainConfig::full(ComponentTag::Pose),
                model: DenoiserConfig::desk(ComponentTag::Pose, 16),
            }),
            Run::Sample(SampleRun {
                lips: "l".into(),
                expr: "e".into(),
                pose: "p".into(),
                audio: "a".into(),
                identity: "i".into(),
                out: "o".into(),
                index_map: Some("m.txt".into()),
                schedule,
                sampler: SamplerConfig { mode: SamplerMode::Ancestral, ..SamplerConfig::default() },
            }),
            Run::Eval(EvalRun { gen: "g".into(), gt: "t".into(), report: None, align: true, chunk_len: 100, nose_index: 30 }),
            Run::InspectSchedule(ScheduleRun { schedule, emit_curves: Some("c.txt".into()) }),
        ];
        for run in runs {
            let m = RunManifest::new(run);
            let text = m.to_toml().unwrap();
            assert_eq!(RunManifest::from_toml(&text).unwrap(), m, "{text}");
        }
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("out/pose.ckpt")), PathBuf::from("out/pose.ckpt.manifest.toml"));
    }
}

//! Synthetic paired audio/motion data with a known oracle.
//!
//! Motion dimension `j` at frame `i` is
//! `gain · sin(2π f_{j mod L} i) · mean(audio_i) + N(0, σ²)`.
//! Audio frames carry, when `phase_channels` is set, the pair
//! `(sin 2π f_k i, cos 2π f_k i)` for every oracle frequency, followed by
//! unit-variance AR(1) channels. The phase pairs make the oracle a function
//! of the audio window alone, independent of where the window was cropped.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::formats::{read_audio_features, read_motion, write_audio_features, write_motion};
use crate::error::{invalid, Error, Result};
use crate::motion::{AudioFeatureSequence, ComponentTag, MotionSequence};
use crate::tensor::Mat;

const AR_COEF: f64 = 0.9;
const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub d_audio: usize,
    pub component: ComponentTag,
    pub oracle_gain: f64,
    /// Cycles per frame.
    pub oracle_frequencies: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub fps: f64,
    pub phase_channels: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sequences: 200,
            frames_per_sequence: 300,
            d_audio: 16,
            component: ComponentTag::Full,
            oracle_gain: 1.0,
            oracle_frequencies: vec![0.011, 0.023, 0.037, 0.053, 0.071],
            noise_sigma: 0.01,
            seed: 0,
            fps: 25.0,
            phase_channels: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 || self.frames_per_sequence == 0 || self.d_audio == 0 {
            return invalid("synthetic dataset sizes must be positive");
        }
        if self.oracle_frequencies.is_empty() {
            return invalid("need at least one oracle frequency");
        }
        let finite = self.oracle_gain.is_finite()
            && self.noise_sigma.is_finite()
            && self.oracle_frequencies.iter().all(|f| f.is_finite());
        if !finite || self.noise_sigma < 0.0 {
            return invalid("oracle parameters must be finite with noise_sigma >= 0");
        }
        if self.phase_channels && self.d_audio < 2 * self.oracle_frequencies.len() {
            return invalid(format!(
                "d_audio {} cannot hold {} phase channels",
                self.d_audio,
                2 * self.oracle_frequencies.len()
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return invalid("fps must be positive");
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> String {
        let freqs: Vec<String> = self.oracle_frequencies.iter().map(|f| f.to_string()).collect();
        format!(
            "kind=synthetic\nn_sequences={}\nframes_per_sequence={}\nd_audio={}\ncomponent={}\n\
             oracle_gain={}\noracle_frequencies={}\nnoise_sigma={}\nseed={}\nfps={}\nphase_channels={}\n",
            self.n_sequences,
            self.frames_per_sequence,
            self.d_audio,
            self.component,
            self.oracle_gain,
            freqs.join(","),
            self.noise_sigma,
            self.seed,
            self.fps,
            self.phase_channels,
        )
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("manifest line without '=': {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<'a>(kv: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
            kv.get(k).map(String::as_str).ok_or_else(|| Error::Malformed(format!("manifest lacks {k}")))
        }
        fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            get(kv, k)?.parse().map_err(|_| Error::Malformed(format!("manifest {k} is not a number")))
        }
        if get(&kv, "kind")? != "synthetic" {
            return Err(Error::Malformed("manifest kind is not synthetic".into()));
        }
        let oracle_frequencies = get(&kv, "oracle_frequencies")?
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("bad frequency {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            n_sequences: num(&kv, "n_sequences")?,
            frames_per_sequence: num(&kv, "frames_per_sequence")?,
            d_audio: num(&kv, "d_audio")?,
            component: get(&kv, "component")?.parse()?,
            oracle_gain: num(&kv, "oracle_gain")?,
            oracle_frequencies,
            noise_sigma: num(&kv, "noise_sigma")?,
            seed: num(&kv, "seed")?,
            fps: num(&kv, "fps")?,
            phase_channels: get(&kv, "phase_channels")? == "true",
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub motion: MotionSequence,
    pub audio: AudioFeatureSequence,
}

/// An in-memory paired dataset plus the spec that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub pairs: Vec<SequencePair>,
}

fn round_f32(m: Mat) -> Mat {
    m.map(|v| v as f32 as f64)
}

/// Noise-free oracle motion for an audio sequence.
pub fn oracle_motion(spec: &SyntheticSpec, audio: &Mat) -> Mat {
    let d = spec.component.dim();
    let l = spec.oracle_frequencies.len();
    Mat::from_fn(audio.rows(), d, |i, j| {
        let mean = audio.row(i).iter().sum::<f64>() / audio.cols() as f64;
        spec.oracle_gain * (TAU * spec.oracle_frequencies[j % l] * i as f64).sin() * mean
    })
}

fn synth_audio(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Mat {
    let n = spec.frames_per_sequence;
    let phase = if spec.phase_channels { 2 * spec.oracle_frequencies.len() } else { 0 };
    let mut audio = Mat::zeros(n, spec.d_audio);
    for (k, f) in spec.oracle_frequencies.iter().enumerate().take(phase / 2) {
        for i in 0..n {
            audio[(i, 2 * k)] = (TAU * f * i as f64).sin();
            audio[(i, 2 * k + 1)] = (TAU * f * i as f64).cos();
        }
    }
    let innov = (1.0 - AR_COEF * AR_COEF).sqrt();
    for c in phase..spec.d_audio {
        let mut state: f64 = rng.sample(StandardNormal);
        for i in 0..n {
            if i > 0 {
                state = AR_COEF * state + innov * rng.sample::<f64, _>(StandardNormal);
            }
            audio[(i, c)] = state;
        }
    }
    round_f32(audio)
}

/// Generate a dataset; deterministic in `spec.seed`.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.n_sequences);
    for _ in 0..spec.n_sequences {
        let audio = synth_audio(spec, &mut rng);
        let mut motion = oracle_motion(spec, &audio);
        if spec.noise_sigma > 0.0 {
            for v in motion.as_mut_slice() {
                *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        pairs.push(SequencePair {
            motion: MotionSequence::new(round_f32(motion), spec.fps, spec.component)?,
            audio: AudioFeatureSequence::new(audio, spec.fps)?,
        });
    }
    Ok(Dataset { spec: spec.clone(), pairs })
}

/// Seed-stable 10% validation membership.
pub fn is_validation(seed: u64, index: usize) -> bool {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z % 10 == 0
}

impl Dataset {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST), self.spec.to_manifest())?;
        for (i, p) in self.pairs.iter().enumerate() {
            write_motion(dir.join(format!("seq_{i:05}.mseq")), &p.motion)?;
            write_audio_features(dir.join(format!("seq_{i:05}.afea")), &p.audio)?;
        }
        Ok(())
    }

    /// Read only the dataset manifest.
    pub fn load_spec(dir: impl AsRef<Path>) -> Result<SyntheticSpec> {
        SyntheticSpec::from_manifest(&fs::read_to_string(dir.as_ref().join(MANIFEST))?)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec = Self::load_spec(dir)?;
        let pairs = (0..spec.n_sequences)
            .map(|i| {
                let motion = read_motion(dir.join(format!("seq_{i:05}.mseq")))?;
                let audio = read_audio_features(dir.join(format!("seq_{i:05}.afea")))?;
                if motion.len() != audio.len() {
                    return Err(Error::Shape(format!("pair {i}: motion and audio lengths differ")));
                }
                Ok(SequencePair { motion, audio })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, pairs })
    }

    /// Indices of the training and validation sequences.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.pairs.len()).partition(|&i| !is_validation(self.spec.seed, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { n_sequences: 4, frames_per_sequence: 30, component: ComponentTag::Pose, ..Default::default() }
    }

    #[test]
    fn zero_gain_zero_noise_is_silent() {
        let spec = SyntheticSpec { oracle_gain: 0.0, noise_sigma: 0.0, ..small() };
        let ds = make_synthetic_dataset(&spec).unwrap();
        assert!(ds.pairs.iter().all(|p| p.motion.frames().max_abs() == 0.0));
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_synthetic_dataset(&small()).unwrap().write(a.path()).unwrap();
        make_synthetic_dataset(&small()).unwrap().write(b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
        let other = make_synthetic_dataset(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(other, make_synthetic_dataset(&small()).unwrap());
    }

    #[test]
    fn manifest_recomputes_oracle() {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic_dataset(&small()).unwrap().write(dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.spec, small());
        // The residual is the injected noise plus f32 rounding; its sample
        // RMS sits within three standard errors of sigma.
        for p in &ds.pairs {
            let oracle = oracle_motion(&ds.spec, p.audio.features());
            let resid = p.motion.frames().sub(&oracle);
            let bound = ds.spec.noise_sigma * (1.0 + 3.0 / (2.0 * resid.len() as f64).sqrt());
            assert!(resid.rms() <= bound, "{} > {bound}", resid.rms());
        }
        let quiet = SyntheticSpec { noise_sigma: 0.0, ..small() };
        for p in make_synthetic_dataset(&quiet).unwrap().pairs {
            let oracle = oracle_motion(&quiet, p.audio.features());
            assert!(p.motion.frames().sub(&oracle).max_abs() < 1e-6);
        }
    }

    #[test]
    fn phase_channels_lead_the_audio() {
        let ds = make_synthetic_dataset(&small()).unwrap();
        let a = ds.pairs[0].audio.features();
        let f = small().oracle_frequencies[1];
        assert!((a[(7, 2)] - (TAU * f * 7.0).sin()).abs() < 1e-6);
        assert!((a[(7, 3)] - (TAU * f * 7.0).cos()).abs() < 1e-6);
        let bad = SyntheticSpec { d_audio: 9, ..small() };
        assert!(make_synthetic_dataset(&bad).is_err());
    }

    #[test]
    fn validation_split_is_about_ten_percent() {
        let n = (0..2000).filter(|&i| is_validation(0, i)).count();
        assert!((150..250).contains(&n), "{n}");
        assert_eq!(is_validation(5, 17), is_validation(5, 17));
    }
}

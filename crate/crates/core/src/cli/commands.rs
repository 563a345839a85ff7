use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::manifest::{EvalRun, Run, SampleRun, ScheduleRun, ScheduleSettings, SynthRun, TrainRun};
use super::CliError;
use crate::datakit::{
    make_synthetic_dataset, read_audio_features, read_checkpoint, read_landmarks, read_motion, write_checkpoint,
    write_motion, Dataset,
};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::index_map::ComponentIndexMap;
use crate::metrics::{ahd, lmd, seam_ratio, LandmarkSequence, MOUTH_INDICES};
use crate::motion::ComponentTag;
use crate::sampler::generate_long_traced;
use crate::trainer::{format_curve, train_component_with, ComponentData};

pub(super) fn perform(run: &Run, quiet: bool) -> Result<(), CliError> {
    match run {
        Run::MakeSynth(r) => make_synth(r),
        Run::Train(r) => train(r, quiet),
        Run::Sample(r) => sample(r),
        Run::Eval(r) => eval(r),
        Run::InspectSchedule(r) => inspect_schedule(r),
    }
    .map_err(CliError::from)
}

pub(super) fn checkpoint_steps(path: &Path) -> Result<usize> {
    Ok(read_checkpoint(path)?.config().diffusion_steps)
}

pub(super) fn dataset_audio_dim(dir: &Path) -> Result<usize> {
    Ok(Dataset::load_spec(dir)?.d_audio)
}

fn index_map(path: Option<&Path>) -> Result<ComponentIndexMap> {
    path.map_or_else(|| Ok(ComponentIndexMap::default()), ComponentIndexMap::load)
}

fn schedule(s: &ScheduleSettings) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end)
}

fn make_synth(r: &SynthRun) -> Result<()> {
    let ds = make_synthetic_dataset(&r.spec)?;
    ds.write(&r.out)?;
    let (train, val) = ds.split();
    println!("wrote {} sequences ({} train, {} validation) to {}", ds.pairs.len(), train.len(), val.len(), r.out.display());
    Ok(())
}

fn train(r: &TrainRun, quiet: bool) -> Result<()> {
    let ds = Dataset::load(&r.data)?;
    let map = index_map(r.index_map.as_deref())?;
    let (train_idx, _) = ds.split();
    let data = ComponentData::from_dataset(&ds, r.component, &map, &train_idx)?;
    let out = train_component_with(&r.train, &r.model, &data, |epoch, loss| {
        if !quiet {
            eprintln!("epoch {:>4}  loss {loss:.6}", epoch + 1);
        }
    })?;
    write_checkpoint(&r.out, &out.params)?;
    fs::write(&r.curve_log, format_curve(&out.curve))?;
    let last = out.curve.last().map_or(f64::NAN, |m| m.total);
    println!(
        "trained {} for {} steps (final loss {last}); {} sequences skipped; checkpoint {}",
        r.component,
        out.curve.len(),
        out.skipped,
        r.out.display()
    );
    Ok(())
}

fn sample(r: &SampleRun) -> Result<()> {
    let lips = read_checkpoint(&r.lips)?;
    let expr = read_checkpoint(&r.expr)?;
    let pose = read_checkpoint(&r.pose)?;
    let audio = read_audio_features(&r.audio)?;
    let identity = read_motion(&r.identity)?;
    if identity.tag() != ComponentTag::Full {
        return Err(Error::Shape(format!("identity file holds {} motion; expected full", identity.tag())));
    }
    let map = index_map(r.index_map.as_deref())?;
    let sched = schedule(&r.schedule)?;
    let first = identity.frames().row_mat(0);
    let (seq, _) = generate_long_traced(&lips, &expr, &pose, &audio, &first, &sched, &r.sampler, &map)?;
    write_motion(&r.out, &seq)?;
    println!("wrote {} frames ({} mode) to {}", seq.len(), r.sampler.mode, r.out.display());
    Ok(())
}

/// Evaluation report: `metric value frames_used frames_dropped`, one per line.
pub fn eval_report(gen: &LandmarkSequence, gt: &LandmarkSequence, align: bool, chunk_len: usize, nose: usize) -> Result<String> {
    if gen.frames() != gt.frames() || gen.landmarks() != gt.landmarks() {
        return Err(Error::Shape(format!(
            "generated {}x{} vs ground truth {}x{} (frames x landmarks)",
            gen.frames(),
            gen.landmarks(),
            gt.frames(),
            gt.landmarks()
        )));
    }
    let mut s = String::from("# metric\tvalue\tframes_used\tframes_dropped\n");
    let mut line = |name: &str, value: f64, used: usize, dropped: usize| {
        let _ = writeln!(s, "{name}\t{value}\t{used}\t{dropped}");
    };
    let k = gen.landmarks();
    if k > *MOUTH_INDICES.iter().max().unwrap_or(&0) {
        let f = lmd(gen, gt, align)?;
        line("F-LMD", f.value, f.frames_used, f.frames_dropped);
        let m = lmd(&gen.subset(&MOUTH_INDICES)?, &gt.subset(&MOUTH_INDICES)?, align)?;
        line("M-LMD", m.value, m.frames_used, m.frames_dropped);
    } else if k == MOUTH_INDICES.len() {
        let m = lmd(gen, gt, align)?;
        line("M-LMD", m.value, m.frames_used, m.frames_dropped);
    } else {
        let f = lmd(gen, gt, align)?;
        line("LMD", f.value, f.frames_used, f.frames_dropped);
    }
    let n = gen.frames();
    if nose < k {
        line("AHD-gen", ahd(gen, nose)?, n, 0);
        line("AHD-gt", ahd(gt, nose)?, n, 0);
    }
    line("seam-ratio", seam_ratio(gen.points(), chunk_len)?, n, 0);
    Ok(s)
}

fn eval(r: &EvalRun) -> Result<()> {
    let gen = read_landmarks(&r.gen)?;
    let gt = read_landmarks(&r.gt)?;
    let report = eval_report(&gen, &gt, r.align, r.chunk_len, r.nose_index)?;
    if let Some(path) = &r.report {
        fs::write(path, &report)?;
    }
    print!("{report}");
    Ok(())
}

pub fn schedule_table(sched: &NoiseSchedule) -> String {
    let mut s = String::from("# t\tbeta\talpha\talpha_bar\tposterior_var\n");
    for t in 1..=sched.steps() {
        let _ = writeln!(
            s,
            "{t}\t{}\t{}\t{}\t{}",
            sched.beta(t),
            sched.alpha(t),
            sched.alpha_bar(t),
            sched.posterior_var(t)
        );
    }
    s
}

fn inspect_schedule(r: &ScheduleRun) -> Result<()> {
    let sched = schedule(&r.schedule)?;
    let table = schedule_table(&sched);
    match &r.emit_curves {
        Some(path) => {
            fs::write(path, table)?;
            println!("T={} alpha_bar(T)={}; table written to {}", sched.steps(), sched.alpha_bar(sched.steps()), path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

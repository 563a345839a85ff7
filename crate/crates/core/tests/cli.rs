use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmdt::datakit::{read_motion, write_audio_features, write_landmarks, write_motion};
use cmdt::metrics::LandmarkSequence;
use cmdt::motion::{AudioFeatureSequence, ComponentTag, MotionSequence};
use cmdt::tensor::Mat;

fn cmdt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdt"))
        .current_dir(dir)
        .env_remove("CMDT_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cmdt(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY_MODEL: &[&str] = &[
    "--preset", "desk", "--d-model", "8", "--heads", "2", "--layers", "1", "--window", "20", "--batch", "4",
    "--max-frames", "100", "--quiet",
];

fn synth(dir: &Path) {
    ok(dir, &["make-synth", "--out", "synth", "--sequences", "6", "--frames", "40", "--d-audio", "12"]);
}

fn train(dir: &Path, tag: &str, epochs: &str) -> PathBuf {
    let out = format!("{tag}.ckpt");
    let mut args = vec!["train", "--component", tag, "--data", "synth", "--out", &out, "--epochs", epochs];
    args.extend_from_slice(TINY_MODEL);
    ok(dir, &args);
    dir.join(out)
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["train", "--bogus"][..], &["frobnicate"], &[]] {
        let out = cmdt(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"), "{args:?}");
    }
    let out = cmdt(dir.path(), &["train", "--component", "full", "--data", "d", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    // File paths have no defaults.
    assert_eq!(cmdt(dir.path(), &["train", "--component", "pose"]).status.code(), Some(1));
    assert_eq!(cmdt(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmdt(dir.path(), &["train", "--component", "pose", "--data", "missing", "--out", "p.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cmdt(dir.path(), &["eval", "--gen", "a.lmrk", "--gt", "b.lmrk"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_with_zero_epochs_writes_initialization_and_empty_curve() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ckpt = train(dir.path(), "pose", "0");
    assert!(ckpt.exists());
    let curve = std::fs::read_to_string(dir.path().join("pose.ckpt.curve.txt")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 0);
    assert!(dir.path().join("pose.ckpt.manifest.toml").exists());
}

#[test]
fn repeated_training_gives_identical_curves_and_replay_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    train(dir.path(), "lips", "2");
    let curve = std::fs::read(dir.path().join("lips.ckpt.curve.txt")).unwrap();
    let ckpt = std::fs::read(dir.path().join("lips.ckpt")).unwrap();
    train(dir.path(), "lips", "2");
    assert_eq!(std::fs::read(dir.path().join("lips.ckpt.curve.txt")).unwrap(), curve);
    std::fs::remove_file(dir.path().join("lips.ckpt")).unwrap();
    ok(dir.path(), &["replay", "lips.ckpt.manifest.toml"]);
    assert_eq!(std::fs::read(dir.path().join("lips.ckpt")).unwrap(), ckpt);
    assert_eq!(std::fs::read(dir.path().join("lips.ckpt.curve.txt")).unwrap(), curve);
}

#[test]
fn config_file_and_env_precedence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("cfg.toml"), "[train]\nepochs = 1\nlr = 0.5\n").unwrap();
    let manifest = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    let mut args = vec!["--config", "cfg.toml", "train", "--component", "pose", "--data", "synth", "--out", "a.ckpt", "--lr", "0.25"];
    args.extend_from_slice(TINY_MODEL);
    ok(dir.path(), &args);
    let m = manifest("a.ckpt.manifest.toml");
    assert!(m.contains("epochs = 1"), "{m}");
    assert!(m.contains("learning_rate = 0.25"), "{m}");
    assert!(m.contains("lambda_weight = 6.0"), "{m}");

    // The same file through the environment variable.
    let mut args = vec!["train", "--component", "pose", "--data", "synth", "--out", "b.ckpt"];
    args.extend_from_slice(TINY_MODEL);
    let out = Command::new(env!("CARGO_BIN_EXE_cmdt"))
        .current_dir(dir.path())
        .env("CMDT_CONFIG", "cfg.toml")
        .args(&args)
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = manifest("b.ckpt.manifest.toml");
    assert!(m.contains("learning_rate = 0.5") && m.contains("epochs = 1"), "{m}");

    std::fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 1\n").unwrap();
    assert_eq!(cmdt(dir.path(), &["--config", "bad.toml", "inspect-schedule"]).status.code(), Some(1));
    assert_eq!(cmdt(dir.path(), &["--config", "nope.toml", "inspect-schedule"]).status.code(), Some(2));
}

#[test]
fn sample_lengths_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for tag in ["lips", "expression", "pose"] {
        train(d, tag, "0");
    }
    let id = MotionSequence::new(Mat::from_fn(2, 70, |i, j| (i + j) as f64 * 0.01), 25.0, ComponentTag::Full).unwrap();
    write_motion(d.join("id.mseq"), &id).unwrap();
    for n in [100, 333] {
        let audio = AudioFeatureSequence::new(Mat::from_fn(n, 12, |i, j| ((i * 12 + j) as f64 * 0.1).sin()), 25.0).unwrap();
        write_audio_features(d.join("a.afea"), &audio).unwrap();
        let run = |out: &str| {
            ok(d, &[
                "sample", "--lips", "lips.ckpt", "--expr", "expression.ckpt", "--pose", "pose.ckpt", "--audio", "a.afea",
                "--identity", "id.mseq", "--mode", "ddim", "--ddim-steps", "25", "--seed", "4", "--out", out,
            ]);
            std::fs::read(d.join(out)).unwrap()
        };
        let a = run("g1.mseq");
        let b = run("g2.mseq");
        assert_eq!(a, b);
        let seq = read_motion(d.join("g1.mseq")).unwrap();
        assert_eq!((seq.len(), seq.dim(), seq.tag()), (n, 70, ComponentTag::Full));
        std::fs::remove_file(d.join("g1.mseq")).unwrap();
        ok(d, &["replay", "g1.mseq.manifest.toml"]);
        assert_eq!(std::fs::read(d.join("g1.mseq")).unwrap(), a);
    }
    // Checkpoint in the wrong slot.
    let out = cmdt(d, &[
        "sample", "--lips", "pose.ckpt", "--expr", "expression.ckpt", "--pose", "lips.ckpt", "--audio", "a.afea",
        "--identity", "id.mseq", "--out", "x.mseq",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_lmk(path: &Path, frames: &[Vec<[f64; 2]>]) {
    write_landmarks(path, &LandmarkSequence::from_frames(frames, 25.0).unwrap()).unwrap();
}

fn report_value(report: &str, metric: &str) -> f64 {
    report
        .lines()
        .find_map(|l| {
            let mut f = l.split('\t');
            (f.next() == Some(metric)).then(|| f.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{metric} missing in {report}"))
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let frames: Vec<Vec<[f64; 2]>> = (0..4)
        .map(|f| {
            // Multiples of 1/8 stay exact through the f32 file format.
            let q = |v: f64| (v * 8.0).round() / 8.0;
            (0..68).map(|k| [q((k as f64 * 0.37 + f as f64).sin() * 10.0), q((k as f64 * 0.11).cos() * 8.0 + f as f64)]).collect()
        })
        .collect();
    let shifted: Vec<Vec<[f64; 2]>> = frames.iter().map(|fr| fr.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect()).collect();
    write_lmk(&d.join("gen.lmrk"), &frames);
    write_lmk(&d.join("gt.lmrk"), &shifted);
    let same = ok(d, &["eval", "--gen", "gen.lmrk", "--gt", "gen.lmrk"]);
    assert_eq!(report_value(&same, "F-LMD"), 0.0);
    assert_eq!(report_value(&same, "M-LMD"), 0.0);
    let aligned = ok(d, &["eval", "--gen", "gen.lmrk", "--gt", "gt.lmrk", "--report", "r.txt"]);
    assert!(report_value(&aligned, "F-LMD").abs() < 1e-9);
    assert_eq!(std::fs::read_to_string(d.join("r.txt")).unwrap(), aligned);
    assert!(d.join("r.txt.manifest.toml").exists());
    let raw = ok(d, &["eval", "--gen", "gen.lmrk", "--gt", "gt.lmrk", "--no-align"]);
    assert!((report_value(&raw, "F-LMD") - 5.0).abs() < 1e-12);
    assert!((report_value(&raw, "M-LMD") - 5.0).abs() < 1e-12);
    write_lmk(&d.join("short.lmrk"), &frames[..3]);
    assert_eq!(cmdt(d, &["eval", "--gen", "gen.lmrk", "--gt", "short.lmrk"]).status.code(), Some(2));
}

#[test]
fn inspect_schedule_emits_columns() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(dir.path(), &["inspect-schedule", "--T", "10"]);
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.split('\t').count() == 5));
    ok(dir.path(), &["inspect-schedule", "--emit-curves", "s.txt"]);
    let text = std::fs::read_to_string(dir.path().join("s.txt")).unwrap();
    assert_eq!(text.lines().count(), 501);
    let first = std::fs::read(dir.path().join("s.txt")).unwrap();
    ok(dir.path(), &["replay", "s.txt.manifest.toml"]);
    assert_eq!(std::fs::read(dir.path().join("s.txt")).unwrap(), first);
}

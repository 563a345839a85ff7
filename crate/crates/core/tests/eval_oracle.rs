//! Recomputes every field of the evaluation report from the raw files with
//! an independent reader and an SVD-based alignment.

use std::path::Path;
use std::process::Command;

use cmdt::datakit::write_landmarks;
use cmdt::metrics::LandmarkSequence;
use cmdt::tensor::Mat;
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn read_lmrk(path: &Path) -> Vec<Vec<Vector2<f64>>> {
    let b = std::fs::read(path).unwrap();
    assert_eq!(&b[..5], b"LMRK1");
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
    let (k, n) = (u32_at(5), u32_at(9));
    let f32_at = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
    let base = 17;
    assert_eq!(b.len(), base + n * k * 8);
    (0..n)
        .map(|f| (0..k).map(|j| {
            let o = base + (f * k + j) * 8;
            Vector2::new(f32_at(o), f32_at(o + 4))
        }).collect())
        .collect()
}

/// Umeyama's estimator via the SVD of the cross-covariance.
fn umeyama(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<(f64, Matrix2<f64>, Vector2<f64>)> {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector2<f64>>() / n;
    let md = dst.iter().sum::<Vector2<f64>>() / n;
    let var = src.iter().map(|p| (p - ms).norm_squared()).sum::<f64>() / n;
    if var == 0.0 {
        return None;
    }
    let cov = src.iter().zip(dst).map(|(s, d)| (d - md) * (s - ms).transpose()).sum::<Matrix2<f64>>() / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix2::identity();
    if (u * vt).determinant() < 0.0 {
        s[(1, 1)] = -1.0;
    }
    let r = u * s * vt;
    let scale = (svd.singular_values[0] * s[(0, 0)] + svd.singular_values[1] * s[(1, 1)]) / var;
    Some((scale, r, md - scale * r * ms))
}

fn lmd(gen: &[Vec<Vector2<f64>>], gt: &[Vec<Vector2<f64>>], idx: &[usize], align: bool) -> (f64, usize, usize) {
    let (mut total, mut used, mut dropped) = (0.0, 0, 0);
    for (g, t) in gen.iter().zip(gt) {
        let g: Vec<_> = idx.iter().map(|&i| g[i]).collect();
        let t: Vec<_> = idx.iter().map(|&i| t[i]).collect();
        let g = if align {
            match umeyama(&g, &t) {
                Some((s, r, tr)) => g.iter().map(|p| s * r * p + tr).collect(),
                None => {
                    dropped += 1;
                    continue;
                }
            }
        } else {
            g
        };
        total += g.iter().zip(&t).map(|(a, b)| (a - b).norm()).sum::<f64>();
        used += 1;
    }
    (total / (used * idx.len()) as f64, used, dropped)
}

fn ahd(seq: &[Vec<Vector2<f64>>], nose: usize) -> f64 {
    seq.iter().map(|f| (f[nose] - seq[0][nose]).norm()).sum::<f64>() / seq.len() as f64
}

fn seam(seq: &[Vec<Vector2<f64>>], chunk: usize) -> f64 {
    let (mut s, mut ns, mut i_sum, mut ni) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..seq.len() {
        let j = seq[i].iter().zip(&seq[i - 1]).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        if i % chunk == 0 {
            s += j;
            ns += 1.0;
        } else {
            i_sum += j;
            ni += 1.0;
        }
    }
    (s / ns) / (i_sum / ni)
}

fn parse(report: &str) -> Vec<(String, f64, usize, usize)> {
    report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

#[test]
fn report_matches_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, k) = (30, 68);
    let base: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]).collect();
    let mut gen = Mat::zeros(n, 2 * k);
    let mut gt = Mat::zeros(n, 2 * k);
    for f in 0..n {
        let (th, s) = (0.05 * f as f64, 1.0 + 0.01 * f as f64);
        for (j, p) in base.iter().enumerate() {
            let wobble = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..1.0);
            gt[(f, 2 * j)] = p[0] + f as f64 * 0.5 + wobble(&mut rng);
            gt[(f, 2 * j + 1)] = p[1] + wobble(&mut rng);
            let (c, si) = (th.cos(), th.sin());
            gen[(f, 2 * j)] = s * (c * p[0] - si * p[1]) + 7.0 + wobble(&mut rng);
            gen[(f, 2 * j + 1)] = s * (si * p[0] + c * p[1]) - 3.0 + wobble(&mut rng);
        }
    }
    // Collapsed generated frame, dropped by the aligned metrics.
    for j in 0..k {
        gen[(5, 2 * j)] = 1.0;
        gen[(5, 2 * j + 1)] = 2.0;
    }
    write_landmarks(d.join("gen.lmrk"), &LandmarkSequence::new(gen, k, 25.0).unwrap()).unwrap();
    write_landmarks(d.join("gt.lmrk"), &LandmarkSequence::new(gt, k, 25.0).unwrap()).unwrap();

    let g = read_lmrk(&d.join("gen.lmrk"));
    let t = read_lmrk(&d.join("gt.lmrk"));
    let all: Vec<usize> = (0..k).collect();
    let mouth: Vec<usize> = (48..68).collect();
    for align in [true, false] {
        let mut args = vec!["eval", "--gen", "gen.lmrk", "--gt", "gt.lmrk", "--chunk-len", "10"];
        if !align {
            args.push("--no-align");
        }
        let out = Command::new(env!("CARGO_BIN_EXE_cmdt")).current_dir(d).args(&args).output().unwrap();
        assert!(out.status.success());
        let report = parse(&String::from_utf8(out.stdout).unwrap());
        let f = lmd(&g, &t, &all, align);
        let m = lmd(&g, &t, &mouth, align);
        let expect = [
            ("F-LMD", f.0, f.1, f.2),
            ("M-LMD", m.0, m.1, m.2),
            ("AHD-gen", ahd(&g, 30), n, 0),
            ("AHD-gt", ahd(&t, 30), n, 0),
            ("seam-ratio", seam(&g, 10), n, 0),
        ];
        assert_eq!(report.len(), expect.len());
        for ((name, v, u, dr), (en, ev, eu, edr)) in report.iter().zip(expect) {
            assert_eq!(name, en);
            assert!(close(*v, ev), "{name} align={align}: {v} vs {ev}");
            assert_eq!((*u, *dr), (eu, edr), "{name}");
        }
        if align {
            assert_eq!(report[0].3, 1);
        }
    }
}

use crate::error::{invalid, Result};
use crate::motion::AudioFeatureSequence;
use crate::tensor::Mat;

/// Piecewise-linear interpolant through samples at integer positions,
/// extended linearly past both ends.
struct Interpolant<'a> {
    col: &'a [f64],
}

impl Interpolant<'_> {
    fn segment(&self, x: f64) -> usize {
        let n = self.col.len();
        (x.floor().max(0.0) as usize).min(n - 2)
    }

    fn eval(&self, x: f64) -> f64 {
        if self.col.len() == 1 {
            return self.col[0];
        }
        let i = self.segment(x);
        let f = x - i as f64;
        self.col[i] * (1.0 - f) + self.col[i + 1] * f
    }

    /// Mean of the interpolant over `[lo, hi]`, integrated exactly.
    fn mean(&self, lo: f64, hi: f64) -> f64 {
        if hi - lo <= 0.0 || self.col.len() == 1 {
            return self.eval(0.5 * (lo + hi));
        }
        let mut acc = 0.0;
        let mut a = lo;
        while a < hi {
            let i = self.segment(a);
            let seg_end = if i + 2 >= self.col.len() { f64::INFINITY } else { (i + 1) as f64 };
            let b = hi.min(if seg_end > a { seg_end } else { a + 1.0 });
            acc += (b - a) * 0.5 * (self.eval(a) + self.eval(b));
            a = b;
        }
        acc / (hi - lo)
    }
}

/// Resample along time to `target_fps`.
///
/// Output frame `k` is centred at input position `c_k = (k + ½)·r − ½` with
/// `r = fps / target_fps`. Downsampling averages the linear interpolant over
/// a window of `r − 1` input frames around `c_k` (a 2:1 reduction is the
/// mean of each consecutive pair); upsampling evaluates it at `c_k`.
pub fn resample_to_fps(features: &AudioFeatureSequence, target_fps: f64) -> Result<AudioFeatureSequence> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return invalid(format!("target fps must be positive, got {target_fps}"));
    }
    if features.is_empty() {
        return invalid("cannot resample an empty sequence");
    }
    if target_fps == features.fps() {
        return Ok(features.clone());
    }
    let n = features.len();
    let ratio = features.fps() / target_fps;
    let m = ((n as f64) / ratio).round() as usize;
    if m == 0 {
        return invalid(format!("{n} frames at ratio {ratio} resample to zero frames"));
    }
    let cols = features.features().transpose();
    let half = 0.5 * (ratio - 1.0).max(0.0);
    let mut out = Mat::zeros(m, features.dim());
    for j in 0..features.dim() {
        let f = Interpolant { col: cols.row(j) };
        for k in 0..m {
            let c = (k as f64 + 0.5) * ratio - 0.5;
            out[(k, j)] = f.mean(c - half, c + half);
        }
    }
    AudioFeatureSequence::new(out, target_fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_same_rate() {
        let a = AudioFeatureSequence::new(Mat::from_fn(7, 2, |i, j| (i * j) as f64), 25.0).unwrap();
        assert_eq!(resample_to_fps(&a, 25.0).unwrap(), a);
    }

    #[test]
    fn halving_is_pairwise_mean() {
        let a = AudioFeatureSequence::new(Mat::from_fn(10, 3, |i, j| ((i * 7 + j * 3) % 5) as f64), 50.0).unwrap();
        let r = resample_to_fps(&a, 25.0).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r.fps(), 25.0);
        for k in 0..5 {
            for j in 0..3 {
                let want = 0.5 * (a.features()[(2 * k, j)] + a.features()[(2 * k + 1, j)]);
                assert!((r.features()[(k, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramps_stay_on_their_line_and_constants_stay_constant() {
        let (slope, icpt) = (0.3, -2.0);
        for (src, dst, n) in [(50.0, 25.0, 40), (50.0, 30.0, 37), (25.0, 50.0, 12), (16000.0 / 320.0, 25.0, 33), (30.0, 25.0, 61)] {
            let a = AudioFeatureSequence::new(
                Mat::from_fn(n, 2, |i, j| if j == 0 { slope * i as f64 + icpt } else { 4.5 }),
                src,
            )
            .unwrap();
            let r = resample_to_fps(&a, dst).unwrap();
            let ratio = src / dst;
            assert_eq!(r.len(), ((n as f64) / ratio).round() as usize);
            for k in 0..r.len() {
                let c = (k as f64 + 0.5) * ratio - 0.5;
                assert!((r.features()[(k, 0)] - (slope * c + icpt)).abs() <= 1e-6);
                assert!((r.features()[(k, 1)] - 4.5).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_target() {
        let a = AudioFeatureSequence::new(Mat::zeros(3, 1), 25.0).unwrap();
        assert!(resample_to_fps(&a, 0.0).is_err());
        assert!(resample_to_fps(&a, f64::NAN).is_err());
    }
}

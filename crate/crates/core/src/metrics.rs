//! Landmark metrics: per-frame similarity alignment, F-LMD / M-LMD, average
//! head displacement, and the chunk-seam discontinuity ratio.

use crate::error::{invalid, shape_err, Error, Result};
use crate::motion::MotionSequence;
use crate::tensor::Mat;

/// dlib 68-point indices of the mouth (points 48–67).
pub const MOUTH_INDICES: [usize; 20] =
    [48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63, 64, 65, 66, 67];
/// dlib 68-point index of the nose tip.
pub const NOSE_INDEX: usize = 30;

/// `N` frames of `K` two-dimensional landmarks, stored `N × 2K` as
/// interleaved `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    points: Mat,
    k: usize,
    fps: f64,
}

impl LandmarkSequence {
    pub fn new(points: Mat, k: usize, fps: f64) -> Result<Self> {
        if k == 0 || points.cols() != 2 * k {
            return shape_err(format!("{} columns cannot hold {k} 2-D landmarks", points.cols()));
        }
        if points.rows() == 0 {
            return invalid("landmark sequence needs at least one frame");
        }
        if !points.is_finite() {
            return Err(Error::NonFinite("landmark coordinates".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return invalid("fps must be positive");
        }
        Ok(Self { points, k, fps })
    }

    pub fn from_frames(frames: &[Vec<[f64; 2]>], fps: f64) -> Result<Self> {
        let k = frames.first().map_or(0, Vec::len);
        let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().flat_map(|p| *p).collect()).collect();
        Self::new(Mat::from_rows(&rows)?, k, fps)
    }

    pub fn points(&self) -> &Mat {
        &self.points
    }

    pub fn landmarks(&self) -> usize {
        self.k
    }

    pub fn frames(&self) -> usize {
        self.points.rows()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn point(&self, frame: usize, idx: usize) -> [f64; 2] {
        let r = self.points.row(frame);
        [r[2 * idx], r[2 * idx + 1]]
    }

    pub fn frame(&self, frame: usize) -> Vec<[f64; 2]> {
        (0..self.k).map(|i| self.point(frame, i)).collect()
    }

    /// Restrict to a subset of landmark indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.k) {
            return invalid(format!("landmark index {bad} out of range for K = {}", self.k));
        }
        let pts = Mat::from_fn(self.frames(), 2 * indices.len(), |f, c| self.points[(f, 2 * indices[c / 2] + c % 2)]);
        Self::new(pts, indices.len(), self.fps)
    }
}

/// `p ↦ s·R·p + t` with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Row-major 2×2 rotation.
    pub rotation: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: [[1.0, 0.0], [0.0, 1.0]], translation: [0.0, 0.0] }
    }

    pub fn from_angle(scale: f64, theta: f64, translation: [f64; 2]) -> Self {
        let (s, c) = theta.sin_cos();
        Self { scale, rotation: [[c, -s], [s, c]], translation }
    }

    pub fn angle(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let r = &self.rotation;
        [
            self.scale * (r[0][0] * p[0] + r[0][1] * p[1]) + self.translation[0],
            self.scale * (r[1][0] * p[0] + r[1][1] * p[1]) + self.translation[1],
        ]
    }

    /// `Σ ‖T(src_i) − dst_i‖²`.
    pub fn residual(&self, src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(s, d)| {
                let p = self.apply(*s);
                (p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)
            })
            .sum()
    }
}

fn centroid(pts: &[[f64; 2]]) -> [f64; 2] {
    let n = pts.len() as f64;
    let (x, y) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [x / n, y / n]
}

/// Least-squares similarity transform mapping `src` onto `dst`.
///
/// In two dimensions the SVD of the cross-covariance reduces to a closed
/// form: with centred clouds `a`, `b`, the optimal proper rotation angle is
/// `atan2(Σ a×b, Σ a·b)` and the scale is `√((Σ a·b)² + (Σ a×b)²) / Σ‖a‖²`.
pub fn kabsch_umeyama(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return shape_err(format!("{} source points vs {} destination points", src.len(), dst.len()));
    }
    if src.len() < 2 {
        return invalid("alignment needs at least two point pairs");
    }
    let ms = centroid(src);
    let md = centroid(dst);
    let (mut dot, mut cross, mut var) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let a = [s[0] - ms[0], s[1] - ms[1]];
        let b = [d[0] - md[0], d[1] - md[1]];
        dot += a[0] * b[0] + a[1] * b[1];
        cross += a[0] * b[1] - a[1] * b[0];
        var += a[0] * a[0] + a[1] * a[1];
    }
    let spread = src.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max).max(1.0);
    if var <= 1e-24 * spread * spread * src.len() as f64 {
        return Err(Error::Degenerate("source points are coincident".into()));
    }
    let norm = dot.hypot(cross);
    if norm == 0.0 {
        return Err(Error::Degenerate("destination carries no correlated spread".into()));
    }
    let theta = cross.atan2(dot);
    let scale = norm / var;
    let mut t = SimilarityTransform::from_angle(scale, theta, [0.0, 0.0]);
    let moved = t.apply(ms);
    t.translation = [md[0] - moved[0], md[1] - moved[1]];
    Ok(t)
}

/// Mean landmark distance together with how many frames contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmdReport {
    pub value: f64,
    pub frames_used: usize,
    pub frames_dropped: usize,
}

/// Mean over frames and landmarks of the Euclidean distance between
/// generated and ground-truth points. With `align`, each generated frame
/// is first mapped onto its ground-truth frame by [`kabsch_umeyama`];
/// frames where that is degenerate are dropped and counted.
pub fn lmd(gen: &LandmarkSequence, gt: &LandmarkSequence, align: bool) -> Result<LmdReport> {
    if gen.frames() != gt.frames() || gen.landmarks() != gt.landmarks() {
        return shape_err(format!(
            "generated {}x{} vs ground truth {}x{}",
            gen.frames(),
            gen.landmarks(),
            gt.frames(),
            gt.landmarks()
        ));
    }
    let mut total = 0.0;
    let mut used = 0;
    let mut dropped = 0;
    for f in 0..gen.frames() {
        let g = gen.frame(f);
        let t = gt.frame(f);
        let g = if align {
            match kabsch_umeyama(&g, &t) {
                Ok(tr) => g.iter().map(|p| tr.apply(*p)).collect(),
                Err(Error::Degenerate(_)) => {
                    dropped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            g
        };
        total += g.iter().zip(&t).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum::<f64>();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("every frame was dropped".into()));
    }
    Ok(LmdReport { value: total / (used * gen.landmarks()) as f64, frames_used: used, frames_dropped: dropped })
}

/// Average distance of the nose landmark from its first-frame position,
/// over all frames including the first.
pub fn ahd(landmarks: &LandmarkSequence, nose_index: usize) -> Result<f64> {
    if nose_index >= landmarks.landmarks() {
        return invalid(format!("nose index {nose_index} out of range for K = {}", landmarks.landmarks()));
    }
    let p0 = landmarks.point(0, nose_index);
    let sum: f64 = (0..landmarks.frames())
        .map(|f| {
            let p = landmarks.point(f, nose_index);
            (p[0] - p0[0]).hypot(p[1] - p0[1])
        })
        .sum();
    Ok(sum / landmarks.frames() as f64)
}

/// Ratio of the mean frame-to-frame jump across chunk boundaries (between
/// frames `k·chunk_len − 1` and `k·chunk_len`) to the mean jump elsewhere.
/// Returns 1.0 when there is no boundary or both means vanish.
pub fn seam_ratio(frames: &Mat, chunk_len: usize) -> Result<f64> {
    if chunk_len < 2 {
        return invalid(format!("chunk length must be at least 2, got {chunk_len}"));
    }
    let (mut seam, mut n_seam, mut inner, mut n_inner) = (0.0, 0usize, 0.0, 0usize);
    for i in 1..frames.rows() {
        let jump = frames.row(i).iter().zip(frames.row(i - 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if i % chunk_len == 0 {
            seam += jump;
            n_seam += 1;
        } else {
            inner += jump;
            n_inner += 1;
        }
    }
    if n_seam == 0 || n_inner == 0 {
        return Ok(1.0);
    }
    let (seam, inner) = (seam / n_seam as f64, inner / n_inner as f64);
    Ok(match (seam == 0.0, inner == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => seam / inner,
    })
}

pub fn seam_discontinuity(seq: &MotionSequence, chunk_len: usize) -> Result<f64> {
    seam_ratio(seq.frames(), chunk_len)
}

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Mat;

/// Time-aligned motion and audio windows of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub start: usize,
    pub motion: Mat,
    pub audio: Mat,
}

/// Crop a `window_len` window from a paired sequence, with the start index
/// uniform over every valid position.
pub fn crop_random_window<R: Rng + ?Sized>(
    motion: &Mat,
    audio: &Mat,
    window_len: usize,
    rng: &mut R,
) -> Result<WindowPair> {
    if motion.rows() != audio.rows() {
        return shape_err(format!("motion has {} frames, audio {}", motion.rows(), audio.rows()));
    }
    if window_len == 0 {
        return invalid("window length must be positive");
    }
    if motion.rows() < window_len {
        return invalid(format!("sequence of {} frames is shorter than window {window_len}", motion.rows()));
    }
    let start = rng.random_range(0..=motion.rows() - window_len);
    Ok(WindowPair {
        start,
        motion: motion.rows_range(start, window_len),
        audio: audio.rows_range(start, window_len),
    })
}

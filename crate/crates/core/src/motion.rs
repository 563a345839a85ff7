//! Motion and audio-feature sequence types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Mat;

/// Which slice of the 70-parameter motion vector a sequence carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentTag {
    Lips,
    Expression,
    Pose,
    Full,
}

impl ComponentTag {
    pub const GENERATED: [ComponentTag; 3] =
        [ComponentTag::Lips, ComponentTag::Expression, ComponentTag::Pose];

    /// Motion width carried by this component.
    pub const fn dim(self) -> usize {
        match self {
            ComponentTag::Lips => 13,
            ComponentTag::Expression => 51,
            ComponentTag::Pose => 6,
            ComponentTag::Full => 70,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            ComponentTag::Lips => "lips",
            ComponentTag::Expression => "expression",
            ComponentTag::Pose => "pose",
            ComponentTag::Full => "full",
        }
    }

    pub(crate) const fn to_byte(self) -> u8 {
        match self {
            ComponentTag::Lips => 0,
            ComponentTag::Expression => 1,
            ComponentTag::Pose => 2,
            ComponentTag::Full => 3,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => ComponentTag::Lips,
            1 => ComponentTag::Expression,
            2 => ComponentTag::Pose,
            3 => ComponentTag::Full,
            other => return Err(Error::Malformed(format!("unknown component tag byte {other}"))),
        })
    }
}

impl fmt::Display for ComponentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lips" => Ok(ComponentTag::Lips),
            "expression" | "expr" | "face" => Ok(ComponentTag::Expression),
            "pose" => Ok(ComponentTag::Pose),
            "full" => Ok(ComponentTag::Full),
            other => invalid(format!("unknown component {other:?}")),
        }
    }
}

/// An `N × d` sequence of per-frame motion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Mat,
    fps: f64,
    tag: ComponentTag,
}

impl MotionSequence {
    pub fn new(frames: Mat, fps: f64, tag: ComponentTag) -> Result<Self> {
        if frames.cols() != tag.dim() {
            return shape_err(format!(
                "{tag} motion needs {} parameters per frame, got {}",
                tag.dim(),
                frames.cols()
            ));
        }
        if frames.rows() == 0 {
            return invalid("motion sequence must hold at least one frame");
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("motion sequence entries".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return invalid(format!("fps must be positive, got {fps}"));
        }
        Ok(Self { frames, fps, tag })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn into_frames(self) -> Mat {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn tag(&self) -> ComponentTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// An `N × D_a` sequence of real-valued audio features at video frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    features: Mat,
    fps: f64,
}

impl AudioFeatureSequence {
    pub fn new(features: Mat, fps: f64) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return invalid("audio feature sequence must be non-empty");
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("audio feature entries".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return invalid(format!("fps must be positive, got {fps}"));
        }
        Ok(Self { features, fps })
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_must_match_tag() {
        for tag in [ComponentTag::Lips, ComponentTag::Expression, ComponentTag::Pose, ComponentTag::Full] {
            assert!(MotionSequence::new(Mat::zeros(3, tag.dim()), 25.0, tag).is_ok());
            assert!(MotionSequence::new(Mat::zeros(3, tag.dim() + 1), 25.0, tag).is_err());
        }
        assert_eq!(
            ComponentTag::Lips.dim() + ComponentTag::Expression.dim() + ComponentTag::Pose.dim(),
            ComponentTag::Full.dim()
        );
    }

    #[test]
    fn rejects_empty_nonfinite_and_bad_fps() {
        assert!(MotionSequence::new(Mat::zeros(0, 6), 25.0, ComponentTag::Pose).is_err());
        let mut m = Mat::zeros(2, 6);
        m[(1, 1)] = f64::NAN;
        assert!(MotionSequence::new(m, 25.0, ComponentTag::Pose).is_err());
        assert!(MotionSequence::new(Mat::zeros(2, 6), 0.0, ComponentTag::Pose).is_err());
        assert!(AudioFeatureSequence::new(Mat::filled(2, 3, f64::INFINITY), 25.0).is_err());
    }

    #[test]
    fn tag_roundtrips_through_byte_and_str() {
        for tag in [ComponentTag::Lips, ComponentTag::Expression, ComponentTag::Pose, ComponentTag::Full] {
            assert_eq!(ComponentTag::from_byte(tag.to_byte()).unwrap(), tag);
            assert_eq!(tag.as_str().parse::<ComponentTag>().unwrap(), tag);
        }
        assert!(ComponentTag::from_byte(9).is_err());
    }
}

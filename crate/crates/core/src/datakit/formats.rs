//! Little-endian binary sequence formats.
//!
//! | format   | magic   | header                                   | payload            |
//! |----------|---------|------------------------------------------|--------------------|
//! | motion   | `MSEQ1` | u32 d, u32 N, f32 fps, u8 component tag  | N·d f32, frame-major |
//! | audio    | `AFEA1` | u32 D_a, u32 N, f32 fps                  | N·D_a f32          |
//! | landmark | `LMRK1` | u32 K, u32 N, f32 fps                    | N·K·2 f32 (x, y)   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::LandmarkSequence;
use crate::motion::{AudioFeatureSequence, ComponentTag, MotionSequence};
use crate::tensor::Mat;

const MOTION_MAGIC: &[u8; 5] = b"MSEQ1";
const AUDIO_MAGIC: &[u8; 5] = b"AFEA1";
const LANDMARK_MAGIC: &[u8; 5] = b"LMRK1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{}: needed {n} bytes at offset {}, {} available",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 5]) -> Result<()> {
        let found = self.take(5)?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Malformed(format!("{}: payload size overflows", self.what)))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!(
                "{}: {} trailing bytes after payload",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode_motion(seq: &MotionSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(18 + seq.frames().len() * 4);
    out.extend_from_slice(MOTION_MAGIC);
    put_u32(&mut out, seq.dim())?;
    put_u32(&mut out, seq.len())?;
    out.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    out.push(seq.tag().to_byte());
    put_floats(&mut out, seq.frames().as_slice());
    Ok(out)
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes, "motion file");
    r.magic(MOTION_MAGIC)?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let fps = r.f32()? as f64;
    let tag = ComponentTag::from_byte(r.u8()?)?;
    let data = r.floats(n * d)?;
    r.finish()?;
    MotionSequence::new(Mat::from_vec(n, d, data)?, fps, tag)
}

pub fn write_motion(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<()> {
    fs::write(path, encode_motion(seq)?)?;
    Ok(())
}

pub fn read_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    decode_motion(&fs::read(path)?)
}

pub fn encode_audio_features(seq: &AudioFeatureSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + seq.features().len() * 4);
    out.extend_from_slice(AUDIO_MAGIC);
    put_u32(&mut out, seq.dim())?;
    put_u32(&mut out, seq.len())?;
    out.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    put_floats(&mut out, seq.features().as_slice());
    Ok(out)
}

pub fn decode_audio_features(bytes: &[u8]) -> Result<AudioFeatureSequence> {
    let mut r = Reader::new(bytes, "audio feature file");
    r.magic(AUDIO_MAGIC)?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let fps = r.f32()? as f64;
    let data = r.floats(n * d)?;
    r.finish()?;
    AudioFeatureSequence::new(Mat::from_vec(n, d, data)?, fps)
}

pub fn write_audio_features(path: impl AsRef<Path>, seq: &AudioFeatureSequence) -> Result<()> {
    fs::write(path, encode_audio_features(seq)?)?;
    Ok(())
}

pub fn read_audio_features(path: impl AsRef<Path>) -> Result<AudioFeatureSequence> {
    decode_audio_features(&fs::read(path)?)
}

pub fn encode_landmarks(seq: &LandmarkSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + seq.points().len() * 4);
    out.extend_from_slice(LANDMARK_MAGIC);
    put_u32(&mut out, seq.landmarks())?;
    put_u32(&mut out, seq.frames())?;
    out.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    put_floats(&mut out, seq.points().as_slice());
    Ok(out)
}

pub fn decode_landmarks(bytes: &[u8]) -> Result<LandmarkSequence> {
    let mut r = Reader::new(bytes, "landmark file");
    r.magic(LANDMARK_MAGIC)?;
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    let fps = r.f32()? as f64;
    let data = r.floats(n * k * 2)?;
    r.finish()?;
    LandmarkSequence::new(Mat::from_vec(n, 2 * k, data)?, k, fps)
}

pub fn write_landmarks(path: impl AsRef<Path>, seq: &LandmarkSequence) -> Result<()> {
    fs::write(path, encode_landmarks(seq)?)?;
    Ok(())
}

pub fn read_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSequence> {
    decode_landmarks(&fs::read(path)?)
}

//! Checkpoint container: magic `CMDT1`, a u32 byte length, a JSON header
//! holding the config and a tensor directory, then raw little-endian f64
//! payloads. Weights are stored at full precision so a round trip is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserConfig, DenoiserParams, NamedTensor, NormStats};
use crate::error::{Error, Result};
use crate::tensor::Mat;

const MAGIC: &[u8; 5] = b"CMDT1";
const FORMAT_VERSION: u32 = 1;
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, in f64 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: DenoiserConfig,
    tensors: Vec<Entry>,
}

pub fn write_checkpoint_bytes(params: &DenoiserParams) -> Result<Vec<u8>> {
    let norm = params.norm_stats();
    let extra = [
        (NORM_MEAN, Mat::row_vector(&norm.mean)),
        (NORM_STD, Mat::row_vector(&norm.std)),
    ];
    let all: Vec<(&str, &Mat)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.as_str(), &t.value))
        .chain(extra.iter().map(|(n, m)| (*n, m)))
        .collect();
    let mut offset = 0;
    let mut entries = Vec::with_capacity(all.len());
    for (name, m) in &all {
        entries.push(Entry { name: name.to_string(), rows: m.rows(), cols: m.cols(), offset });
        offset += m.len();
    }
    let header = Header { format_version: FORMAT_VERSION, config: params.config().clone(), tensors: entries };
    let text = serde_json::to_vec(&header).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(9 + text.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    for (_, m) in &all {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<DenoiserParams> {
    if bytes.len() < 9 {
        return Err(Error::Truncated("checkpoint header".into()));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::BadMagic {
            expected: "CMDT1".into(),
            found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
        });
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = &bytes[9..];
    if body.len() < hlen {
        return Err(Error::Truncated("checkpoint header text".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported checkpoint version {}", header.format_version)));
    }
    let payload = &body[hlen..];
    let total: usize = header.tensors.iter().map(|e| e.rows * e.cols).sum();
    if payload.len() < total * 8 {
        return Err(Error::Truncated(format!("checkpoint payload: need {} bytes, have {}", total * 8, payload.len())));
    }
    if payload.len() > total * 8 {
        return Err(Error::Malformed("trailing bytes after checkpoint payload".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut mean = None;
    let mut std = None;
    for e in header.tensors {
        let n = e.rows * e.cols;
        if e.offset + n > total {
            return Err(Error::Malformed(format!("tensor {} extends past the payload", e.name)));
        }
        let data = payload[e.offset * 8..(e.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Mat::from_vec(e.rows, e.cols, data)?;
        match e.name.as_str() {
            NORM_MEAN => mean = Some(value.into_vec()),
            NORM_STD => std = Some(value.into_vec()),
            _ => tensors.push(NamedTensor { name: e.name, value }),
        }
    }
    let (Some(mean), Some(std)) = (mean, std) else {
        return Err(Error::Malformed("checkpoint lacks normalization statistics".into()));
    };
    if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("normalization statistics".into()));
    }
    DenoiserParams::from_parts(header.config, tensors, NormStats { mean, std })
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &DenoiserParams) -> Result<()> {
    fs::write(path, write_checkpoint_bytes(params)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    read_checkpoint_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::AudioInjection;
    use crate::motion::ComponentTag;

    fn sample() -> DenoiserParams {
        let cfg = DenoiserConfig {
            d_model: 8,
            n_heads: 2,
            audio_injection: AudioInjection::CrossAttention,
            ..DenoiserConfig::desk(ComponentTag::Lips, 3)
        };
        let mut p = DenoiserParams::init(cfg, 5).unwrap();
        p.set_norm_stats(NormStats {
            mean: (0..13).map(|i| i as f64 / 3.0).collect(),
            std: (0..13).map(|i| 1.0 + 1.0 / (i as f64 + 7.0)).collect(),
        })
        .unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = sample();
        let bytes = write_checkpoint_bytes(&p).unwrap();
        let back = read_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        for (a, b) in back.tensors().iter().zip(p.tensors()) {
            let ab: Vec<u64> = a.value.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(write_checkpoint_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = write_checkpoint_bytes(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(read_checkpoint_bytes(&bytes[..bytes.len() - 8]), Err(Error::Truncated(_))));
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(matches!(read_checkpoint_bytes(&extra), Err(Error::Malformed(_))));
    }
}

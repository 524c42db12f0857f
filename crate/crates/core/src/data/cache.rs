//! Binary dataset cache, one file per task per split.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes   b"ACRDATA\0"
//! version  u32       1
//! kind     u32       0 = vector, 1 = image
//! extent   u32       vector dimension or image side
//! task     u32
//! count    u64       number of samples n
//! dim      u64       features per sample d
//! values   n·d f64   row-major features
//! labels   n u64
//! ids      n u64
//! ```

use std::fs;
use std::path::Path;

use super::{InputKind, Sample};
use crate::error::{Error, Result};
use crate::TaskId;

const MAGIC: &[u8; 8] = b"ACRDATA\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8 * 2;

pub fn encode_split(kind: InputKind, task: TaskId, samples: &[Sample]) -> Result<Vec<u8>> {
    let dim = kind.input_dim();
    let (code, extent) = match kind {
        InputKind::Vector { dim } => (0u32, dim),
        InputKind::Image { side } => (1u32, side),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * (dim + 2) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(extent as u32).to_le_bytes());
    out.extend_from_slice(&(task as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::InvalidArgument(format!("sample {} has {} features, expected {dim}", s.id, s.features.len())));
        }
        for v in &s.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in samples {
        out.extend_from_slice(&(s.label as u64).to_le_bytes());
    }
    for s in samples {
        out.extend_from_slice(&s.id.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_split(bytes: &[u8], path: &Path) -> Result<(InputKind, TaskId, Vec<Sample>)> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("missing header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(bad("unsupported version"));
    }
    let extent = u32_at(16) as usize;
    let kind = match u32_at(12) {
        0 => InputKind::Vector { dim: extent },
        1 => InputKind::Image { side: extent },
        _ => return Err(bad("unknown input kind")),
    };
    let task = u32_at(20) as TaskId;
    let n = u64_at(24) as usize;
    let dim = u64_at(32) as usize;
    if dim != kind.input_dim() {
        return Err(bad("feature count disagrees with input kind"));
    }
    let body = n
        .checked_mul(dim + 2)
        .and_then(|w| w.checked_mul(8))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != HEADER_LEN + body {
        return Err(bad("truncated or oversized body"));
    }
    let values = HEADER_LEN;
    let labels = values + n * dim * 8;
    let ids = labels + n * 8;
    let samples = (0..n)
        .map(|i| Sample {
            id: u64_at(ids + i * 8),
            label: u64_at(labels + i * 8) as usize,
            task,
            features: (0..dim)
                .map(|k| f64::from_le_bytes(bytes[values + (i * dim + k) * 8..][..8].try_into().unwrap()))
                .collect(),
        })
        .collect();
    Ok((kind, task, samples))
}

pub fn write_split(path: &Path, kind: InputKind, task: TaskId, samples: &[Sample]) -> Result<()> {
    let bytes = encode_split(kind, task, samples)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<(InputKind, TaskId, Vec<Sample>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_split(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            side in 8usize..10,
            task in 0usize..20,
            rows in prop::collection::vec((any::<u64>(), 0usize..1000, prop::collection::vec(-1e6f64..1e6, 100)), 0..5),
        ) {
            let dim = side * side;
            let samples: Vec<Sample> = rows
                .into_iter()
                .map(|(id, label, f)| Sample { id, label, task, features: f[..dim].to_vec() })
                .collect();
            let kind = InputKind::Image { side };
            let bytes = encode_split(kind, task, &samples).unwrap();
            let (k, t, back) = decode_split(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(k, kind);
            prop_assert_eq!(t, task);
            prop_assert_eq!(back, samples);
        }
    }

    #[test]
    fn rejects_truncation() {
        let s = Sample { id: 1, features: vec![0.5; 3], label: 2, task: 0 };
        let bytes = encode_split(InputKind::Vector { dim: 3 }, 0, &[s]).unwrap();
        assert!(decode_split(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode_split(b"nope", Path::new("x")).is_err());
    }
}

//! Binary actor weight files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content                         |
//! |--------|------|---------------------------------|
//! | 0      | 4    | magic `DPT1`                    |
//! | 4      | 4    | `M` (u32)                       |
//! | 8      | 4    | `F` (u32)                       |
//! | 12     | 4    | `L` (u32)                       |
//! | 16     | ...  | `h1`, `h2`, `h3` as f64, row-major |
//!
//! The payload holds `2*M*F*L + M*M*L` values.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::fsutil::write_atomic;
use crate::actor::ActorWeights;
use crate::tensor::Tensor3;

pub const MAGIC: [u8; 4] = *b"DPT1";
pub const HEADER_LEN: usize = 16;

/// Refuse payloads beyond 1 GiB.
const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"DPT1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated weights file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimensions M={m}, F={f}, L={l} are too large")]
    DimensionOverflow { m: u32, f: u32, l: u32 },
    #[error("dimensions M={m}, F={f}, L={l} must all be positive")]
    ZeroDimension { m: u32, f: u32, l: u32 },
    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error(transparent)]
    Invalid(#[from] crate::Error),
}

fn payload_len(m: u32, f: u32, l: u32) -> Option<usize> {
    let (m, f, l) = (m as usize, f as usize, l as usize);
    let mfl = m.checked_mul(f)?.checked_mul(l)?;
    let mml = m.checked_mul(m)?.checked_mul(l)?;
    let bytes = mfl.checked_mul(2)?.checked_add(mml)?.checked_mul(8)?;
    (bytes <= MAX_PAYLOAD).then_some(bytes)
}

pub fn encode_weights(w: &ActorWeights) -> Vec<u8> {
    let (m, f, l) = w.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * w.param_count());
    out.extend_from_slice(&MAGIC);
    for d in [m, f, l] {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits u32").to_le_bytes());
    }
    for t in [&w.h1, &w.h2, &w.h3] {
        for x in t.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<ActorWeights, WeightsError> {
    if bytes.len() < 4 {
        return Err(WeightsError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if found != MAGIC {
        return Err(WeightsError::BadMagic { found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(WeightsError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("four bytes"));
    let (m, f, l) = (dim(4), dim(8), dim(12));
    if m == 0 || f == 0 || l == 0 {
        return Err(WeightsError::ZeroDimension { m, f, l });
    }
    let payload = payload_len(m, f, l).ok_or(WeightsError::DimensionOverflow { m, f, l })?;
    let expected = HEADER_LEN + payload;
    if bytes.len() < expected {
        return Err(WeightsError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(WeightsError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }

    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")));
    let (m, f, l) = (m as usize, f as usize, l as usize);
    let mut take = |dims: [usize; 3]| {
        let n = dims.iter().product();
        Tensor3::from_vec(dims, values.by_ref().take(n).collect()).expect("payload length checked")
    };
    let h1 = take([m, f, l]);
    let h2 = take([m, f, l]);
    let h3 = take([m, m, l]);
    Ok(ActorWeights::from_tensors(h1, h2, h3)?)
}

pub fn save_weights(w: &ActorWeights, path: &Path) -> Result<(), WeightsError> {
    write_atomic(path, &encode_weights(w)).map_err(|source| WeightsError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_weights(path: &Path) -> Result<ActorWeights, WeightsError> {
    let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_weights(&bytes)
}

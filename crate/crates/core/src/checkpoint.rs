//! Versioned binary checkpoint format. All integers and floats are
//! little-endian; matrices are row-major.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "STUNTCKP"
//! 8       4           format version (u32, currently 1)
//! 12      8           config hash (u64)
//! 20      8           step (u64)
//! 28      8           pseudo-validation accuracy (f64, NaN if never evaluated)
//! 36      24          d, H, D (u64 each)
//! 60      8·d·H       W1
//! ...     8·H         b1
//! ...     8·H·D       W2
//! ...     8·D         b2
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::protonet::EncoderParams;

pub const MAGIC: &[u8; 8] = b"STUNTCKP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub step: u64,
    pub pseudo_val_accuracy: f64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, h, e) = self.params.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.params.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.pseudo_val_accuracy.to_le_bytes());
        for dim in [d, h, e] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in self.params.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config_hash = u64_at(12);
        let step = u64_at(20);
        let pseudo_val_accuracy = f64::from_bits(u64_at(28));
        let (d, h, e) = (u64_at(36) as usize, u64_at(44) as usize, u64_at(52) as usize);
        let n = d
            .checked_mul(h)
            .and_then(|a| h.checked_mul(e).map(|b| a + b + h + e))
            .ok_or_else(|| bad("dimension overflow".into()))?;
        if bytes.len() != HEADER_LEN + 8 * n {
            return Err(bad(format!(
                "expected {} bytes for d={d}, H={h}, D={e}, found {}",
                HEADER_LEN + 8 * n,
                bytes.len()
            )));
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
        let shape_err = |e: ndarray::ShapeError| bad(e.to_string());
        let params = EncoderParams {
            w1: Array2::from_shape_vec((d, h), take(d * h)).map_err(shape_err)?,
            b1: Array1::from(take(h)),
            w2: Array2::from_shape_vec((h, e), take(h * e)).map_err(shape_err)?,
            b2: Array1::from(take(e)),
        };
        Ok(Self {
            params,
            step,
            pseudo_val_accuracy,
            config_hash,
        })
    }

    /// First 16 hex digits of the SHA-256 of the serialized checkpoint.
    pub fn id(&self) -> String {
        Sha256::digest(self.to_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

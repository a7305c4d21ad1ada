//! Model checkpoints.
//!
//! Binary layout, all little-endian:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `VDLM`                            |
//! | 4     | format version (u32, currently 1)       |
//! | 4     | model kind (u32: 1 autoencoder, 2 regressor) |
//! | 4     | descriptor length n (u32)               |
//! | 4·n   | architecture descriptor (u32 each)      |
//! | 8     | parameter count p (u64)                 |
//! | 4·p   | parameters (f32)                        |
//!
//! A JSON sidecar next to the binary carries the seed, the training config,
//! normalisation statistics and the SHA-256 of the binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VDLM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Autoencoder = 1,
    Regressor = 2,
}

impl ModelKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Autoencoder),
            2 => Ok(ModelKind::Regressor),
            _ => Err(Error::Checkpoint(format!("unknown model kind {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub kind: ModelKind,
    pub descriptor: Vec<u32>,
    pub params: Vec<f32>,
}

impl RawCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(24 + 4 * (self.descriptor.len() + self.params.len()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.kind as u32).to_le_bytes());
        b.extend_from_slice(&(self.descriptor.len() as u32).to_le_bytes());
        for d in &self.descriptor {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Reader { b, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_u32(r.u32()?)?;
        let nd = r.u32()? as usize;
        let descriptor = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let np = r.u64()? as usize;
        if r.b.len() - r.at != 4 * np {
            return Err(Error::Checkpoint(format!("expected {} parameter bytes, found {}", 4 * np, r.b.len() - r.at)));
        }
        let params = (0..np).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        Ok(RawCheckpoint { kind, descriptor, params })
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.b.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// JSON stored beside the binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: ModelKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub normalization: serde_json::Value,
    pub params_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `model.bin` → `model.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the binary and its sidecar; returns the binary's hash.
pub fn save(bin: &Path, ckpt: &RawCheckpoint, seed: u64, config: serde_json::Value, normalization: serde_json::Value) -> Result<String> {
    let bytes = ckpt.to_bytes();
    let sha = sha256_hex(&bytes);
    fs::write(bin, &bytes)?;
    let side = Sidecar { kind: ckpt.kind, seed, config, normalization, params_sha256: sha.clone() };
    fs::write(sidecar_path(bin), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(sha)
}

/// Reads both files and checks the hash and kind.
pub fn load(bin: &Path, kind: ModelKind) -> Result<(RawCheckpoint, Sidecar)> {
    let bytes = fs::read(bin)?;
    let side_path = sidecar_path(bin);
    let side: Sidecar = serde_json::from_slice(
        &fs::read(&side_path).map_err(|e| Error::Integrity { path: side_path.clone(), reason: format!("missing sidecar: {e}") })?,
    )?;
    let sha = sha256_hex(&bytes);
    if sha != side.params_sha256 {
        return Err(Error::Integrity { path: bin.to_path_buf(), reason: format!("hash {sha} does not match sidecar") });
    }
    let ckpt = RawCheckpoint::from_bytes(&bytes)?;
    if ckpt.kind != kind || side.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", ckpt.kind)));
    }
    Ok((ckpt, side))
}

//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, JSON header
//! (name, architecture, parameterization, schedule), `u64` parameter count,
//! little-endian `f64` parameters, then the SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::model::ScoreModel;
use crate::nn::mlp::MlpArchitecture;
use crate::nn::model::{NeuralModel, Parameterization};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const MAGIC: &[u8; 8] = b"DCMPCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    arch: MlpArchitecture,
    parameterization: Parameterization,
    schedule: ScheduleSpec,
}

pub fn encode(m: &NeuralModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        name: m.name().to_string(),
        arch: m.arch().clone(),
        parameterization: m.parameterization(),
        schedule: m.schedule().spec().clone(),
    })?;
    let mut out = Vec::with_capacity(24 + header.len() + 8 * m.params().len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(m.params().len() as u64).to_le_bytes());
    for p in m.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    let end = at.checked_add(n).ok_or(CheckpointError::Truncated)?;
    let s = bytes.get(*at..end).ok_or(CheckpointError::Truncated)?;
    *at = end;
    Ok(s)
}

pub fn decode(bytes: &[u8]) -> Result<NeuralModel> {
    let mut at = 0;
    let magic = take(bytes, &mut at, MAGIC.len())?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, expected: VERSION }.into());
    }
    let header_len = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes")) as usize;
    let header_bytes = take(bytes, &mut at, header_len)?;
    let n = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let raw = take(bytes, &mut at, n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
    let body_end = at;
    let digest = take(bytes, &mut at, DIGEST_LEN)?;
    if at != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - at)).into());
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(CheckpointError::Checksum.into());
    }
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    header.arch.validate().map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    if header.arch.n_params() != n {
        return Err(CheckpointError::Architecture(format!(
            "header architecture has {} parameters but the file stores {n}",
            header.arch.n_params()
        ))
        .into());
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let schedule = NoiseSchedule::from_spec(&header.schedule)
        .map_err(|e| CheckpointError::Corrupt(format!("schedule: {e}")))?;
    NeuralModel::from_params(header.name, header.arch, header.parameterization, schedule, params)
}

pub fn save_checkpoint(m: &NeuralModel, path: &Path) -> Result<()> {
    fs::write(path, encode(m)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NeuralModel> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and checks it matches the expected architecture and
/// parameterization.
pub fn load_matching(path: &Path, arch: &MlpArchitecture, parameterization: Parameterization) -> Result<NeuralModel> {
    let m = load_checkpoint(path)?;
    if m.arch() != arch || m.parameterization() != parameterization {
        return Err(Error::Checkpoint(CheckpointError::Architecture(format!(
            "checkpoint holds {:?}/{:?}, expected {:?}/{:?}",
            m.arch(),
            m.parameterization(),
            arch,
            parameterization
        ))));
    }
    Ok(m)
}

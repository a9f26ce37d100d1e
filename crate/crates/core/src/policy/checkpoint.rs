//! Policy checkpoints: one JSON header line, then the parameters as
//! little-endian `f64` values in block order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::{PolicyParams, BLOCK_NAMES};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "radar-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub hidden_size: usize,
    pub seed: u64,
    pub num_params: usize,
    pub blocks: Vec<String>,
    pub gate_order: String,
}

pub fn encode(params: &PolicyParams, seed: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        k: params.k(),
        hidden_size: params.hidden(),
        seed,
        num_params: params.num_params(),
        blocks: BLOCK_NAMES.iter().map(|s| s.to_string()).collect(),
        gate_order: "ifgo".into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for x in params.flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(PolicyParams, CheckpointHeader)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::input("checkpoint has no header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::input(format!("not a policy checkpoint (format {:?})", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: header.version, expected: CHECKPOINT_VERSION });
    }
    if header.blocks != BLOCK_NAMES || header.gate_order != "ifgo" {
        return Err(Error::input("checkpoint parameter layout is not supported"));
    }
    let body = &bytes[nl + 1..];
    if body.len() != header.num_params * 8 {
        return Err(Error::input(format!(
            "checkpoint body has {} bytes, header promises {} parameters",
            body.len(),
            header.num_params
        )));
    }
    let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let params = PolicyParams::from_flat(header.k, header.hidden_size, &flat)?;
    Ok((params, header))
}

pub fn save(path: &Path, params: &PolicyParams, seed: u64) -> Result<()> {
    fs::write(path, encode(params, seed)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(PolicyParams, CheckpointHeader)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

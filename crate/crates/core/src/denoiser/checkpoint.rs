//! Checkpoint layout: one line of JSON header, a newline, then the
//! parameters as little-endian `f32`. The header carries the SHA-256 of the
//! parameter blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserModel};
use crate::checksum::{f32_blob, read_f32_blob, sha256_hex};
use crate::diffusion::{Normalizer, ScheduleConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: DenoiserConfig,
    normalizer: Normalizer,
    schedule: ScheduleConfig,
    num_params: usize,
    checksum: String,
}

pub fn encode_model(model: &DenoiserModel) -> Result<Vec<u8>> {
    let blob = f32_blob(model.params.iter().copied());
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        schedule: model.schedule.clone(),
        num_params: model.params.len(),
        checksum: sha256_hex(&blob),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<DenoiserModel> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corrupt("missing checkpoint header".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Corrupt(format!("bad checkpoint header: {e}")))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("checkpoint header lacks format_version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: found as u32,
        });
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("bad checkpoint header: {e}")))?;
    let blob = &bytes[split + 1..];
    if blob.len() != 4 * header.num_params {
        return Err(Error::Corrupt(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            4 * header.num_params
        )));
    }
    let sum = sha256_hex(blob);
    if sum != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            found: sum,
        });
    }
    DenoiserModel::from_parts(header.config, read_f32_blob(blob), header.normalizer, header.schedule)
}

pub fn save_model(model: &DenoiserModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DenoiserModel> {
    decode_model(&std::fs::read(path)?)
}

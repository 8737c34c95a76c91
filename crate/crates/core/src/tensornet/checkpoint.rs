//! Network checkpoint: magic, JSON descriptor header, raw little-endian
//! `f64` parameter payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, Param};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DVSNET\0\x01";
pub const PRECISION_F64: &str = "f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub precision: String,
    /// Length of every parameter tensor in payload order.
    pub tensor_lengths: Vec<usize>,
    /// Relative path of the normalizer statistics this network expects.
    #[serde(default)]
    pub normalizer: Option<String>,
}

impl Network {
    pub fn to_bytes(&self, normalizer: Option<&str>) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            precision: PRECISION_F64.into(),
            tensor_lengths: self.params.iter().map(|p| p.values.len()).collect(),
            normalizer: normalizer.map(str::to_owned),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, CheckpointHeader)> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.precision != PRECISION_F64 {
            return Err(bad(&format!("unsupported precision {}", header.precision)));
        }
        let mut net = Network::seeded(header.spec.clone(), 0)?;
        let expected: Vec<usize> = net.params.iter().map(|p| p.values.len()).collect();
        if expected != header.tensor_lengths {
            return Err(bad("tensor layout does not match spec"));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() != 8 * net.param_count() {
            return Err(bad("payload length mismatch"));
        }
        let mut chunks = payload.chunks_exact(8);
        for Param { values, .. } in &mut net.params {
            for v in values.iter_mut() {
                *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
        Ok((net, header))
    }
}

pub fn write_checkpoint(net: &Network, path: &Path, normalizer: Option<&str>) -> Result<()> {
    fs::write(path, net.to_bytes(normalizer)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    Network::from_bytes(&bytes)
}

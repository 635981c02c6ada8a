//! Flat binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header (network spec plus the named-tensor index), then every parameter
//! as little-endian `f64` in index order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{QNetwork, QNetworkSpec, TensorInfo};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TLCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: QNetworkSpec,
    tensors: Vec<TensorInfo>,
    /// Free-form provenance, e.g. the run config hash.
    #[serde(default)]
    tag: String,
}

pub fn write_checkpoint(path: &Path, net: &QNetwork, tag: &str) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        spec: net.spec().clone(),
        tensors: net.layout().to_vec(),
        tag: tag.to_string(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for v in net.params() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a network and the provenance tag it was saved with.
pub fn read_checkpoint(path: &Path) -> Result<(QNetwork, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut net = QNetwork::zeros(header.spec)?;
    if net.layout() != header.tensors.as_slice() {
        return Err(Error::Format(
            "tensor index does not match the network spec".into(),
        ));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != net.n_params() * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            net.n_params() * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    net.set_params(params)?;
    Ok((net, header.tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QNetworkSpec {
        QNetworkSpec {
            input: [3, 5, 5],
            kernel: 5,
            conv_filters: 2,
            dense: vec![4, 3, 2],
            history: 6,
            head: vec![3],
            outputs: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = QNetwork::new(spec(), 5).unwrap();
        write_checkpoint(&path, &net, "abc").unwrap();
        let (back, tag) = read_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(tag, "abc");
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&path, &QNetwork::new(spec(), 1).unwrap(), "").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }
}

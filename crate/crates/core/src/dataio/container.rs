//! Single-file model container.
//!
//! ```text
//! "BARB" | version: u32 LE | header length: u64 LE | JSON header | f32 LE payload
//! ```
//!
//! The header lists every tensor (name, shape, storage, byte offset into the
//! payload) together with the architecture, the training record and the
//! modality, so a container can be inventoried without touching the payload.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, DataError, Result};
use crate::cnn::{build_model, CnnConfig, CnnModel};
use crate::modality::Modality;

pub const MAGIC: &[u8; 4] = b"BARB";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub storage: String,
    pub offset: u64,
}

impl TensorDescriptor {
    fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub history: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub tensors: Vec<TensorDescriptor>,
    pub architecture: CnnConfig,
    pub training: TrainingRecord,
    pub modality: Modality,
}

/// Encodes a model. Parameters are narrowed to `f32`.
pub fn write_container<W: Write>(model: &CnnModel, mut out: W) -> Result<()> {
    let named = model.network.named_tensors();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        let desc = TensorDescriptor {
            name: name.clone(),
            shape: t.shape().to_vec(),
            storage: "f32".into(),
            offset,
        };
        offset += desc.byte_len();
        tensors.push(desc);
    }
    let header = ContainerHeader {
        tensors,
        architecture: model.config.clone(),
        training: TrainingRecord {
            history: model.history.clone(),
            target_mean: model.target_mean,
            target_scale: model.target_scale,
        },
        modality: model.modality,
    };
    let json = serde_json::to_vec(&header).map_err(|e| DataError::Integrity(e.to_string()))?;
    let mut bytes = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &named {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes).map_err(|source| DataError::Io {
        path: "<container>".into(),
        source,
    })
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_container(model, std::io::BufWriter::new(file))
}

fn read_preamble<R: Read>(r: &mut R) -> Result<u64> {
    let mut pre = [0u8; PREAMBLE];
    r.read_exact(&mut pre)
        .map_err(|_| DataError::Integrity("file shorter than the container preamble".into()))?;
    if &pre[..4] != MAGIC {
        return Err(DataError::Integrity("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(pre[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(DataError::Incompatible {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(u64::from_le_bytes(pre[8..16].try_into().expect("8 bytes")))
}

fn read_header_json<R: Read>(r: &mut R, len: u64) -> Result<ContainerHeader> {
    if len > 1 << 32 {
        return Err(DataError::Integrity(format!(
            "implausible header length {len}"
        )));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|_| DataError::Integrity("truncated header".into()))?;
    serde_json::from_slice(&json).map_err(|e| DataError::Integrity(format!("header: {e}")))
}

/// Reads only the header.
pub fn inspect_container(path: impl AsRef<Path>) -> Result<ContainerHeader> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let len = read_preamble(&mut r)?;
    read_header_json(&mut r, len)
}

/// Decodes and validates a container; nothing is returned unless every check passes.
pub fn read_container<R: Read>(mut r: R) -> Result<CnnModel> {
    let len = read_preamble(&mut r)?;
    let header = read_header_json(&mut r, len)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|source| DataError::Io {
            path: "<container>".into(),
            source,
        })?;

    let mut model = build_model(&header.architecture, header.modality)?;
    let mut expected = model.network.named_tensors_mut();
    if expected.len() != header.tensors.len() {
        return Err(DataError::Integrity(format!(
            "header lists {} tensors, architecture needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut spans: Vec<(u64, u64)> = Vec::with_capacity(expected.len());
    for ((name, tensor), desc) in expected.iter().zip(&header.tensors) {
        if *name != desc.name || tensor.shape() != desc.shape.as_slice() {
            return Err(DataError::Integrity(format!(
                "tensor {:?} {:?} does not match architecture slot {name:?} {:?}",
                desc.name,
                desc.shape,
                tensor.shape()
            )));
        }
        if desc.storage != "f32" {
            return Err(DataError::Integrity(format!(
                "tensor {:?} uses unsupported storage {:?}",
                desc.name, desc.storage
            )));
        }
        let end = desc.offset + desc.byte_len();
        if end > payload.len() as u64 {
            return Err(DataError::Integrity(format!(
                "tensor {:?} runs past the end of the payload",
                desc.name
            )));
        }
        spans.push((desc.offset, end));
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(DataError::Integrity("tensor payloads overlap".into()));
    }
    let used: u64 = spans.iter().map(|(a, b)| b - a).sum();
    if used != payload.len() as u64 {
        return Err(DataError::Integrity(format!(
            "payload holds {} bytes but tensors describe {used}",
            payload.len()
        )));
    }
    for ((_, tensor), desc) in expected.iter_mut().zip(&header.tensors) {
        let start = desc.offset as usize;
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            let b = &payload[start + 4 * i..start + 4 * i + 4];
            *v = f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")));
        }
    }
    drop(expected);
    model.history = header.training.history;
    model.target_mean = header.training.target_mean;
    model.target_scale = header.training.target_scale;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_container(BufReader::new(file))
}

/// The model as it will read back from a container: every stored tensor
/// rounded to `f32`.
pub fn storage_rounded(model: &CnnModel) -> CnnModel {
    let mut m = model.clone();
    for (_, t) in m.network.named_tensors_mut() {
        for v in t.data_mut() {
            *v = f64::from(*v as f32);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> CnnModel {
        let mut m = build_model(&CnnConfig::with_side(24), Modality::FlairLv).unwrap();
        m.target_mean = 51.3;
        m.target_scale = 17.1;
        m.history = vec![300.0, 120.5];
        m
    }

    fn encode(m: &CnnModel) -> Vec<u8> {
        let mut buf = Vec::new();
        write_container(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_equals_rounded_model() {
        let m = small_model();
        let back = read_container(encode(&m).as_slice()).unwrap();
        assert_eq!(back, storage_rounded(&m));
    }

    #[test]
    fn version_gate() {
        let mut bytes = encode(&small_model());
        bytes[4] = 2;
        assert!(matches!(
            read_container(bytes.as_slice()),
            Err(DataError::Incompatible { found: 2, .. })
        ));
        let mut bad = encode(&small_model());
        bad[0] = b'X';
        assert!(matches!(
            read_container(bad.as_slice()),
            Err(DataError::Integrity(_))
        ));
    }

    #[test]
    fn truncated_and_count_mismatch() {
        let bytes = encode(&small_model());
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(read_container(cut), Err(DataError::Integrity(_))));

        // drop the last descriptor from the header
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: ContainerHeader = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        header.tensors.pop();
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = bytes[..8].to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&bytes[16 + len..]);
        assert!(matches!(
            read_container(forged.as_slice()),
            Err(DataError::Integrity(_))
        ));
    }
}

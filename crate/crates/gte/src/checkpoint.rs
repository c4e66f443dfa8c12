//! Model checkpoints.
//!
//! Layout: `GTEC`, u32 LE version, u64 LE metadata length, JSON metadata,
//! u64 LE value count, that many f64 LE parameter values in metadata order,
//! and a SHA-256 digest of every preceding byte.

use std::path::Path;

use gte_core::encoders::Vocabulary;
use gte_core::models::{Model, ModelConfig};
use gte_core::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{integrity, io, Result};
use crate::store::write_atomic;

pub const MAGIC: &[u8; 4] = b"GTEC";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub params: Vec<ParamEntry>,
    /// Free-form training summary (history, best epoch).
    #[serde(default)]
    pub training: serde_json::Value,
}

pub fn encode(model: &Model, training: serde_json::Value) -> Vec<u8> {
    let meta = CheckpointMeta {
        model: model.config().clone(),
        vocab: model.vocab().tokens().to_vec(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                requires_grad: p.requires_grad,
            })
            .collect(),
        training,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let count: usize = model.params().iter().map(|p| p.value.len()).sum();
    let mut out = Vec::with_capacity(4 + 4 + 8 + json.len() + 8 + count * 8 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in model.params().iter() {
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save(path: &Path, model: &Model, training: serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    write_atomic(path, &encode(model, training))
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, path: &Path, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => {
            let s = &bytes[*at..e];
            *at = e;
            Ok(s)
        }
        None => Err(integrity(path, format!("truncated while reading {what}"))),
    }
}

/// Decodes and verifies a checkpoint, returning the model and its metadata.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Model, CheckpointMeta)> {
    let mut at = 0;
    if take(bytes, &mut at, 4, path, "magic")? != MAGIC {
        return Err(integrity(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, path, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(integrity(path, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u64::from_le_bytes(take(bytes, &mut at, 8, path, "metadata length")?.try_into().unwrap());
    let meta_len = usize::try_from(meta_len).map_err(|_| integrity(path, "metadata length overflows"))?;
    let meta_bytes = take(bytes, &mut at, meta_len, path, "metadata")?;
    let count = u64::from_le_bytes(take(bytes, &mut at, 8, path, "value count")?.try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| integrity(path, "value count overflows"))?;
    let values_len = count.checked_mul(8).ok_or_else(|| integrity(path, "value count overflows"))?;
    let values = take(bytes, &mut at, values_len, path, "parameter values")?;
    let body_end = at;
    let digest = take(bytes, &mut at, DIGEST_LEN, path, "checksum")?;
    if at != bytes.len() {
        return Err(integrity(path, format!("{} trailing bytes", bytes.len() - at)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(integrity(path, "checksum mismatch"));
    }

    let meta: CheckpointMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| integrity(path, format!("bad metadata: {e}")))?;
    let expected: usize = meta.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if expected != count {
        return Err(integrity(path, format!("metadata describes {expected} values, payload has {count}")));
    }
    let mut params = ParamSet::new();
    let mut floats = values.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for p in &meta.params {
        let n: usize = p.shape.iter().product();
        let data: Vec<f64> = floats.by_ref().take(n).collect();
        let t = Tensor::new(p.shape.clone(), data).map_err(|e| integrity(path, format!("{}: {e}", p.name)))?;
        let id = params.add(p.name.clone(), t);
        params.get_mut(id).requires_grad = p.requires_grad;
    }
    let vocab = Vocabulary::from_tokens(meta.vocab.clone()).map_err(|e| integrity(path, e.to_string()))?;
    let model = Model::from_parts(&meta.model, vocab, params).map_err(|e| integrity(path, e.to_string()))?;
    Ok((model, meta))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gte_core::data::{synthetic_dataset, SyntheticSpec};
    use gte_core::models::Architecture;

    fn model(arch: Architecture) -> Model {
        let (vocab, _) = synthetic_dataset(&SyntheticSpec { vocab_size: 12, ..Default::default() }).unwrap();
        Model::new(&ModelConfig::toy(arch, 4, 2, 3), vocab).unwrap()
    }

    fn bits(m: &Model) -> Vec<(String, Vec<u64>, bool)> {
        m.params()
            .iter()
            .map(|p| (p.name.clone(), p.value.data().iter().map(|x| x.to_bits()).collect(), p.requires_grad))
            .collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for arch in Architecture::ALL {
            let m = model(arch);
            let bytes = encode(&m, serde_json::json!({"epoch": 3}));
            let (back, meta) = decode(&bytes, Path::new("mem")).unwrap();
            assert_eq!(bits(&m), bits(&back), "{arch:?}");
            assert_eq!(back.config(), m.config());
            assert_eq!(back.vocab().tokens(), m.vocab().tokens());
            assert_eq!(meta.training["epoch"], 3);
        }
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = encode(&model(Architecture::Lstm), serde_json::Value::Null);
        for cut in [0, 3, 7, 15, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode(&bytes[..cut], Path::new("mem")).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_byte_fails() {
        let bytes = encode(&model(Architecture::Bimpm), serde_json::Value::Null);
        for pos in [0, 5, 20, bytes.len() - 100, bytes.len() - 3] {
            let mut b = bytes.clone();
            b[pos] ^= 1;
            assert!(decode(&b, Path::new("mem")).is_err(), "flip at {pos}");
        }
        let mut b = bytes.clone();
        b.push(0);
        assert!(decode(&b, Path::new("mem")).is_err());
    }
}

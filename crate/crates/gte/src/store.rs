//! On-disk feature store: `manifest.json` plus a flat `features.bin` of
//! little-endian f32 values, row-major.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use gte_core::features::{FeatureVariant, ImageFeature, ImageLookup};
use gte_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{integrity, io, IoError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "features.bin";
pub const FORMAT: &str = "gte-features";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub variant: FeatureVariant,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub payload_bytes: u64,
    pub payload_sha256: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub features: BTreeMap<String, ImageFeature>,
}

impl ImageLookup for FeatureStore {
    fn feature(&self, image_id: &str) -> Option<&ImageFeature> {
        self.features.get(image_id)
    }
}

impl FeatureStore {
    pub fn new(features: BTreeMap<String, ImageFeature>) -> Self {
        FeatureStore { features }
    }

    pub fn get(&self, image_id: &str) -> Result<&ImageFeature> {
        self.features.get(image_id).ok_or_else(|| IoError::UnknownImage(image_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.features.keys().map(String::as_str)
    }

    /// The variant shared by every entry, if there is exactly one.
    pub fn variant(&self) -> Option<FeatureVariant> {
        let vs: BTreeSet<FeatureVariant> = self.features.values().map(|f| f.variant).collect();
        (vs.len() == 1).then(|| *vs.iter().next().unwrap())
    }

    /// Writes the store into `dir`. Values are stored as f32, so a roundtrip is
    /// bit-exact for features that are already f32-representable.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.features.len());
        for (id, f) in &self.features {
            entries.push(ManifestEntry {
                image_id: id.clone(),
                variant: f.variant,
                shape: f.data.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for &x in f.data.data() {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            payload_bytes: payload.len() as u64,
            payload_sha256: hex(&Sha256::digest(&payload)),
            entries,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join(PAYLOAD), &payload)?;
        write_atomic(&dir.join(MANIFEST), &json)?;
        Ok(manifest)
    }

    /// Reads and fully validates a store. Nothing is returned unless every
    /// entry passes.
    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let ppath = dir.join(PAYLOAD);
        let mbytes = std::fs::read(&mpath).map_err(io(&mpath))?;
        let manifest: Manifest =
            serde_json::from_slice(&mbytes).map_err(|e| integrity(&mpath, format!("unreadable manifest: {e}")))?;
        let payload = std::fs::read(&ppath).map_err(io(&ppath))?;
        let features = decode(&manifest, &payload, &mpath, &ppath)?;
        Ok(FeatureStore { features })
    }
}

/// Checks the manifest against the payload and decodes every entry.
pub fn decode(
    manifest: &Manifest,
    payload: &[u8],
    mpath: &Path,
    ppath: &Path,
) -> Result<BTreeMap<String, ImageFeature>> {
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(integrity(
            mpath,
            format!("unsupported format {} v{}", manifest.format, manifest.version),
        ));
    }
    if payload.len() as u64 != manifest.payload_bytes {
        return Err(integrity(
            ppath,
            format!("payload is {} bytes, manifest says {}", payload.len(), manifest.payload_bytes),
        ));
    }
    let digest = hex(&Sha256::digest(payload));
    if digest != manifest.payload_sha256 {
        return Err(integrity(ppath, "payload checksum mismatch"));
    }
    let mut seen = BTreeSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.image_id.as_str()) {
            return Err(integrity(mpath, format!("duplicate image id {:?}", e.image_id)));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(integrity(mpath, format!("{}: empty shape {:?}", e.image_id, e.shape)));
        }
        if e.offset % 4 != 0 || e.offset + e.byte_len() > manifest.payload_bytes {
            return Err(integrity(
                mpath,
                format!("{}: extent {}+{} outside payload", e.image_id, e.offset, e.byte_len()),
            ));
        }
    }
    let mut spans: Vec<(u64, u64, &str)> =
        manifest.entries.iter().map(|e| (e.offset, e.offset + e.byte_len(), e.image_id.as_str())).collect();
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(integrity(mpath, format!("entries {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        let start = e.offset as usize;
        let bytes = &payload[start..start + e.byte_len() as usize];
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| integrity(mpath, format!("{}: {err}", e.image_id)))?;
        let f = ImageFeature::new(e.image_id.clone(), e.variant, t)
            .map_err(|err| integrity(mpath, err.to_string()))?;
        out.insert(e.image_id.clone(), f);
    }
    Ok(out)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    tmp.set_file_name(name);
    std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}

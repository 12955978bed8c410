//! Versioned single-file model container.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "MSCN"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     manifest length M in bytes, u64 little-endian
//! 16      M     manifest, UTF-8 JSON (see [`Manifest`])
//! 16+M    8     blob length B in bytes, u64 little-endian
//! 24+M    B     parameters as f32 little-endian, tensors in manifest order,
//!               each tensor row-major with the width axis fastest
//! ```
//!
//! Nothing may follow the blob. Writing is deterministic, so loading and
//! re-saving a file reproduces it byte for byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StoreError};
use crate::mixture::{MixtureConfig, MixtureNetwork};
use crate::tensor::Parameterized;

pub const MAGIC: &[u8; 4] = b"MSCN";
pub const FORMAT_VERSION: u32 = 1;

/// Where a model came from in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub iteration: u64,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    /// (out/batch, in/channels, height, width).
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Number of experts `N`; must equal the length of `mixture.experts`.
    pub expert_count: usize,
    pub mixture: MixtureConfig,
    pub training: TrainingInfo,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn describe(net: &MixtureNetwork<f32>, training: TrainingInfo) -> Self {
        let mut tensors = Vec::new();
        net.visit_params(&mut |name, p| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: p.shape().dims().to_vec(),
            })
        });
        Self {
            expert_count: net.n(),
            mixture: net.config(),
            training,
            tensors,
        }
    }

    /// Parameter count implied by the tensor shapes.
    pub fn value_count(&self) -> u64 {
        self.tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() as u64)
            .sum()
    }
}

pub fn to_bytes(net: &MixtureNetwork<f32>, training: TrainingInfo) -> Vec<u8> {
    let manifest = Manifest::describe(net, training);
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let mut blob = Vec::with_capacity(4 * manifest.value_count() as usize);
    net.visit_params(&mut |_, p| {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let mut out = Vec::with_capacity(24 + text.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> u64 {
        (self.bytes.len() - self.pos) as u64
    }

    fn take(&mut self, field: &'static str, n: u64) -> std::result::Result<&'a [u8], StoreError> {
        if self.remaining() < n {
            return Err(StoreError::TruncatedHeader {
                field,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> std::result::Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> std::result::Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(field, 8)?.try_into().unwrap()))
    }
}

fn read_header(bytes: &[u8]) -> std::result::Result<(Manifest, Reader<'_>), StoreError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take("magic", 4).map_err(|_| StoreError::BadMagic {
        found: bytes[..bytes.len().min(4)].to_vec(),
    })?;
    if magic != MAGIC {
        return Err(StoreError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = r.u32("format_version")?;
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = r.u64("manifest_len")?;
    let text = r.take("manifest", len)?;
    let manifest: Manifest =
        serde_json::from_slice(text).map_err(|e| StoreError::ManifestParse(e.to_string()))?;
    Ok((manifest, r))
}

fn inconsistency(field: impl Into<String>, reason: impl Into<String>) -> StoreError {
    StoreError::ManifestInconsistency {
        field: field.into(),
        reason: reason.into(),
    }
}

fn build(manifest: &Manifest) -> Result<MixtureNetwork<f32>> {
    let m = &manifest.mixture;
    if manifest.expert_count != m.experts.len() {
        return Err(inconsistency(
            "expert_count",
            format!(
                "declares {} experts but {} expert sections are present",
                manifest.expert_count,
                m.experts.len()
            ),
        )
        .into());
    }
    let net = MixtureNetwork::zeros(m).map_err(|e| match e {
        Error::InvalidConfig { field, reason } => inconsistency(format!("mixture.{field}"), reason),
        other => inconsistency("mixture", other.to_string()),
    })?;
    let mut expected = Vec::new();
    net.visit_params(&mut |name, p| expected.push((name.to_string(), p.shape().dims().to_vec())));
    if expected.len() != manifest.tensors.len() {
        return Err(inconsistency(
            "tensors",
            format!(
                "{} entries for an architecture with {} tensors",
                manifest.tensors.len(),
                expected.len()
            ),
        )
        .into());
    }
    for (i, ((name, dims), entry)) in expected.iter().zip(&manifest.tensors).enumerate() {
        if *name != entry.name {
            return Err(inconsistency(
                format!("tensors[{i}].name"),
                format!("expected `{name}`, found `{}`", entry.name),
            )
            .into());
        }
        if *dims != entry.shape {
            return Err(StoreError::TensorShape {
                name: name.clone(),
                manifest: entry.shape.clone(),
                expected: dims.clone(),
            }
            .into());
        }
    }
    Ok(net)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(MixtureNetwork<f32>, TrainingInfo)> {
    let (manifest, mut r) = read_header(bytes)?;
    let mut net = build(&manifest)?;
    let declared = r.u64("blob_len")?;
    let expected = 4 * manifest.value_count();
    if declared != expected {
        return Err(StoreError::ByteCount { declared, expected }.into());
    }
    if r.remaining() < declared {
        return Err(StoreError::TruncatedBlob {
            declared,
            available: r.remaining(),
        }
        .into());
    }
    if r.remaining() > declared {
        return Err(StoreError::TrailingBytes {
            extra: r.remaining() - declared,
        }
        .into());
    }
    let mut values = bytes[r.pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    net.visit_params_mut(&mut |_, p| {
        for v in p.value.data_mut() {
            *v = values.next().expect("length checked");
        }
    });
    Ok((net, manifest.training))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes atomically: a temporary file in the target directory is renamed into place.
pub fn save_model(
    net: &MixtureNetwork<f32>,
    training: TrainingInfo,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&to_bytes(net, training))
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MixtureNetwork<f32>, TrainingInfo)> {
    from_bytes(&read_file(path.as_ref())?)
}

/// Header and manifest only; the blob is not validated.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Ok(read_header(&read_file(path.as_ref())?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{ExpertConfig, ScnConfig};

    fn net() -> MixtureNetwork<f32> {
        let cfg = MixtureConfig::uniform(2, ExpertConfig::Scn(ScnConfig::with_dict_size(8)));
        MixtureNetwork::from_seed(&cfg, 3).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&net(), TrainingInfo::default());
        assert_eq!(&bytes[..4], b"MSCN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes[16], b'{');
        let b = u64::from_le_bytes(bytes[16 + m..24 + m].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 24 + m + b);
        assert_eq!(b, 4 * net().param_count());
    }

    #[test]
    fn empty_input_is_bad_magic() {
        assert!(matches!(
            from_bytes(b"MS"),
            Err(Error::Store(StoreError::BadMagic { .. }))
        ));
    }
}

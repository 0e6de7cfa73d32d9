//! Common on-disk container: a JSON manifest followed by raw little-endian
//! IEEE-754 float32 arrays. Face assets, model checkpoints, and dataset
//! samples all use it.
//!
//! Layout: `b"ARCH"` magic, u32 format version, u64 manifest byte length, the
//! manifest JSON, then the concatenated float payload. Writing is
//! deterministic: entry order is insertion order and the manifest uses only
//! ordered containers.

use crate::error::{CoreError, Result};
use ndgrad::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"ARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in float32 elements.
    pub offset: u64,
    /// Element count; equals the shape product.
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// What the archive holds: "face-assets", "motion-prior", "animator",
    /// "sequence-classifier", "sample".
    pub kind: String,
    /// Free-form structured metadata (region index sets, hyperparameters,
    /// seeds, ...).
    pub meta: serde_json::Value,
    pub entries: Vec<Entry>,
}

/// Builder accumulating named float arrays plus metadata.
pub struct ArchiveBuilder {
    kind: String,
    meta: serde_json::Value,
    entries: Vec<Entry>,
    payload: Vec<f32>,
}

impl ArchiveBuilder {
    pub fn new(kind: &str) -> Self {
        ArchiveBuilder {
            kind: kind.to_string(),
            meta: serde_json::Value::Null,
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = meta;
        self
    }

    /// Adds an f64 tensor, narrowing to f32.
    pub fn tensor(self, name: &str, t: &Tensor) -> Self {
        let data: Vec<f32> = t.data().iter().map(|v| *v as f32).collect();
        self.floats(name, t.shape(), data)
    }

    pub fn floats(mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "entry {name}: shape/data mismatch"
        );
        assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate entry {name}"
        );
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.payload.len() as u64,
            len: data.len() as u64,
        });
        self.payload.extend(data);
        self
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            meta: self.meta,
            entries: self.entries,
        };
        for v in &self.payload {
            if !v.is_finite() {
                return Err(CoreError::archive(path, "refusing to write non-finite value"));
            }
        }
        let mjson = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + mjson.len() + self.payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&mjson);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
        std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
    }
}

/// A fully loaded archive.
#[derive(Debug)]
pub struct Archive {
    pub path: PathBuf,
    pub manifest: Manifest,
    payload: Vec<f32>,
}

impl Archive {
    pub fn read(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let mut head = [0u8; 16];
        file.read_exact(&mut head)
            .map_err(|_| CoreError::archive(path, "truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(CoreError::archive(path, "bad magic; not an archive"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CoreError::archive(
                path,
                format!("format version mismatch: file has {version}, reader supports {FORMAT_VERSION}"),
            ));
        }
        let mlen = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let mut mjson = vec![0u8; mlen];
        file.read_exact(&mut mjson)
            .map_err(|_| CoreError::archive(path, "truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&mjson)?;
        let mut rest = Vec::new();
        file.read_to_end(&mut rest).map_err(|e| CoreError::io(path, e))?;
        if rest.len() % 4 != 0 {
            return Err(CoreError::archive(path, "payload not a whole number of floats"));
        }
        let payload: Vec<f32> = rest
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        for e in &manifest.entries {
            let end = e.offset + e.len;
            if end as usize > payload.len() || e.shape.iter().product::<usize>() as u64 != e.len {
                return Err(CoreError::archive(path, format!("entry {} out of bounds", e.name)));
            }
        }
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::archive(path, "payload contains non-finite values"));
        }
        Ok(Archive {
            path: path.to_path_buf(),
            manifest,
            payload,
        })
    }

    pub fn entry_f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        let e = self
            .manifest
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::archive(&self.path, format!("missing entry {name}")))?;
        Ok((
            &e.shape,
            &self.payload[e.offset as usize..(e.offset + e.len) as usize],
        ))
    }

    /// Loads an entry widened back to f64.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, data) = self.entry_f32(name)?;
        Tensor::from_vec(shape, data.iter().map(|v| *v as f64).collect())
            .map_err(|e| CoreError::archive(&self.path, format!("entry {name}: {e}")))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn kind(&self) -> &str {
        &self.manifest.kind
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(CoreError::archive(
                &self.path,
                format!("expected kind {kind:?}, found {:?}", self.manifest.kind),
            ));
        }
        Ok(())
    }

    /// Deserializes a typed view of the metadata.
    pub fn meta_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.manifest.meta.clone())?)
    }
}

/// Writes bytes through a hasher so callers can fingerprint serialized runs.
pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| CoreError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_tensors_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.arch");
        let t = Tensor::from_vec(&[2, 3], vec![1.0, -0.5, 2.25, 0.0, 0.125, 7.0]).unwrap();
        ArchiveBuilder::new("face-assets")
            .meta(serde_json::json!({"n": 3, "tag": "t"}))
            .tensor("basis", &t)
            .write(&path)
            .unwrap();
        let a = Archive::read(&path).unwrap();
        assert_eq!(a.kind(), "face-assets");
        let back = a.tensor("basis").unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        // Values survive the f64 -> f32 -> f64 narrowing exactly here because
        // they are all representable in f32.
        assert_eq!(back.data(), t.data());
        assert_eq!(a.manifest.meta["n"], 3);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.arch");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = Archive::read(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"ARCH");
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        let err = Archive::read(&path).unwrap_err().to_string();
        assert!(err.contains("version mismatch"), "{err}");
    }

    #[test]
    fn rejects_non_finite_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.arch");
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: "sample".into(),
            meta: serde_json::Value::Null,
            entries: vec![Entry {
                name: "x".into(),
                shape: vec![1],
                offset: 0,
                len: 1,
            }],
        };
        let mjson = serde_json::to_vec(&manifest).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"ARCH");
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&mjson);
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = Archive::read(&path).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }

    #[test]
    fn writing_twice_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.arch"), dir.path().join("b.arch"));
        let t = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for p in [&p1, &p2] {
            ArchiveBuilder::new("sample")
                .meta(serde_json::json!({"seed": 42}))
                .tensor("x", &t)
                .write(p)
                .unwrap();
        }
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

//! Manifest (JSON) + binary embedding store.
//!
//! Store layout, little-endian throughout:
//!
//! ```text
//! magic    b"MREB"
//! version  u32
//! N        u32   record count
//! d        u32   embedding dimension
//! flags    N bytes, bit 0 = text present
//! records  per record: text[d] f32 (if present), then image[d] f32
//! ```
//!
//! The manifest lists every record with its label, optional split tag, the
//! byte offset of its float block inside the store, and the block length in floats.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingRecord, LabelScheme, SplitTag};
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"MREB";
const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const FLAG_TEXT: u8 = 0b1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    /// Byte offset of the record's float block in the store.
    pub offset: u64,
    /// Number of f32 values in the block (`d`, or `2d` with text).
    pub floats: u64,
    pub has_text: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub dim: usize,
    pub scheme: LabelScheme,
    /// Store path, relative to the manifest's directory unless absolute.
    pub store: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    pub records: Vec<ManifestRecord>,
}

/// Encodes the store and the matching manifest entries.
pub fn write_store(dataset: &Dataset) -> Result<(Vec<u8>, Vec<ManifestRecord>)> {
    let n = u32::try_from(dataset.len()).map_err(|_| Error::Format("too many records".into()))?;
    let d = u32::try_from(dataset.dim()).map_err(|_| Error::Format("dimension too large".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.extend(
        dataset
            .records()
            .iter()
            .map(|r| if r.has_text() { FLAG_TEXT } else { 0 }),
    );

    let mut entries = Vec::with_capacity(dataset.len());
    for r in dataset.records() {
        let offset = buf.len() as u64;
        let mut floats = 0u64;
        for v in r.text.iter().flatten().chain(&r.image) {
            buf.extend_from_slice(&v.to_le_bytes());
            floats += 1;
        }
        entries.push(ManifestRecord {
            id: r.id.clone(),
            label: r.label,
            split: r.split,
            offset,
            floats,
            has_text: r.has_text(),
        });
    }
    Ok((buf, entries))
}

/// Decodes store bytes according to a manifest, validating every record.
pub fn read_store(manifest: &Manifest, bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != STORE_MAGIC {
        return Err(Error::Format("embedding store has a bad magic number".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != STORE_VERSION {
        return Err(Error::Format(format!("unsupported store version {version}")));
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    if d != manifest.dim {
        return Err(Error::Format(format!(
            "store dimension {d} disagrees with manifest dimension {}",
            manifest.dim
        )));
    }
    if n != manifest.records.len() {
        return Err(Error::Format(format!(
            "store holds {n} records, manifest lists {}",
            manifest.records.len()
        )));
    }
    let flags = bytes
        .get(HEADER_LEN..HEADER_LEN + n)
        .ok_or_else(|| Error::Format("store truncated inside flag table".into()))?;

    let mut records = Vec::with_capacity(n);
    for (entry, &flag) in manifest.records.iter().zip(flags) {
        let load_err = |reason: String| Error::Load {
            id: entry.id.clone(),
            reason,
        };
        let store_has_text = flag & FLAG_TEXT != 0;
        if store_has_text != entry.has_text {
            return Err(load_err(format!(
                "manifest says has_text={} but store flag says {store_has_text}",
                entry.has_text
            )));
        }
        let floats = usize::try_from(entry.floats).map_err(|_| load_err("block too large".into()))?;
        if entry.has_text {
            if floats < d || floats - d != d {
                return Err(load_err(format!(
                    "text embedding has length {}, expected {d}",
                    floats.saturating_sub(d)
                )));
            }
        } else if floats != d {
            return Err(load_err(format!("image embedding has length {floats}, expected {d}")));
        }
        let start = usize::try_from(entry.offset).map_err(|_| load_err("offset too large".into()))?;
        let block = start
            .checked_add(floats * 4)
            .and_then(|end| bytes.get(start..end))
            .ok_or_else(|| load_err(format!("block at offset {start} runs past the end of the store")))?;
        if start < HEADER_LEN + n {
            return Err(load_err(format!("offset {start} points into the store header")));
        }
        let values: Vec<f32> = block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (text, image) = if entry.has_text {
            (Some(values[..d].to_vec()), values[d..].to_vec())
        } else {
            (None, values)
        };
        records.push(EmbeddingRecord {
            id: entry.id.clone(),
            text,
            image,
            label: entry.label,
            split: entry.split,
        });
    }
    Dataset::new(manifest.name.clone(), d, manifest.scheme.clone(), records)
}

fn store_reference(manifest_path: &Path, store_path: &Path) -> PathBuf {
    let same_dir = manifest_path.parent().unwrap_or(Path::new("")) == store_path.parent().unwrap_or(Path::new(""));
    match store_path.file_name() {
        Some(name) if same_dir => PathBuf::from(name),
        _ => std::path::absolute(store_path).unwrap_or_else(|_| store_path.to_path_buf()),
    }
}

/// Writes the store and manifest; returns the manifest that was written.
pub fn write_dataset(
    dataset: &Dataset,
    manifest_path: impl AsRef<Path>,
    store_path: impl AsRef<Path>,
    encoder: Option<String>,
) -> Result<Manifest> {
    let (manifest_path, store_path) = (manifest_path.as_ref(), store_path.as_ref());
    let (bytes, entries) = write_store(dataset)?;
    fs::write(store_path, bytes)?;
    let manifest = Manifest {
        name: dataset.name().to_string(),
        dim: dataset.dim(),
        scheme: dataset.scheme().clone(),
        store: store_reference(manifest_path, store_path),
        encoder,
        records: entries,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let store_path = if manifest.store.is_absolute() {
        manifest.store.clone()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.store)
    };
    let bytes = fs::read(&store_path)?;
    read_store(&manifest, &bytes)
}

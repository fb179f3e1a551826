//! Checkpoint files: named f64 arrays in the dataset array container,
//! indexed by a JSON manifest with per-array checksums, plus free-form
//! string metadata (config snapshot, optimizer counters, RNG state).

use crate::dataio::{decode_array, encode_array, ArrayData, DataError};
use crate::rng::fnv1a;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CKPT_MAGIC: [u8; 8] = *b"AGPLCKP\x01";

/// Checkpoint arrays may legitimately exceed the dataset per-array cap.
pub const CKPT_ARRAY_CAP: usize = 1024 * 1024 * 1024;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryInfo {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    /// FNV-1a of the entry's container bytes, hex encoded.
    pub checksum: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CkptIndex {
    format_version: u32,
    entries: Vec<EntryInfo>,
    meta: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub entries: Vec<(EntryInfo, Vec<f64>)>,
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(
    path: &Path,
    arrays: &[(String, Vec<usize>, &[f64], bool)],
    meta: &BTreeMap<String, String>,
) -> Result<(), DataError> {
    let io = |source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut blobs: Vec<Vec<u8>> = Vec::with_capacity(arrays.len());
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0u64;
    for (name, shape, values, trainable) in arrays {
        let blob = encode_array(&ArrayData::F64(values.to_vec()), shape);
        entries.push(EntryInfo {
            name: name.clone(),
            trainable: *trainable,
            shape: shape.clone(),
            offset,
            length: blob.len() as u64,
            checksum: format!("{:016x}", fnv1a(&blob)),
        });
        offset += blob.len() as u64;
        blobs.push(blob);
    }
    let index = CkptIndex {
        format_version: 1,
        entries,
        meta: meta.clone(),
    };
    let index_json = serde_json::to_vec(&index).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&CKPT_MAGIC).map_err(io)?;
    f.write_all(&(index_json.len() as u64).to_le_bytes())
        .map_err(io)?;
    f.write_all(&index_json).map_err(io)?;
    for blob in &blobs {
        f.write_all(blob).map_err(io)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let io = |source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    if bytes.len() < 16 {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    if bytes[..8] != CKPT_MAGIC {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + index_len {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    let index: CkptIndex =
        serde_json::from_slice(&bytes[16..16 + index_len]).map_err(|source| DataError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let base = 16 + index_len;
    let mut entries = Vec::with_capacity(index.entries.len());
    for info in index.entries {
        let start = base + info.offset as usize;
        let end = start + info.length as usize;
        if bytes.len() < end {
            return Err(DataError::Truncated(path.to_path_buf()));
        }
        let blob = &bytes[start..end];
        let sum = format!("{:016x}", fnv1a(blob));
        if sum != info.checksum {
            return Err(DataError::InvalidManifest(format!(
                "checksum mismatch for `{}` in {}: stored {} computed {sum}",
                info.name,
                path.display(),
                info.checksum
            )));
        }
        let (data, shape) = decode_array(blob, CKPT_ARRAY_CAP, path)?;
        if shape != info.shape {
            return Err(DataError::InvalidManifest(format!(
                "shape mismatch for `{}`: index {:?} vs container {:?}",
                info.name, info.shape, shape
            )));
        }
        let ArrayData::F64(values) = data else {
            return Err(DataError::InvalidManifest(format!(
                "checkpoint entry `{}` is not f64",
                info.name
            )));
        };
        entries.push((info, values));
    }
    Ok(Checkpoint {
        entries,
        meta: index.meta,
    })
}

//! On-disk dataset format, manifests, split bookkeeping, and the online
//! image↔point-cloud pairing sampler used during training.
//!
//! Arrays live in a small self-describing binary container; instructions
//! and per-sample metadata live in UTF-8 JSON sidecars next to them. The
//! format has no library dependency so it can be reimplemented bit-for-bit
//! anywhere.
//!
//! Layout under a dataset root:
//! ```text
//! root/manifest.json
//! root/{train,test}/pc/<sample_id>.bin      (N,3) f32
//! root/{train,test}/img/<sample_id>.bin     (3,H,W) f32
//! root/{train,test}/label/<sample_id>.bin   (N,1) f32
//! root/{train,test}/meta/<sample_id>.json   sample record sidecar
//! ```

use crate::config::{Split, View};
use crate::geom3d::PointCloud;
use crate::rng::Rng;
use crate::synthgen::Instruction;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// First 8 bytes of every array file: the container tag plus version.
pub const MAGIC: [u8; 8] = *b"AGPL\x00\x01\x00\x00";
/// Refuse to allocate payloads larger than this from untrusted headers.
pub const DEFAULT_ARRAY_CAP: usize = 16 * 1024 * 1024;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic in {0}: not an array container")]
    BadMagic(PathBuf),
    #[error("unsupported dtype tag {tag} in {path}")]
    BadDtype { path: PathBuf, tag: u32 },
    #[error("declared shape of {path} needs {bytes} bytes, cap is {cap}")]
    ShapeTooLarge {
        path: PathBuf,
        bytes: u64,
        cap: usize,
    },
    #[error("truncated array file {0}")]
    Truncated(PathBuf),
    #[error("manifest error: {0}")]
    InvalidManifest(String),
    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("pairing infeasible: group ({class}, {affordance}) has {have} clouds, needs {need}")]
    PairingInfeasible {
        class: String,
        affordance: String,
        have: usize,
        need: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Array payload precision. Dataset tensors are f32; checkpoints use f64
/// so optimizer state round-trips bitwise.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    fn dtype_tag(&self) -> u32 {
        match self {
            ArrayData::F32(_) => 1,
            ArrayData::F64(_) => 2,
        }
    }

    fn elem_size(tag: u32) -> Option<usize> {
        match tag {
            1 => Some(4),
            2 => Some(8),
            _ => None,
        }
    }
}

/// Serialize an array into container bytes: 8-byte magic, u32 dtype tag,
/// u32 ndim, ndim×u32 dims, little-endian payload.
pub fn encode_array(data: &ArrayData, shape: &[usize]) -> Vec<u8> {
    let numel: usize = shape.iter().product();
    assert_eq!(numel, data.len(), "encode_array: shape/payload mismatch");
    let mut out = Vec::with_capacity(16 + shape.len() * 4 + data.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&data.dtype_tag().to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match data {
        ArrayData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        ArrayData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

/// Inverse of [`encode_array`]; `path` only labels errors.
pub fn decode_array(
    bytes: &[u8],
    cap: usize,
    path: &Path,
) -> Result<(ArrayData, Vec<usize>), DataError> {
    let need = |n: usize| -> Result<(), DataError> {
        if bytes.len() < n {
            Err(DataError::Truncated(path.to_path_buf()))
        } else {
            Ok(())
        }
    };
    need(16)?;
    if bytes[..8] != MAGIC {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let Some(elem) = ArrayData::elem_size(dtype) else {
        return Err(DataError::BadDtype {
            path: path.to_path_buf(),
            tag: dtype,
        });
    };
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if ndim > 8 {
        return Err(DataError::InvalidManifest(format!(
            "array {} declares {ndim} dimensions",
            path.display()
        )));
    }
    need(16 + ndim * 4)?;
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: u64 = 1;
    for i in 0..ndim {
        let d = u32::from_le_bytes(bytes[16 + i * 4..20 + i * 4].try_into().unwrap()) as u64;
        numel = numel.saturating_mul(d);
        shape.push(d as usize);
    }
    let payload_bytes = numel.saturating_mul(elem as u64);
    if payload_bytes > cap as u64 {
        return Err(DataError::ShapeTooLarge {
            path: path.to_path_buf(),
            bytes: payload_bytes,
            cap,
        });
    }
    let start = 16 + ndim * 4;
    need(start + payload_bytes as usize)?;
    let body = &bytes[start..start + payload_bytes as usize];
    let data = match dtype {
        1 => ArrayData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        2 => ArrayData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => unreachable!(),
    };
    Ok((data, shape))
}

pub fn write_array(path: &Path, data: &ArrayData, shape: &[usize]) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let bytes = encode_array(data, shape);
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

pub fn read_array(path: &Path, cap: usize) -> Result<(ArrayData, Vec<usize>), DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    decode_array(&bytes, cap, path)
}

/// Seeds consumed while generating one sample, kept for reproduction.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SampleSeeds {
    pub template: u64,
    pub points: u64,
    pub occlusion: u64,
    pub rotation: u64,
    pub render: u64,
    pub instruction: u64,
}

/// One manifest entry; also stored verbatim as the per-sample sidecar.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub object_class: String,
    pub affordance: String,
    pub affordance_index: usize,
    pub view: View,
    pub instruction: Instruction,
    pub pc_path: String,
    pub img_path: String,
    pub label_path: String,
    pub seeds: SampleSeeds,
    /// Row-major rotation applied after occlusion, rotation view only.
    pub rotation: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: Split,
    pub view: View,
    pub n_points: usize,
    pub image_size: usize,
    pub affordance_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Manifest {
    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        let path = root.join("manifest.json");
        let json = serde_json::to_string_pretty(self).map_err(|source| DataError::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, json).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Manifest, DataError> {
        let path = root.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| DataError::Json { path, source })
    }

    pub fn part(&self, train: bool) -> &[SampleRecord] {
        if train {
            &self.train
        } else {
            &self.test
        }
    }

    /// Structural checks: files exist, vocabularies are consistent, unseen
    /// affordance sets are disjoint, and every (class, affordance) group on
    /// the training side can supply `pair_count` clouds.
    pub fn validate(&self, root: &Path, pair_count: usize) -> Result<(), DataError> {
        let afford_set: BTreeSet<&str> = self.affordance_vocab.iter().map(|s| s.as_str()).collect();
        let object_set: BTreeSet<&str> = self.object_vocab.iter().map(|s| s.as_str()).collect();
        for (part, records) in [("train", &self.train), ("test", &self.test)] {
            for r in records {
                for rel in [&r.pc_path, &r.img_path, &r.label_path] {
                    let p = root.join(rel);
                    if !p.is_file() {
                        return Err(DataError::MissingFile(p));
                    }
                }
                if !afford_set.contains(r.affordance.as_str()) {
                    return Err(DataError::InvalidManifest(format!(
                        "{part} sample {} uses affordance `{}` outside the vocabulary",
                        r.sample_id, r.affordance
                    )));
                }
                if self
                    .affordance_vocab
                    .get(r.affordance_index)
                    .map(String::as_str)
                    != Some(r.affordance.as_str())
                {
                    return Err(DataError::InvalidManifest(format!(
                        "{part} sample {}: affordance_index {} does not match `{}`",
                        r.sample_id, r.affordance_index, r.affordance
                    )));
                }
                if !object_set.contains(r.object_class.as_str()) {
                    return Err(DataError::InvalidManifest(format!(
                        "{part} sample {} uses class `{}` outside the vocabulary",
                        r.sample_id, r.object_class
                    )));
                }
            }
        }
        if self.split == Split::Unseen {
            let train_affs: BTreeSet<&str> =
                self.train.iter().map(|r| r.affordance.as_str()).collect();
            let test_affs: BTreeSet<&str> =
                self.test.iter().map(|r| r.affordance.as_str()).collect();
            let overlap: Vec<&&str> = train_affs.intersection(&test_affs).collect();
            if !overlap.is_empty() {
                return Err(DataError::InvalidManifest(format!(
                    "unseen split has overlapping affordances: {overlap:?}"
                )));
            }
        }
        for (key, count) in group_sizes(&self.train) {
            if count < pair_count {
                return Err(DataError::PairingInfeasible {
                    class: key.0,
                    affordance: key.1,
                    have: count,
                    need: pair_count,
                });
            }
        }
        Ok(())
    }
}

fn group_sizes(records: &[SampleRecord]) -> BTreeMap<(String, String), usize> {
    let mut map = BTreeMap::new();
    for r in records {
        *map.entry((r.object_class.clone(), r.affordance.clone()))
            .or_insert(0) += 1;
    }
    map
}

/// A sample with its tensors materialized in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: SampleRecord,
    pub cloud: PointCloud,
    /// (3, H, W) pixels in [0,1].
    pub image: Vec<f64>,
    pub image_size: usize,
    /// (N,) target heatmap, one annotation column.
    pub target: Vec<f64>,
}

/// Write the three tensors and the JSON sidecar of one sample.
pub fn write_sample(
    root: &Path,
    part: &str,
    record: &SampleRecord,
    cloud: &PointCloud,
    image: &[f64],
    image_size: usize,
    target: &[f64],
) -> Result<(), DataError> {
    let n = cloud.len();
    assert_eq!(target.len(), n, "target must hold one value per point");
    assert_eq!(image.len(), 3 * image_size * image_size);
    let f32ify = |v: &[f64]| ArrayData::F32(v.iter().map(|&x| x as f32).collect());
    write_array(&root.join(&record.pc_path), &f32ify(&cloud.flat()), &[n, 3])?;
    write_array(
        &root.join(&record.img_path),
        &f32ify(image),
        &[3, image_size, image_size],
    )?;
    write_array(&root.join(&record.label_path), &f32ify(target), &[n, 1])?;
    let meta_path = root
        .join(part)
        .join("meta")
        .join(format!("{}.json", record.sample_id));
    if let Some(dir) = meta_path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(&meta_path))?;
    }
    let json = serde_json::to_string_pretty(record).map_err(|source| DataError::Json {
        path: meta_path.clone(),
        source,
    })?;
    std::fs::write(&meta_path, json).map_err(io_err(&meta_path))?;
    Ok(())
}

/// Load one sample's tensors back, converting to f64.
pub fn read_sample(root: &Path, record: &SampleRecord) -> Result<Sample, DataError> {
    let (pc_data, pc_shape) = read_array(&root.join(&record.pc_path), DEFAULT_ARRAY_CAP)?;
    if pc_shape.len() != 2 || pc_shape[1] != 3 {
        return Err(DataError::InvalidManifest(format!(
            "cloud {} has shape {pc_shape:?}, expected (N,3)",
            record.pc_path
        )));
    }
    let cloud = PointCloud::from_flat(&pc_data.to_f64())
        .map_err(|e| DataError::InvalidManifest(format!("cloud {}: {e}", record.pc_path)))?;
    let (img_data, img_shape) = read_array(&root.join(&record.img_path), DEFAULT_ARRAY_CAP)?;
    if img_shape.len() != 3 || img_shape[0] != 3 || img_shape[1] != img_shape[2] {
        return Err(DataError::InvalidManifest(format!(
            "image {} has shape {img_shape:?}, expected (3,H,H)",
            record.img_path
        )));
    }
    let (label_data, label_shape) = read_array(&root.join(&record.label_path), DEFAULT_ARRAY_CAP)?;
    if label_shape.len() != 2 || label_shape[1] != 1 || label_shape[0] != cloud.len() {
        return Err(DataError::InvalidManifest(format!(
            "label {} has shape {label_shape:?}, expected ({},1)",
            record.label_path,
            cloud.len()
        )));
    }
    Ok(Sample {
        record: record.clone(),
        cloud,
        image: img_data.to_f64(),
        image_size: img_shape[1],
        target: label_data.to_f64(),
    })
}

/// One training/eval step: one image-bearing sample paired with `P` cloud
/// samples of the same object class and affordance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingStep {
    /// Index of the sample providing image + instruction.
    pub image_idx: usize,
    /// Indices of the samples providing clouds and targets.
    pub cloud_idxs: Vec<usize>,
}

/// Deterministic online pairing over one manifest part.
#[derive(Debug)]
pub struct PairingSampler {
    groups: BTreeMap<(String, String), Vec<usize>>,
    n: usize,
    pair_count: usize,
    seed: u64,
    train: bool,
}

impl PairingSampler {
    /// `train` draws `pair_count` distinct clouds per image from the same
    /// (class, affordance) group; eval pairs every sample with its own
    /// cloud exactly once.
    pub fn new(
        records: &[SampleRecord],
        train: bool,
        pair_count: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::InvalidManifest("empty manifest part".into()));
        }
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups
                .entry((r.object_class.clone(), r.affordance.clone()))
                .or_default()
                .push(i);
        }
        if train {
            for ((class, aff), members) in &groups {
                if members.len() < pair_count {
                    return Err(DataError::PairingInfeasible {
                        class: class.clone(),
                        affordance: aff.clone(),
                        have: members.len(),
                        need: pair_count,
                    });
                }
            }
        }
        Ok(PairingSampler {
            groups,
            n: records.len(),
            pair_count,
            seed,
            train,
        })
    }

    /// The full pairing sequence for one epoch. Regenerating an epoch with
    /// the same index replays it exactly.
    pub fn epoch(&self, records: &[SampleRecord], epoch_index: u64) -> Vec<PairingStep> {
        let mut rng = Rng::new(crate::rng::derive_seed(self.seed, &[0x9a17, epoch_index]));
        let mut order: Vec<usize> = (0..self.n).collect();
        rng.shuffle(&mut order);
        order
            .into_iter()
            .map(|image_idx| {
                if !self.train {
                    return PairingStep {
                        image_idx,
                        cloud_idxs: vec![image_idx],
                    };
                }
                let r = &records[image_idx];
                let pool = &self.groups[&(r.object_class.clone(), r.affordance.clone())];
                let picks = rng.sample_indices(pool.len(), self.pair_count.min(pool.len()));
                PairingStep {
                    image_idx,
                    cloud_idxs: picks.into_iter().map(|i| pool[i]).collect(),
                }
            })
            .collect()
    }
}

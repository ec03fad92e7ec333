//! Layered probing embedding dumps (LPED).
//!
//! A dump is a directory holding `manifest.json`, one binary file per layer
//! and a labels file. Each layer file is the 4-byte magic `LPE1`, then
//! `layer_index`, `n_rows` and `dim` as little-endian `u32`, then
//! `n_rows * dim` little-endian `f32` values in row-major order. The labels
//! file has one decimal class id per line. Every payload file is listed in
//! the manifest with its 64-bit FNV-1a checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a_hex, write_atomic};
use crate::error::{Error, Result};
use crate::types::LabeledEmbeddings;

pub const MAGIC: &[u8; 4] = b"LPE1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.txt";
const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpedManifest {
    pub format_version: u32,
    pub model_id: String,
    pub n_examples: usize,
    /// `L + 1`: the embedding output plus one entry per block.
    pub n_layers: usize,
    pub dim: usize,
    pub dtype: String,
    pub pooling: String,
    pub shuffle_seed: u64,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
    pub layer_files: Vec<String>,
    pub labels_file: String,
    /// File name to FNV-1a hex digest, for every layer file and the labels file.
    pub checksums: BTreeMap<String, String>,
    /// Producer-specific fields (runtime versions, truncation counts, ...),
    /// carried through unchanged.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Manifest fields supplied by the writer; sizes and checksums are derived.
#[derive(Debug, Clone, Default)]
pub struct LpedMeta {
    pub model_id: String,
    pub pooling: String,
    pub shuffle_seed: u64,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn layer_file_name(index: usize) -> String {
    format!("layer_{index}.bin")
}

/// Serializes one layer matrix, narrowing each value to `f32`.
pub fn encode_layer(index: usize, matrix: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, dim) = matrix.dim();
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + rows * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&as_u32(index, "layer index")?.to_le_bytes());
    out.extend_from_slice(&as_u32(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&as_u32(dim, "dim")?.to_le_bytes());
    for ((row, col), &v) in matrix.indexed_iter() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a layer file, checking it against the expected index and shape.
pub fn decode_layer(file: &str, bytes: &[u8], index: usize, rows: usize, dim: usize) -> Result<Array2<f64>> {
    let expected = (HEADER_BYTES + rows * dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            file: file.to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Header {
            file: file.to_string(),
            message: format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        });
    }
    let header = (read_u32(bytes, 4) as usize, read_u32(bytes, 8) as usize, read_u32(bytes, 12) as usize);
    if header != (index, rows, dim) {
        return Err(Error::Header {
            file: file.to_string(),
            message: format!(
                "header says (layer {}, {} rows, dim {}), manifest says (layer {index}, {rows} rows, dim {dim})",
                header.0, header.1, header.2
            ),
        });
    }
    let values: Vec<f64> = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i / dim,
            col: i % dim,
        });
    }
    Ok(Array2::from_shape_vec((rows, dim), values).expect("length checked above"))
}

fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let mut s = String::with_capacity(labels.len() * 2);
    for y in labels {
        s.push_str(&y.to_string());
        s.push('\n');
    }
    s.into_bytes()
}

fn decode_labels(file: &str, bytes: &[u8]) -> Result<Vec<usize>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Inconsistent(format!("{file} is not UTF-8: {e}")))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{file}: {e} ({line:?})"),
            })
        })
        .collect()
}

/// Writes a layer stack and its labels as a dump in `dir` (created if needed).
/// Payload files land first, the manifest last.
pub fn write_lped(dir: &Path, layers: &[Array2<f64>], labels: &[usize], meta: &LpedMeta) -> Result<LpedManifest> {
    let first = layers
        .first()
        .ok_or_else(|| Error::DimensionMismatch("a dump needs at least one layer".into()))?;
    let (n, dim) = first.dim();
    if let Some((l, m)) = layers.iter().enumerate().find(|(_, m)| m.dim() != (n, dim)) {
        return Err(Error::DimensionMismatch(format!(
            "layer {l} is {:?}, layer 0 is {:?}",
            m.dim(),
            (n, dim)
        )));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    if meta.num_classes < 2 {
        return Err(Error::InvalidConfig(format!("num_classes must be at least 2, got {}", meta.num_classes)));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= meta.num_classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            num_classes: meta.num_classes,
        });
    }

    // Encode everything before touching the directory so a bad matrix leaves nothing behind.
    let encoded = layers
        .iter()
        .enumerate()
        .map(|(i, m)| encode_layer(i, m).map_err(|e| Error::Layer { layer: i, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let label_bytes = encode_labels(labels);

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut checksums = BTreeMap::new();
    let mut layer_files = Vec::with_capacity(layers.len());
    for (i, bytes) in encoded.iter().enumerate() {
        let name = layer_file_name(i);
        write_atomic(&dir.join(&name), bytes)?;
        checksums.insert(name.clone(), fnv1a_hex(bytes));
        layer_files.push(name);
    }
    write_atomic(&dir.join(LABELS_FILE), &label_bytes)?;
    checksums.insert(LABELS_FILE.to_string(), fnv1a_hex(&label_bytes));

    let manifest = LpedManifest {
        format_version: FORMAT_VERSION,
        model_id: meta.model_id.clone(),
        n_examples: n,
        n_layers: layers.len(),
        dim,
        dtype: DTYPE.to_string(),
        pooling: meta.pooling.clone(),
        shuffle_seed: meta.shuffle_seed,
        num_classes: meta.num_classes,
        class_names: meta.class_names.clone(),
        layer_files,
        labels_file: LABELS_FILE.to_string(),
        checksums,
        extra: meta.extra.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<LpedManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: LpedManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Json { path, source: e })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Inconsistent(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.layer_files.len() != manifest.n_layers {
        return Err(Error::Inconsistent(format!(
            "manifest lists {} layer files for n_layers = {}",
            manifest.layer_files.len(),
            manifest.n_layers
        )));
    }
    if manifest.n_layers == 0 {
        return Err(Error::Inconsistent("manifest lists no layers".into()));
    }
    if !manifest.class_names.is_empty() && manifest.class_names.len() != manifest.num_classes {
        return Err(Error::Inconsistent(format!(
            "{} class names for num_classes = {}",
            manifest.class_names.len(),
            manifest.num_classes
        )));
    }
    Ok(manifest)
}

/// Reads a payload file and verifies its checksum against the manifest.
fn read_checked(dir: &Path, manifest: &LpedManifest, name: &str, expected_len: Option<u64>) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::Inconsistent(format!("referenced file {name} does not exist")));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if let Some(expected) = expected_len {
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                file: name.to_string(),
                expected,
                actual: bytes.len() as u64,
            });
        }
    }
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| Error::Inconsistent(format!("manifest has no checksum for {name}")))?;
    let actual = fnv1a_hex(&bytes);
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(Error::Checksum {
            file: name.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(bytes)
}

/// Loads and fully validates a dump: version, sizes, checksums, headers and
/// label ranges, before returning one [`LabeledEmbeddings`] per layer.
pub fn read_lped(dir: &Path) -> Result<(Vec<LabeledEmbeddings>, LpedManifest)> {
    let manifest = read_manifest(dir)?;
    let (n, dim) = (manifest.n_examples, manifest.dim);

    let label_bytes = read_checked(dir, &manifest, &manifest.labels_file, None)?;
    let labels = decode_labels(&manifest.labels_file, &label_bytes)?;
    if labels.len() != n {
        return Err(Error::Inconsistent(format!(
            "manifest n_examples = {n} but {} has {} rows",
            manifest.labels_file,
            labels.len()
        )));
    }

    let expected_len = (HEADER_BYTES + n * dim * 4) as u64;
    let mut layers = Vec::with_capacity(manifest.n_layers);
    for (i, name) in manifest.layer_files.iter().enumerate() {
        let bytes = read_checked(dir, &manifest, name, Some(expected_len))?;
        let features = decode_layer(name, &bytes, i, n, dim)?;
        let provenance = format!("{}/layer-{i}/{}", manifest.model_id, manifest.pooling);
        layers.push(LabeledEmbeddings::new(features, labels.clone(), manifest.num_classes, provenance)?);
    }
    Ok((layers, manifest))
}

/// Applies one seeded row permutation to every layer (and the shared labels),
/// so row `i` still refers to the same example in all layers.
pub fn shuffle_stack(layers: &[LabeledEmbeddings], seed: u64) -> Result<Vec<LabeledEmbeddings>> {
    let Some(first) = layers.first() else {
        return Ok(Vec::new());
    };
    if layers.iter().any(|l| l.len() != first.len() || l.labels != first.labels) {
        return Err(Error::Inconsistent("layers of a stack must share rows and labels".into()));
    }
    let mut perm: Vec<usize> = (0..first.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(layers
        .iter()
        .map(|l| LabeledEmbeddings {
            features: l.features.select(ndarray::Axis(0), &perm),
            labels: perm.iter().map(|&r| l.labels[r]).collect(),
            ..l.clone()
        })
        .collect())
}

//! On-disk formats.
//!
//! SCDA1 matrix file, little-endian:
//!
//! | offset | size        | field                     |
//! |--------|-------------|---------------------------|
//! | 0      | 4           | magic `SCDA`              |
//! | 4      | 4           | version `u32` = 1         |
//! | 8      | 8           | rows `u64`                |
//! | 16     | 8           | dims `u64`                |
//! | 24     | rows*dims*4 | `f32` values, row-major   |
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write, so a
//! save/load round trip is exact for every `f32`-representable matrix.
//! Generated patches are; pooled and transformed embeddings are rounded
//! (relative error about 6e-8).
//!
//! The manifest is a JSON document; it references either one dataset-level
//! slide-embedding matrix (`embeddings`) or one patch matrix per slide
//! (`slides[].file`). Paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::embedding::{DatasetManifest, SlideBag};
use crate::error::{Result, ScdaError};
use crate::linalg::Matrix;

pub const MATRIX_MAGIC: [u8; 4] = *b"SCDA";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 {
        return Err(ScdaError::TruncatedFile { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MATRIX_MAGIC {
        return Err(ScdaError::BadMagic { expected: MATRIX_MAGIC, found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ScdaError::TruncatedFile { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(ScdaError::VersionMismatch(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dims = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| ScdaError::ShapeMismatch(format!("{rows}x{dims} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u64) < expected {
        return Err(ScdaError::TruncatedFile { expected, found: payload.len() as u64 });
    }
    if (payload.len() as u64) > expected {
        return Err(ScdaError::ShapeMismatch(format!(
            "{} trailing bytes after {rows}x{dims} payload",
            payload.len() as u64 - expected
        )));
    }
    let data = payload.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
    Matrix::from_vec(rows as usize, dims as usize, data)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| ScdaError::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ScdaError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| ScdaError::io(path, e))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_bytes(path, json.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| ScdaError::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    m.validate()?;
    Ok(m)
}

fn sibling(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

fn embeddings_file_name(manifest_path: &Path) -> String {
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    format!("{stem}.scda")
}

/// Writes the manifest plus a dataset-level slide-embedding matrix whose rows
/// follow `manifest.slides`.
pub fn save_embeddings(manifest_path: &Path, manifest: &DatasetManifest, embeddings: &Matrix) -> Result<()> {
    manifest.validate()?;
    if embeddings.rows() != manifest.slides.len() {
        return Err(ScdaError::DimensionMismatch { expected: manifest.slides.len(), found: embeddings.rows() });
    }
    let mut m = manifest.clone();
    let rel = embeddings_file_name(manifest_path);
    write_matrix(&sibling(manifest_path, &rel), embeddings)?;
    m.embeddings = Some(rel);
    write_manifest(manifest_path, &m)
}

pub fn load_embeddings(manifest_path: &Path) -> Result<(DatasetManifest, Matrix)> {
    let m = read_manifest(manifest_path)?;
    let rel = m.embeddings.clone().ok_or_else(|| {
        ScdaError::InvalidManifest(format!("{} does not reference an embeddings file", manifest_path.display()))
    })?;
    let z = read_matrix(&sibling(manifest_path, &rel))?;
    if z.rows() != m.slides.len() {
        return Err(ScdaError::DimensionMismatch { expected: m.slides.len(), found: z.rows() });
    }
    Ok((m, z))
}

/// Writes one patch matrix per slide under `bags/` next to the manifest.
pub fn save_bags(manifest_path: &Path, manifest: &DatasetManifest, bags: &[SlideBag]) -> Result<()> {
    manifest.validate()?;
    if bags.len() != manifest.slides.len() {
        return Err(ScdaError::DimensionMismatch { expected: manifest.slides.len(), found: bags.len() });
    }
    let dim = bags.first().map_or(0, |b| b.patches.cols());
    let mut m = manifest.clone();
    for (rec, bag) in m.slides.iter_mut().zip(bags) {
        if bag.slide_id != rec.id {
            return Err(ScdaError::InvalidManifest(format!(
                "bag `{}` out of order with manifest slide `{}`",
                bag.slide_id, rec.id
            )));
        }
        if bag.patches.cols() != dim {
            return Err(ScdaError::DimensionMismatch { expected: dim, found: bag.patches.cols() });
        }
        let rel = format!("bags/{}.scda", rec.id);
        write_matrix(&sibling(manifest_path, &rel), &bag.patches)?;
        rec.n_patches = bag.patches.rows();
        rec.file = Some(rel);
    }
    write_manifest(manifest_path, &m)
}

pub fn load_bags(manifest_path: &Path) -> Result<(DatasetManifest, Vec<SlideBag>)> {
    let m = read_manifest(manifest_path)?;
    let mut bags = Vec::with_capacity(m.slides.len());
    let mut dim = None;
    for (i, rec) in m.slides.iter().enumerate() {
        let rel = rec
            .file
            .as_ref()
            .ok_or_else(|| ScdaError::InvalidManifest(format!("slide `{}` has no patch file", rec.id)))?;
        let patches = read_matrix(&sibling(manifest_path, rel))?;
        if patches.rows() != rec.n_patches {
            return Err(ScdaError::DimensionMismatch { expected: rec.n_patches, found: patches.rows() });
        }
        match dim {
            None => dim = Some(patches.cols()),
            Some(d) if d != patches.cols() => {
                return Err(ScdaError::DimensionMismatch { expected: d, found: patches.cols() })
            }
            _ => {}
        }
        bags.push(SlideBag {
            slide_id: rec.id.clone(),
            center_id: rec.center.clone(),
            class_label: m.label(i),
            patches,
        });
    }
    Ok((m, bags))
}

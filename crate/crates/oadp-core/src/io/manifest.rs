//! JSON-lines dataset manifests: one record per image with its proposals and
//! ground-truth annotations. Image paths are resolved relative to the
//! manifest's directory and may point at a raw OADP-TENSORS file (entry
//! `image`) or a binary PPM.

use super::{container::TensorContainer, FormatError};
use crate::geometry::{BBox, Proposal};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image: String,
    /// `[width, height]`
    pub size: [u32; 2],
    #[serde(default)]
    pub proposals: Vec<Proposal>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, FormatError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|source| FormatError::Json { line: i + 1, source })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), FormatError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    super::atomic_write(path, out.as_bytes())
}

/// Resolves an entry's image path against the manifest location.
pub fn image_path(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.image);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Loads the image tensor for a manifest entry (`h x w x 3`).
pub fn load_image(manifest_path: &Path, entry: &ManifestEntry) -> Result<Tensor, FormatError> {
    let path = image_path(manifest_path, entry);
    let img = if path.extension().map(|e| e == "ppm").unwrap_or(false) {
        super::ppm::load_ppm(&path)?
    } else {
        let c = TensorContainer::load(&path)?;
        let e = c.get("image").ok_or_else(|| FormatError::MissingEntry("image".into()))?;
        Tensor::new(e.dims().to_vec(), e.as_f64())
            .map_err(|err| FormatError::Malformed(format!("image tensor: {err}")))?
    };
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(FormatError::Malformed(format!(
            "image must be h x w x 3, got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[0] as u32, img.shape()[1] as u32);
    if [entry.size[0], entry.size[1]] != [w, h] {
        return Err(FormatError::Malformed(format!(
            "manifest size {:?} disagrees with image {w}x{h}",
            entry.size
        )));
    }
    Ok(img)
}

/// Writes an image tensor as a single-entry container.
pub fn save_image(img: &Tensor, path: &Path) -> Result<(), FormatError> {
    let mut c = TensorContainer::new();
    c.insert_f64("image", img.shape().to_vec(), img.data().to_vec())?;
    c.save(path)
}

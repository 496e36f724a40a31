//! File formats tying the pipeline together: the OADP-TENSORS container,
//! JSON-lines dataset manifests, binary PPM images, and the run
//! configuration. All writers go through [`atomic_write`].

pub mod config;
pub mod container;
pub mod manifest;
pub mod ppm;

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not an OADP-TENSORS file")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("duplicate entry name '{0}'")]
    DuplicateName(String),
    #[error("missing entry '{0}'")]
    MissingEntry(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Writes bytes to a temporary sibling file and renames it over the target,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

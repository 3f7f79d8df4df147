//! On-disk formats: a JSON manifest next to a flat blob of little-endian
//! `f32` values (`<manifest stem>.bin`). All math downstream runs in `f64`.

mod checkpoint;
mod embeddings;
mod prompts;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use embeddings::{
    load_embedding_set, save_embedding_set, EmbeddingManifest, EmbeddingRecord, EmbeddingSet,
    GeneratorInfo, RecordEntry,
};
pub use prompts::{
    load_prompt_library, save_prompt_library, validate_prompt_file, PromptSummary,
};

pub const FORMAT_VERSION: u32 = 1;

/// Bytes per stored scalar.
pub const SCALAR_BYTES: usize = 4;

/// Path of the blob that accompanies `manifest`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_blob(manifest: &Path) -> Result<Vec<u8>> {
    let path = blob_path(manifest);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_blob(manifest: &Path, bytes: &[u8]) -> Result<()> {
    let path = blob_path(manifest);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn push_f32s<I: IntoIterator<Item = f64>>(buf: &mut Vec<u8>, values: I) {
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Decodes `count` scalars starting at `offset`. Returns `None` when the blob is too short.
pub(crate) fn decode_f32s(blob: &[u8], offset: u64, count: usize) -> Option<Vec<f64>> {
    let start = usize::try_from(offset).ok()?;
    let end = start.checked_add(count * SCALAR_BYTES)?;
    let bytes = blob.get(start..end)?;
    Some(
        bytes
            .chunks_exact(SCALAR_BYTES)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    )
}

/// Index of the first non-finite value, if any.
pub(crate) fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

//! File formats and persistence.
//!
//! - MRV1 volumes: `MRV1` magic, five little-endian `u32` header fields
//!   (x, y, z, channel count, labels flag), the channel grids as 32-bit
//!   floats in x-fastest order, then an optional `u16` label grid.
//! - Model files: versioned pretty-printed JSON of the whole forest.
//! - Dataset manifests: JSON listing volume paths with split tags.
//! - Prediction and graph-record files: line-delimited text, one record per
//!   line, with a `#`-prefixed header naming the format version.
//!
//! All writers go through a temp-file rename so a crash never leaves a
//! half-written artifact at the target path.

mod manifest;
mod mrv1;
mod records;

pub use manifest::{load_manifest, save_manifest, Manifest, ManifestEntry, Split};
pub use mrv1::{read_volume, write_volume};
pub use records::{
    graph_file_name, parse_prediction_line, prediction_file_name, write_graph_records,
    write_predictions, write_trial_log, PredictionLine, GRAPH_HEADER, PREDICTION_HEADER,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::{Forest, MODEL_FORMAT};

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp_path, path)?;
    Ok(())
}

/// Serializes the model as versioned pretty JSON.
pub fn save_model(path: &Path, forest: &Forest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(forest)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<Forest> {
    let bytes = fs::read(path)?;
    let forest: Forest = serde_json::from_slice(&bytes)?;
    if forest.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
            forest.format
        )));
    }
    Ok(forest)
}

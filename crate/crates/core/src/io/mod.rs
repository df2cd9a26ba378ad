//! On-disk formats and the command implementations behind the `losparse`
//! binary.

mod checkpoint;
mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{
    checkpoint_to_model, dir_size, load_checkpoint, load_model, model_to_checkpoint, quantize_model, read_manifest,
    save_checkpoint, save_model, Checkpoint, CheckpointManifest, ManifestEntry, MatrixKind, StoredMatrix,
    FORMAT_VERSION, MANIFEST_FILE,
};
pub use commands::{
    cmd_decompose, cmd_evaluate, cmd_report, cmd_spectrum, cmd_train, histogram_csv, DecomposeRow, ReportRow,
    RunSummary, SpectrumRow, TrainArtifacts, CHECKPOINT_DIR, HISTOGRAM_BINS, METRICS_FILE, PRETRAINED_DIR,
    SUMMARY_FILE,
};
pub use config::{OptimSection, RunConfig};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

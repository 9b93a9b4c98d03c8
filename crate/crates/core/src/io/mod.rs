//! On-disk formats: the DECT dataset file, checkpoint bundles and CSV logs.
//! Every multi-byte value is little-endian and every write goes through a
//! temporary file followed by a rename.

mod checkpoint;
mod dataset;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Bundle, Checkpoint};
pub use dataset::{read_dataset, write_dataset, DatasetFile, FLAG_LABEL, FLAG_MONO, MAGIC, VERSION};
pub use report::{
    aggregate_rows, read_csv, report_row, rows_for_fold, write_aggregate, write_csv, AggregateRow, CsvRow,
    AGGREGATE_HEADER, CSV_HEADER,
};

use crate::error::{Error, Result};

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

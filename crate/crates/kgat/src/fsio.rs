//! Atomic file writes shared by every artifact producer.
//!
//! Outputs are first written to a sibling temporary file and renamed into
//! place, so a crash mid-write never leaves a truncated artifact behind
//! and reruns are idempotent.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{KgatError, Result};

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| KgatError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| KgatError::io(&tmp, e))?;
    file.sync_all().map_err(|e| KgatError::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| KgatError::io(path, e))?;
    Ok(())
}

/// Read a whole file to a string with a path-tagged error.
pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KgatError::io(path, e))
}

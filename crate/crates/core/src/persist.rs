//! JSON artifact helpers shared by checkpoints and reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HdrmError, Result};

/// Writes `value` as pretty JSON. Floats round-trip exactly.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| HdrmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HdrmError::Serde(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| HdrmError::io(path, e))?;
    w.flush().map_err(|e| HdrmError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| HdrmError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| HdrmError::Serde(format!("{}: {e}", path.display())))
}

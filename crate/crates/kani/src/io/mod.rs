//! File formats: grids, stations, normalization statistics, checkpoints and
//! flat `key = value` configs.

mod checkpoint;
mod grid_file;
pub mod keyvalue;
mod stations;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use grid_file::{decode_field, encode_field, read_field, write_field};
pub use stations::{read_norm_stats, read_stations, write_norm_stats, write_stations};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

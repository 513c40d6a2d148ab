use std::path::Path;

use kani_core::grid::{grid_dims, BBox, GriddedField};

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

const MAGIC: &str = "NFGRID";
const VERSION: &str = "1";

/// Header lines followed by `f32` little-endian values, north row first.
pub fn encode_field(field: &GriddedField) -> Vec<u8> {
    let b = field.bbox();
    let header = format!(
        "{MAGIC} {VERSION}\nvar={}\ntime={}\nbbox={} {} {} {}\nres={}\nshape={} {}\n",
        field.variable(),
        field.time(),
        b.lat_min,
        b.lat_max,
        b.lon_min,
        b.lon_max,
        field.resolution(),
        field.rows(),
        field.cols()
    );
    let mut out = header.into_bytes();
    out.reserve(field.values().len() * 4);
    for &v in field.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path, line: usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&c| c == b'\n')
        .ok_or_else(|| Error::parse(path, line, "truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse(path, line, "header is not UTF-8"))
}

fn field_value<'a>(text: &'a str, key: &str, path: &Path, line: usize) -> Result<&'a str> {
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Error::parse(path, line, format!("expected `{key}=`")))
}

fn numbers<T: std::str::FromStr>(text: &str, n: usize, path: &Path, line: usize) -> Result<Vec<T>> {
    let v: Vec<T> = text
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::parse(path, line, format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} numbers")));
    }
    Ok(v)
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<GriddedField> {
    let mut pos = 0;
    let first = take_line(bytes, &mut pos, path, 1).map_err(|_| Error::BadMagic {
        path: path.to_path_buf(),
        found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
    })?;
    let mut parts = first.split_whitespace();
    let magic = parts.next().unwrap_or("");
    if magic != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), found: magic.to_string() });
    }
    let version = parts.next().unwrap_or("");
    if version != VERSION {
        return Err(Error::BadVersion { path: path.to_path_buf(), found: version.to_string() });
    }
    let var = field_value(take_line(bytes, &mut pos, path, 2)?, "var", path, 2)?.to_string();
    let time = field_value(take_line(bytes, &mut pos, path, 3)?, "time", path, 3)?;
    let time: i64 = time.trim().parse().map_err(|_| Error::parse(path, 3, "bad time"))?;
    let bbox: Vec<f64> = numbers(field_value(take_line(bytes, &mut pos, path, 4)?, "bbox", path, 4)?, 4, path, 4)?;
    let res: Vec<f64> = numbers(field_value(take_line(bytes, &mut pos, path, 5)?, "res", path, 5)?, 1, path, 5)?;
    let shape: Vec<usize> = numbers(field_value(take_line(bytes, &mut pos, path, 6)?, "shape", path, 6)?, 2, path, 6)?;
    let payload = &bytes[pos..];
    let expected = shape[0] * shape[1];
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::ShapeMismatch { path: path.to_path_buf(), expected, found: payload.len() / 4 });
    }
    let mut values = Vec::with_capacity(expected);
    for (index, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinitePayload { path: path.to_path_buf(), index });
        }
        values.push(v as f64);
    }
    let bbox = BBox::new(bbox[0], bbox[1], bbox[2], bbox[3])?;
    let (rows, cols) = grid_dims(&bbox, res[0])?;
    if (rows, cols) != (shape[0], shape[1]) {
        return Err(Error::ShapeMismatch { path: path.to_path_buf(), expected: rows * cols, found: expected });
    }
    Ok(GriddedField::new(bbox, res[0], var, time, values)?)
}

pub fn write_field(field: &GriddedField, path: &Path) -> Result<()> {
    write_bytes(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<GriddedField> {
    decode_field(&read_bytes(path)?, path)
}

use std::path::Path;

use kani_core::grid::{BBox, NormStats, Station, StationSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct StationRow {
    id: String,
    lat: f64,
    lon: f64,
    elev_m: f64,
    value: f64,
    time: i64,
}

#[derive(Serialize, Deserialize)]
struct StatsRow {
    variable: String,
    mean: f64,
    std: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    super::write_bytes(path, &bytes)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = super::read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// CSV with header `id,lat,lon,elev_m,value,time`.
pub fn write_stations(stations: &StationSet, path: &Path) -> Result<()> {
    write_rows(
        path,
        stations.stations().iter().map(|s| StationRow {
            id: s.id.clone(),
            lat: s.lat,
            lon: s.lon,
            elev_m: s.elevation,
            value: s.value,
            time: s.time,
        }),
    )
}

/// Reads stations and checks them against `bbox`; a station outside it is an
/// out-of-domain error naming its id.
pub fn read_stations(path: &Path, bbox: &BBox) -> Result<StationSet> {
    let rows: Vec<StationRow> = read_rows(path)?;
    let stations = rows
        .into_iter()
        .map(|r| Station { id: r.id, lat: r.lat, lon: r.lon, elevation: r.elev_m, value: r.value, time: r.time })
        .collect();
    Ok(StationSet::new(stations, bbox)?)
}

/// CSV with header `variable,mean,std`.
pub fn write_norm_stats(stats: &[NormStats], path: &Path) -> Result<()> {
    write_rows(
        path,
        stats.iter().map(|s| StatsRow { variable: s.variable().to_string(), mean: s.mean(), std: s.std() }),
    )
}

pub fn read_norm_stats(path: &Path) -> Result<Vec<NormStats>> {
    let rows: Vec<StatsRow> = read_rows(path)?;
    rows.into_iter().map(|r| Ok(NormStats::new(r.variable, r.mean, r.std)?)).collect()
}

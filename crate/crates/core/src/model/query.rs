//! Per-point inputs of the reconstructor.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{sample_bilinear, BBox, CoordinateGrid, GriddedField, NormStats, StationSet, TopographyGrid};

/// Which auxiliary channels are replaced by zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub disable_date: bool,
    pub disable_topo: bool,
    pub disable_resolution: bool,
}

impl Ablation {
    pub fn is_none(&self) -> bool {
        !(self.disable_date || self.disable_topo || self.disable_resolution)
    }
}

/// Coordinates, date, topography, resolution and state of every query point.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    /// `[N, 2]`: normalized latitude then longitude.
    pub coords: Vec<f64>,
    /// `[N, 4]`: sin/cos of hour of day, sin/cos of day of year.
    pub date: Vec<f64>,
    pub topo: Vec<f64>,
    pub resolution: Vec<f64>,
    pub state: Vec<f64>,
    pub is_station: Vec<bool>,
}

impl QueryBatch {
    pub fn empty() -> Self {
        QueryBatch {
            coords: Vec::new(),
            date: Vec::new(),
            topo: Vec::new(),
            resolution: Vec::new(),
            state: Vec::new(),
            is_station: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn n_stations(&self) -> usize {
        self.is_station.iter().filter(|s| **s).count()
    }

    pub fn n_grid(&self) -> usize {
        self.len() - self.n_stations()
    }

    fn push(&mut self, coords: (f64, f64), date: &[f64; 4], topo: f64, res: f64, state: f64, station: bool) {
        self.coords.extend_from_slice(&[coords.0, coords.1]);
        self.date.extend_from_slice(date);
        self.topo.push(topo);
        self.resolution.push(res);
        self.state.push(state);
        self.is_station.push(station);
    }

    pub fn append(&mut self, other: &QueryBatch) {
        self.coords.extend_from_slice(&other.coords);
        self.date.extend_from_slice(&other.date);
        self.topo.extend_from_slice(&other.topo);
        self.resolution.extend_from_slice(&other.resolution);
        self.state.extend_from_slice(&other.state);
        self.is_station.extend_from_slice(&other.is_station);
    }

    /// Rows in the order given by `rows`.
    pub fn select(&self, rows: &[usize]) -> QueryBatch {
        let mut out = QueryBatch::empty();
        for &i in rows {
            let d = [self.date[4 * i], self.date[4 * i + 1], self.date[4 * i + 2], self.date[4 * i + 3]];
            out.push(
                (self.coords[2 * i], self.coords[2 * i + 1]),
                &d,
                self.topo[i],
                self.resolution[i],
                self.state[i],
                self.is_station[i],
            );
        }
        out
    }

    /// Zeroes the disabled channels.
    pub fn apply_ablation(mut self, flags: &Ablation) -> QueryBatch {
        if flags.disable_date {
            self.date.iter_mut().for_each(|v| *v = 0.0);
        }
        if flags.disable_topo {
            self.topo.iter_mut().for_each(|v| *v = 0.0);
        }
        if flags.disable_resolution {
            self.resolution.iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    /// Canonical little-endian serialization, used to compare batches.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 10 * 8 + self.len());
        for v in self.coords.iter().chain(&self.date).chain(&self.topo).chain(&self.resolution).chain(&self.state) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.is_station.iter().map(|&s| s as u8));
        out
    }
}

/// Everything needed to turn physical inputs into normalized query channels.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub bbox: BBox,
    pub train_resolution: f64,
    pub value_stats: NormStats,
    pub elevation_stats: NormStats,
}

/// Resolution channel carried by grid queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridResolution {
    /// Point semantics: every cell is queried like a station.
    Zero,
    /// The query grid's own spacing.
    Native,
}

impl GridResolution {
    fn value(self, spacing: f64) -> f64 {
        match self {
            GridResolution::Zero => 0.0,
            GridResolution::Native => spacing,
        }
    }
}

/// What to reconstruct for one input field.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    /// The input grid itself.
    Correct(GridResolution),
    /// Another grid over the same box, usually finer.
    Downscale { grid: &'a CoordinateGrid, topo: &'a TopographyGrid, resolution: GridResolution },
    /// Arbitrary points with their elevations.
    Points { points: &'a [(f64, f64)], elevations: &'a [f64] },
}

/// `[sin, cos]` of the hour of day and of the day of year.
pub fn date_features(time: i64) -> [f64; 4] {
    let hour = time.rem_euclid(24) as f64;
    let day = time.div_euclid(24).rem_euclid(365) as f64;
    let a = 2.0 * PI * hour / 24.0;
    let b = 2.0 * PI * day / 365.0;
    [libm::sin(a), libm::cos(a), libm::sin(b), libm::cos(b)]
}

impl QueryContext {
    fn check_field(&self, field: &GriddedField) -> Result<()> {
        if field.bbox() != &self.bbox {
            return Err(Error::Grid("field box differs from the model's box".into()));
        }
        Ok(())
    }

    fn grid_rows(
        &self,
        out: &mut QueryBatch,
        field: &GriddedField,
        grid: &CoordinateGrid,
        elevation: &[f64],
        resolution: f64,
    ) {
        let date = date_features(field.time());
        let same = grid.rows() == field.rows()
            && grid.cols() == field.cols()
            && grid.bbox() == field.bbox()
            && libm::fabs(grid.resolution() - field.resolution()) < 1e-12;
        let points = grid.points();
        let state: Vec<f64> = if same { field.values().to_vec() } else { sample_bilinear(field, &points) };
        let res = resolution / self.train_resolution;
        for ((p, s), e) in points.iter().zip(state).zip(elevation) {
            out.push(
                self.bbox.normalized(p.0, p.1),
                &date,
                self.elevation_stats.normalize_value(*e),
                res,
                self.value_stats.normalize_value(s),
                false,
            );
        }
    }

    fn point_rows(&self, out: &mut QueryBatch, field: &GriddedField, points: &[(f64, f64)], elevations: &[f64], station: bool) {
        let date = date_features(field.time());
        let state = sample_bilinear(field, points);
        for ((p, s), e) in points.iter().zip(state).zip(elevations) {
            out.push(
                self.bbox.normalized(p.0, p.1),
                &date,
                self.elevation_stats.normalize_value(*e),
                0.0,
                self.value_stats.normalize_value(s),
                station,
            );
        }
    }

    /// Grid points of `field` at its own resolution followed by the stations.
    pub fn training_batch(&self, field: &GriddedField, stations: &StationSet, topo: &TopographyGrid) -> Result<QueryBatch> {
        self.check_field(field)?;
        let grid = field.coordinate_grid();
        let elev = topo.sample_on(&grid)?;
        let mut out = QueryBatch::empty();
        self.grid_rows(&mut out, field, &grid, &elev, field.resolution());
        self.point_rows(&mut out, field, &stations.points(), &stations.elevations(), true);
        Ok(out)
    }

    pub fn query_batch(&self, field: &GriddedField, topo: &TopographyGrid, query: Query<'_>) -> Result<QueryBatch> {
        self.check_field(field)?;
        let mut out = QueryBatch::empty();
        match query {
            Query::Correct(mode) => {
                let grid = field.coordinate_grid();
                let elev = topo.sample_on(&grid)?;
                self.grid_rows(&mut out, field, &grid, &elev, mode.value(field.resolution()));
            }
            Query::Downscale { grid, topo, resolution } => {
                if grid.bbox() != field.bbox() {
                    return Err(Error::Grid("downscale grid must cover the field's box".into()));
                }
                let elev = topo.sample_on(grid)?;
                self.grid_rows(&mut out, field, grid, &elev, resolution.value(grid.resolution()));
            }
            Query::Points { points, elevations } => {
                if points.len() != elevations.len() {
                    return Err(Error::shape("query_batch", &[points.len()], &[elevations.len()]));
                }
                self.point_rows(&mut out, field, points, elevations, true);
            }
        }
        Ok(out)
    }
}

/// Input field as a normalized `[1, rows, cols]` image.
pub fn field_image(field: &GriddedField, stats: &NormStats) -> crate::autodiff::Tensor {
    let data = field.values().iter().map(|&v| stats.normalize_value(v)).collect();
    crate::autodiff::Tensor::new(vec![1, field.rows(), field.cols()], data).expect("field shape")
}

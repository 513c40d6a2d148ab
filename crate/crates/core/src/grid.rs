//! Geographic grids, station sets, classical interpolation and normalization.
//!
//! Grids are cell-centered on a flat latitude/longitude rectangle. Row 0 is the
//! northernmost row and column 0 the westernmost column, so the center of cell
//! `(i, j)` sits at `lat_max - (i + 0.5) r`, `lon_min + (j + 0.5) r`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Tolerance on `span / resolution` being an integer.
const DIVISIBILITY_TOL: f64 = 1e-9;
/// Fractional indices this close to an integer are snapped onto it.
const SNAP_TOL: f64 = 1e-9;

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = BBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        if ![lat_min, lat_max, lon_min, lon_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Grid(format!("non-finite bounding box {b:?}")));
        }
        if lat_max <= lat_min || lon_max <= lon_min {
            return Err(Error::Grid(format!("empty bounding box {b:?}")));
        }
        Ok(b)
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    /// True when the point lies strictly inside the box.
    pub fn contains_strict(&self, lat: f64, lon: f64) -> bool {
        lat > self.lat_min && lat < self.lat_max && lon > self.lon_min && lon < self.lon_max
    }

    /// Shrinks the box by `margin` degrees on every side.
    pub fn shrink(&self, margin: f64) -> Result<BBox> {
        BBox::new(
            self.lat_min + margin,
            self.lat_max - margin,
            self.lon_min + margin,
            self.lon_max - margin,
        )
    }

    /// Maps a point to `[-1, 1]²` (latitude first).
    pub fn normalized(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            2.0 * (lat - self.lat_min) / self.lat_span() - 1.0,
            2.0 * (lon - self.lon_min) / self.lon_span() - 1.0,
        )
    }
}

/// Number of `(rows, cols)` cells needed to tile `bbox` at `resolution`.
pub fn grid_dims(bbox: &BBox, resolution: f64) -> Result<(usize, usize)> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::Grid(format!("resolution must be positive, got {resolution}")));
    }
    let count = |span: f64, axis: &str| -> Result<usize> {
        let ratio = span / resolution;
        let n = libm::round(ratio);
        if libm::fabs(ratio - n) > DIVISIBILITY_TOL {
            return Err(Error::Grid(format!(
                "resolution {resolution} does not divide the {axis} span {span} (ratio {ratio})"
            )));
        }
        if n < 2.0 {
            return Err(Error::Grid(format!(
                "{axis} span {span} at resolution {resolution} gives fewer than 2 cells"
            )));
        }
        Ok(n as usize)
    };
    Ok((count(bbox.lat_span(), "latitude")?, count(bbox.lon_span(), "longitude")?))
}

/// Cell-centered latitude/longitude coordinates of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    bbox: BBox,
    resolution: f64,
    rows: usize,
    cols: usize,
    lat: Vec<f64>,
    lon: Vec<f64>,
}

/// Builds the cell-centered coordinate grid tiling `bbox`.
pub fn make_coordinate_grid(bbox: BBox, resolution: f64) -> Result<CoordinateGrid> {
    let (rows, cols) = grid_dims(&bbox, resolution)?;
    let mut lat = Vec::with_capacity(rows * cols);
    let mut lon = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            lat.push(cell_lat(&bbox, resolution, i));
            lon.push(cell_lon(&bbox, resolution, j));
        }
    }
    Ok(CoordinateGrid {
        bbox,
        resolution,
        rows,
        cols,
        lat,
        lon,
    })
}

fn cell_lat(bbox: &BBox, resolution: f64, i: usize) -> f64 {
    bbox.lat_max - (i as f64 + 0.5) * resolution
}

fn cell_lon(bbox: &BBox, resolution: f64, j: usize) -> f64 {
    bbox.lon_min + (j as f64 + 0.5) * resolution
}

impl CoordinateGrid {
    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn lat(&self) -> &[f64] {
        &self.lat
    }
    pub fn lon(&self) -> &[f64] {
        &self.lon
    }
    /// `(lat, lon)` of the center of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.cols + j;
        (self.lat[k], self.lon[k])
    }
    /// All cell centers in row-major order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.lat.iter().copied().zip(self.lon.iter().copied()).collect()
    }
}

/// A scalar field on a cell-centered lat/lon grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    bbox: BBox,
    resolution: f64,
    variable: String,
    time: i64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GriddedField {
    /// Validates shape and finiteness. `values` is row-major, north to south.
    pub fn new(
        bbox: BBox,
        resolution: f64,
        variable: impl Into<String>,
        time: i64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let (rows, cols) = grid_dims(&bbox, resolution)?;
        if values.len() != rows * cols {
            return Err(Error::shape("GriddedField::new", &[rows, cols], &[values.len()]));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at flat index {k}")));
        }
        Ok(GriddedField {
            bbox,
            resolution,
            variable: variable.into(),
            time,
            rows,
            cols,
            values,
        })
    }

    /// Samples `f(lat, lon)` at every cell center of `grid`.
    pub fn from_fn(
        grid: &CoordinateGrid,
        variable: impl Into<String>,
        time: i64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let values = grid.points().into_iter().map(|(la, lo)| f(la, lo)).collect();
        GriddedField::new(grid.bbox, grid.resolution, variable, time, values)
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn variable(&self) -> &str {
        &self.variable
    }
    pub fn time(&self) -> i64 {
        self.time
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
    pub fn coordinate_grid(&self) -> CoordinateGrid {
        make_coordinate_grid(self.bbox, self.resolution).expect("validated at construction")
    }

    /// Same grid and metadata with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        GriddedField::new(self.bbox, self.resolution, self.variable.clone(), self.time, values)
    }

    /// Continuous row/column index of a point, clamped onto the hull of cell
    /// centers. The flag reports whether clamping happened.
    fn fractional_index(&self, lat: f64, lon: f64) -> (f64, f64, bool) {
        let fi = (self.bbox.lat_max - lat) / self.resolution - 0.5;
        let fj = (lon - self.bbox.lon_min) / self.resolution - 0.5;
        let max_i = (self.rows - 1) as f64;
        let max_j = (self.cols - 1) as f64;
        let outside = !(fi >= -SNAP_TOL && fi <= max_i + SNAP_TOL && fj >= -SNAP_TOL && fj <= max_j + SNAP_TOL);
        (snap(fi.clamp(0.0, max_i)), snap(fj.clamp(0.0, max_j)), outside)
    }
}

fn snap(x: f64) -> f64 {
    let r = libm::round(x);
    if libm::fabs(x - r) < SNAP_TOL {
        r
    } else {
        x
    }
}

/// A query point that fell outside the hull of cell centers and was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampWarning {
    pub index: usize,
    pub lat: f64,
    pub lon: f64,
}

/// Interpolated values plus any clamping that was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub values: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
}

/// Bilinear interpolation from the four surrounding cell centers.
pub fn bilinear_interp(field: &GriddedField, points: &[(f64, f64)]) -> Interpolated {
    let mut values = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    for (index, &(lat, lon)) in points.iter().enumerate() {
        let (fi, fj, clamped) = field.fractional_index(lat, lon);
        if clamped {
            warnings.push(ClampWarning { index, lat, lon });
        }
        values.push(bilinear_at(field, fi, fj));
    }
    Interpolated { values, warnings }
}

pub(crate) fn bilinear_at(field: &GriddedField, fi: f64, fj: f64) -> f64 {
    let i0 = (libm::floor(fi) as usize).min(field.rows - 2);
    let j0 = (libm::floor(fj) as usize).min(field.cols - 2);
    let t = fi - i0 as f64;
    let s = fj - j0 as f64;
    let v00 = field.get(i0, j0);
    let v01 = field.get(i0, j0 + 1);
    let v10 = field.get(i0 + 1, j0);
    let v11 = field.get(i0 + 1, j0 + 1);
    (1.0 - t) * ((1.0 - s) * v00 + s * v01) + t * ((1.0 - s) * v10 + s * v11)
}

/// Value of the nearest cell center; ties go to the smaller `(row, col)`.
pub fn nearest_interp(field: &GriddedField, points: &[(f64, f64)]) -> Interpolated {
    let mut values = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    for (index, &(lat, lon)) in points.iter().enumerate() {
        let (fi, fj, clamped) = field.fractional_index(lat, lon);
        if clamped {
            warnings.push(ClampWarning { index, lat, lon });
        }
        values.push(field.get(nearest_index(fi), nearest_index(fj)));
    }
    Interpolated { values, warnings }
}

fn nearest_index(f: f64) -> usize {
    let lo = libm::floor(f);
    let frac = f - lo;
    if frac <= 0.5 + SNAP_TOL {
        lo as usize
    } else {
        lo as usize + 1
    }
}

/// Bilinear sampling of a raster at arbitrary points, without the warning list.
pub fn sample_bilinear(field: &GriddedField, points: &[(f64, f64)]) -> Vec<f64> {
    bilinear_interp(field, points).values
}

/// Digital elevation model on a cell-centered grid (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct TopographyGrid(GriddedField);

impl TopographyGrid {
    pub const VARIABLE: &'static str = "elevation";

    pub fn new(bbox: BBox, resolution: f64, elevation: Vec<f64>) -> Result<Self> {
        Ok(TopographyGrid(GriddedField::new(bbox, resolution, Self::VARIABLE, 0, elevation)?))
    }

    pub fn from_field(field: GriddedField) -> Self {
        TopographyGrid(field)
    }

    pub fn field(&self) -> &GriddedField {
        &self.0
    }

    pub fn into_field(self) -> GriddedField {
        self.0
    }

    pub fn resolution(&self) -> f64 {
        self.0.resolution
    }

    pub fn bbox(&self) -> &BBox {
        &self.0.bbox
    }

    pub fn elevation(&self) -> &[f64] {
        &self.0.values
    }

    /// Elevation at the centers of `grid`: the DEM's own cells when the grids
    /// coincide, bilinear resampling otherwise.
    pub fn sample_on(&self, grid: &CoordinateGrid) -> Result<Vec<f64>> {
        self.check_coverage(grid.bbox())?;
        let same = grid.rows() == self.0.rows
            && grid.cols() == self.0.cols
            && libm::fabs(grid.resolution() - self.0.resolution) < 1e-12
            && grid.bbox() == &self.0.bbox;
        if same {
            Ok(self.0.values.clone())
        } else {
            Ok(sample_bilinear(&self.0, &grid.points()))
        }
    }

    /// Bilinear elevation at arbitrary points; they must lie inside the DEM box.
    pub fn sample_points(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        for &(lat, lon) in points {
            let b = &self.0.bbox;
            if !(lat >= b.lat_min && lat <= b.lat_max && lon >= b.lon_min && lon <= b.lon_max) {
                return Err(Error::Grid(format!(
                    "topography does not cover point ({lat}, {lon})"
                )));
            }
        }
        Ok(sample_bilinear(&self.0, points))
    }

    fn check_coverage(&self, bbox: &BBox) -> Result<()> {
        let b = &self.0.bbox;
        let eps = 1e-9;
        if bbox.lat_min < b.lat_min - eps
            || bbox.lat_max > b.lat_max + eps
            || bbox.lon_min < b.lon_min - eps
            || bbox.lon_max > b.lon_max + eps
        {
            return Err(Error::Grid(format!(
                "topography box {b:?} does not cover requested box {bbox:?}"
            )));
        }
        Ok(())
    }
}

/// One in-situ observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub elevation: f64,
    pub value: f64,
    pub time: i64,
}

/// Off-grid observations belonging to one field.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSet {
    stations: Vec<Station>,
}

impl StationSet {
    /// Checks non-emptiness, id uniqueness, finiteness and that every station
    /// lies strictly inside `bbox`.
    pub fn new(stations: Vec<Station>, bbox: &BBox) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::Config("a station set needs at least one station".to_string()));
        }
        let mut seen = BTreeSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate station id {}", s.id)));
            }
            if !bbox.contains_strict(s.lat, s.lon) {
                return Err(Error::OutOfDomain { id: s.id.clone() });
            }
            if !(s.elevation.is_finite() && s.value.is_finite()) {
                return Err(Error::NonFinite(format!("station {}", s.id)));
            }
        }
        Ok(StationSet { stations })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }
    pub fn len(&self) -> usize {
        self.stations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.stations.iter().map(|s| (s.lat, s.lon)).collect()
    }
    pub fn values(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.value).collect()
    }
    pub fn elevations(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.elevation).collect()
    }

    /// Keeps the stations for which `keep` returns true.
    pub fn filter(&self, bbox: &BBox, mut keep: impl FnMut(&Station) -> bool) -> Result<Self> {
        StationSet::new(self.stations.iter().filter(|s| keep(s)).cloned().collect(), bbox)
    }
}

/// Mean/standard-deviation pair used to standardize a variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    variable: String,
    mean: f64,
    std: f64,
}

impl NormStats {
    pub fn new(variable: impl Into<String>, mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::Config(format!(
                "normalization needs finite mean and std > 0, got mean {mean}, std {std}"
            )));
        }
        Ok(NormStats {
            variable: variable.into(),
            mean,
            std,
        })
    }

    /// Population mean and standard deviation of `values`.
    pub fn from_values(variable: impl Into<String>, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("cannot compute statistics of no values".to_string()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        NormStats::new(variable, mean, libm::sqrt(var))
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// `(v - mean) / std` element-wise.
pub fn normalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.normalize_value(v)).collect()
}

/// Inverse of [`normalize`].
pub fn denormalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.denormalize_value(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit_box(span: f64) -> BBox {
        BBox::new(0.0, span, 0.0, span).unwrap()
    }

    fn field_2x2(vals: [f64; 4]) -> GriddedField {
        GriddedField::new(unit_box(1.0), 0.5, "t", 0, vals.to_vec()).unwrap()
    }

    #[test]
    fn coordinate_grid_sizes() {
        let g = make_coordinate_grid(unit_box(10.0), 0.03125).unwrap();
        assert_eq!((g.rows(), g.cols()), (320, 320));
        let g = make_coordinate_grid(unit_box(10.0), 0.015625).unwrap();
        assert_eq!((g.rows(), g.cols()), (640, 640));
    }

    #[test]
    fn two_by_two_centers() {
        let g = make_coordinate_grid(unit_box(1.0), 0.5).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        // north-west cell first
        assert_eq!(g.center(0, 0), (0.75, 0.25));
        assert_eq!(g.center(1, 1), (0.25, 0.75));
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let err = make_coordinate_grid(unit_box(1.0), 0.3).unwrap_err();
        assert!(matches!(err, Error::Grid(ref m) if m.contains("does not divide")));
    }

    #[test]
    fn bilinear_centroid_of_four() {
        let f = field_2x2([1.0, 2.0, 3.0, 4.0]);
        let out = bilinear_interp(&f, &[(0.5, 0.5)]);
        assert_eq!(out.values, vec![2.5]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn exact_at_centers_and_constant() {
        let f = field_2x2([1.0, 2.0, 3.0, 4.0]);
        let centers = f.coordinate_grid().points();
        assert_eq!(bilinear_interp(&f, &centers).values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nearest_interp(&f, &centers).values, vec![1.0, 2.0, 3.0, 4.0]);
        let c = field_2x2([7.5; 4]);
        assert_eq!(bilinear_interp(&c, &[(0.4, 0.6), (0.3, 0.3)]).values, vec![7.5, 7.5]);
    }

    #[test]
    fn nearest_tie_breaks_to_smaller_index() {
        let f = field_2x2([1.0, 2.0, 3.0, 4.0]);
        // exactly between (0,0) at lon 0.25 and (0,1) at lon 0.75
        assert_eq!(nearest_interp(&f, &[(0.75, 0.5)]).values, vec![1.0]);
        assert_eq!(nearest_interp(&f, &[(0.7, 0.3)]).values, vec![1.0]);
        assert_eq!(nearest_interp(&f, &[(0.3, 0.7)]).values, vec![4.0]);
    }

    #[test]
    fn outside_hull_is_clamped_with_warning() {
        let f = field_2x2([1.0, 2.0, 3.0, 4.0]);
        let out = bilinear_interp(&f, &[(0.5, 0.5), (0.95, 0.05)]);
        assert_eq!(out.values[1], 1.0);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].index, 1);
    }

    #[test]
    fn normalization_examples() {
        let s = NormStats::new("t", 10.0, 2.0).unwrap();
        assert_eq!(normalize(&[10.0, 12.0], &s), vec![0.0, 1.0]);
        let v = [3.25, -1e3, 288.15];
        for (a, b) in v.iter().zip(denormalize(&normalize(&v, &s), &s)) {
            assert!(libm::fabs(a - b) <= 1e-6 * libm::fabs(*a));
        }
        assert!(NormStats::new("t", 0.0, 0.0).is_err());
        assert!(NormStats::new("t", 0.0, -1.0).is_err());
    }

    #[test]
    fn station_outside_bbox_names_id() {
        let b = unit_box(1.0);
        let st = |id: &str, lat| Station {
            id: id.into(),
            lat,
            lon: 0.5,
            elevation: 0.0,
            value: 1.0,
            time: 0,
        };
        let err = StationSet::new(vec![st("A", 0.5), st("B", 1.5)], &b).unwrap_err();
        assert_eq!(err, Error::OutOfDomain { id: "B".into() });
        assert!(StationSet::new(vec![st("A", 0.5), st("A", 0.6)], &b).is_err());
        assert!(StationSet::new(vec![], &b).is_err());
    }

    #[test]
    fn field_shape_checked() {
        let b = unit_box(1.0);
        assert!(GriddedField::new(b, 0.5, "t", 0, vec![0.0; 3]).is_err());
        assert!(GriddedField::new(b, 0.5, "t", 0, vec![0.0, 1.0, f64::NAN, 2.0]).is_err());
    }

    #[test]
    fn topography_resamples_when_grid_differs() {
        let b = unit_box(1.0);
        let dem = TopographyGrid::new(b, 0.5, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let same = make_coordinate_grid(b, 0.5).unwrap();
        assert_eq!(dem.sample_on(&same).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let fine = make_coordinate_grid(b, 0.25).unwrap();
        let v = dem.sample_on(&fine).unwrap();
        assert_eq!(v.len(), 16);
        let bigger = make_coordinate_grid(unit_box(2.0), 0.5).unwrap();
        assert!(dem.sample_on(&bigger).is_err());
    }
}

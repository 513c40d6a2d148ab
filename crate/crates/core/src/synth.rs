//! Seeded analytic scenarios: Gaussian-bump terrain, a smooth background
//! field, a lapse-rate term, a diurnal cycle, and a systematic bias that is a
//! deterministic function of terrain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{make_coordinate_grid, BBox, CoordinateGrid, GriddedField, NormStats, Station, StationSet, TopographyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableMode {
    /// `input = truth + bias`.
    AdditiveBias,
    /// `input = g·truth` with `g = 1.3 + 0.2·tanh(slope)`.
    MultiplicativeGust,
}

impl VariableMode {
    pub fn name(self) -> &'static str {
        match self {
            VariableMode::AdditiveBias => "additive_bias",
            VariableMode::MultiplicativeGust => "multiplicative_gust",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "additive_bias" => Ok(VariableMode::AdditiveBias),
            "multiplicative_gust" => Ok(VariableMode::MultiplicativeGust),
            _ => Err(Error::Config(format!("unknown variable mode {s}"))),
        }
    }
}

/// Everything that determines a scenario. Elevations are in meters, slopes in
/// kilometers of rise per degree.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub variable: String,
    pub bbox: BBox,
    pub resolution: f64,
    pub mode: VariableMode,
    pub n_bumps: usize,
    pub terrain_amp: (f64, f64),
    pub terrain_sigma: (f64, f64),
    pub smooth_bumps: usize,
    pub smooth_amp: f64,
    pub smooth_sigma: (f64, f64),
    pub baseline: f64,
    /// Units per km of elevation.
    pub lapse_rate: f64,
    /// `(b0, b1, b2)`: constant, per km of elevation, per unit slope.
    pub bias_coeffs: (f64, f64, f64),
    pub obs_noise_std: f64,
    pub diurnal_amp: f64,
    /// Gaussian blur of the input field in cells; 0 disables it.
    pub input_blur: f64,
}

impl SyntheticScenario {
    /// Smooth additive-bias temperature scenario on an 8°×8° box at 0.25°.
    pub fn desk(seed: u64) -> Self {
        SyntheticScenario {
            seed,
            variable: "t2m".into(),
            bbox: BBox { lat_min: 36.0, lat_max: 44.0, lon_min: -112.0, lon_max: -104.0 },
            resolution: 0.25,
            mode: VariableMode::AdditiveBias,
            n_bumps: 8,
            terrain_amp: (300.0, 1200.0),
            terrain_sigma: (1.0, 2.0),
            smooth_bumps: 6,
            smooth_amp: 3.0,
            smooth_sigma: (1.5, 3.0),
            baseline: 288.0,
            lapse_rate: -6.5,
            bias_coeffs: (0.8, 1.5, 1.0),
            obs_noise_std: 0.1,
            diurnal_amp: 4.0,
            input_blur: 0.0,
        }
    }

    /// Sharper terrain whose bias largely cancels the lapse rate, so the input
    /// field carries little of the terrain signal the stations see.
    pub fn terrain_bias(seed: u64) -> Self {
        SyntheticScenario {
            n_bumps: 14,
            terrain_amp: (300.0, 1500.0),
            terrain_sigma: (0.15, 0.4),
            bias_coeffs: (0.5, 5.0, 0.5),
            ..Self::desk(seed)
        }
    }

    /// Wind-like positive field observed through a terrain-dependent gust factor.
    pub fn gust(seed: u64) -> Self {
        SyntheticScenario {
            variable: "wind10m".into(),
            mode: VariableMode::MultiplicativeGust,
            terrain_sigma: (0.5, 1.2),
            smooth_amp: 1.5,
            baseline: 6.0,
            lapse_rate: 1.0,
            bias_coeffs: (0.0, 0.0, 0.0),
            diurnal_amp: 1.5,
            ..Self::desk(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "terrain_bias" => Ok(Self::terrain_bias(seed)),
            "gust" => Ok(Self::gust(seed)),
            _ => Err(Error::Config(format!("unknown scenario preset {name}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_range = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0 && r.1.is_finite();
        if !(self.obs_noise_std >= 0.0) {
            return Err(Error::Config("obs_noise_std must be non-negative".into()));
        }
        if self.n_bumps == 0 {
            return Err(Error::Config("n_bumps must be at least 1".into()));
        }
        if !positive_range(self.terrain_sigma) || !positive_range(self.smooth_sigma) {
            return Err(Error::Config("bump widths must be positive ranges".into()));
        }
        if !(self.terrain_amp.1 >= self.terrain_amp.0) || !(self.input_blur >= 0.0) {
            return Err(Error::Config("invalid terrain amplitude or blur".into()));
        }
        let finite = [
            self.smooth_amp,
            self.baseline,
            self.lapse_rate,
            self.bias_coeffs.0,
            self.bias_coeffs.1,
            self.bias_coeffs.2,
            self.diurnal_amp,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("scenario coefficients must be finite".into()));
        }
        crate::grid::grid_dims(&self.bbox, self.resolution)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub amp: f64,
    pub lat: f64,
    pub lon: f64,
    pub sigma: f64,
}

impl Bump {
    fn eval(&self, lat: f64, lon: f64) -> f64 {
        let (dy, dx) = (lat - self.lat, lon - self.lon);
        self.amp * libm::exp(-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma))
    }

    /// `(∂/∂lat, ∂/∂lon)`.
    fn grad(&self, lat: f64, lon: f64) -> (f64, f64) {
        let v = self.eval(lat, lon);
        let s2 = self.sigma * self.sigma;
        (-(lat - self.lat) / s2 * v, -(lon - self.lon) / s2 * v)
    }
}

/// Closed-form evaluators for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub scenario: SyntheticScenario,
    pub terrain: Vec<Bump>,
    pub smooth: Vec<Bump>,
}

/// Independent stream for a `(seed, a, b)` triple.
pub fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut x = seed;
    for v in [a, b] {
        x = splitmix(x ^ splitmix(v.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TERRAIN_STREAM: u64 = 1;
const SMOOTH_STREAM: u64 = 2;
const STATION_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

pub fn build_oracle(scenario: &SyntheticScenario) -> Result<Oracle> {
    scenario.validate()?;
    let b = &scenario.bbox;
    let mut rng = stream(scenario.seed, TERRAIN_STREAM, 0);
    let terrain = (0..scenario.n_bumps)
        .map(|_| Bump {
            amp: draw(&mut rng, scenario.terrain_amp),
            lat: rng.random_range(b.lat_min..b.lat_max),
            lon: rng.random_range(b.lon_min..b.lon_max),
            sigma: draw(&mut rng, scenario.terrain_sigma),
        })
        .collect();
    let mut rng = stream(scenario.seed, SMOOTH_STREAM, 0);
    let smooth = (0..scenario.smooth_bumps)
        .map(|_| Bump {
            amp: rng.random_range(-scenario.smooth_amp..=scenario.smooth_amp),
            lat: rng.random_range(b.lat_min..b.lat_max),
            lon: rng.random_range(b.lon_min..b.lon_max),
            sigma: draw(&mut rng, scenario.smooth_sigma),
        })
        .collect();
    Ok(Oracle { scenario: scenario.clone(), terrain, smooth })
}

impl Oracle {
    /// Elevation in meters.
    pub fn elev(&self, lat: f64, lon: f64) -> f64 {
        self.terrain.iter().map(|b| b.eval(lat, lon)).sum()
    }

    /// Gradient of elevation in meters per degree.
    pub fn elev_grad(&self, lat: f64, lon: f64) -> (f64, f64) {
        self.terrain.iter().fold((0.0, 0.0), |acc, b| {
            let g = b.grad(lat, lon);
            (acc.0 + g.0, acc.1 + g.1)
        })
    }

    /// Terrain slope in km of rise per degree.
    pub fn slope(&self, lat: f64, lon: f64) -> f64 {
        let (a, b) = self.elev_grad(lat, lon);
        libm::sqrt(a * a + b * b) / 1000.0
    }

    pub fn smooth_field(&self, lat: f64, lon: f64) -> f64 {
        self.smooth.iter().map(|b| b.eval(lat, lon)).sum()
    }

    pub fn y_true(&self, lat: f64, lon: f64, t: i64) -> f64 {
        let s = &self.scenario;
        s.baseline
            + s.diurnal_amp * libm::sin(2.0 * PI * t as f64 / 24.0)
            + self.smooth_field(lat, lon)
            + s.lapse_rate * self.elev(lat, lon) / 1000.0
    }

    pub fn bias(&self, lat: f64, lon: f64) -> f64 {
        let (b0, b1, b2) = self.scenario.bias_coeffs;
        b0 + b1 * self.elev(lat, lon) / 1000.0 + b2 * self.slope(lat, lon)
    }

    pub fn gust_factor(&self, lat: f64, lon: f64) -> f64 {
        1.3 + 0.2 * libm::tanh(self.slope(lat, lon))
    }

    /// The gridded model's value at a point, before any blur.
    pub fn input_value(&self, lat: f64, lon: f64, t: i64) -> f64 {
        let y = self.y_true(lat, lon, t);
        match self.scenario.mode {
            VariableMode::AdditiveBias => y + self.bias(lat, lon),
            VariableMode::MultiplicativeGust => self.gust_factor(lat, lon) * y,
        }
    }

    pub fn truth_field(&self, grid: &CoordinateGrid, t: i64) -> Result<GriddedField> {
        let values = grid.points().iter().map(|&(a, b)| self.y_true(a, b, t)).collect();
        GriddedField::new(*grid.bbox(), grid.resolution(), self.scenario.variable.clone(), t, values)
    }

    pub fn topography(&self, resolution: f64) -> Result<TopographyGrid> {
        let grid = make_coordinate_grid(self.scenario.bbox, resolution)?;
        let values = grid.points().iter().map(|&(a, b)| self.elev(a, b)).collect();
        TopographyGrid::new(self.scenario.bbox, resolution, values)
    }
}

/// One generated time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: GriddedField,
    pub truth: GriddedField,
    pub obs: StationSet,
}

/// A station site with its exact elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub elevation: f64,
}

pub fn generate_sample(oracle: &Oracle, grid: &CoordinateGrid, sites: &[Site], t: i64, sample_index: u64) -> Result<Sample> {
    let s = &oracle.scenario;
    let points = grid.points();
    let mut input: Vec<f64> = points.iter().map(|&(a, b)| oracle.input_value(a, b, t)).collect();
    if s.input_blur > 0.0 {
        input = gaussian_blur(&input, grid.rows(), grid.cols(), s.input_blur);
    }
    let input = GriddedField::new(*grid.bbox(), grid.resolution(), s.variable.clone(), t, input)?;
    let truth = oracle.truth_field(grid, t)?;
    let noise = if s.obs_noise_std > 0.0 {
        Some(Normal::new(0.0, s.obs_noise_std).map_err(|e| Error::Config(format!("{e}")))?)
    } else {
        None
    };
    let stations = sites
        .iter()
        .enumerate()
        .map(|(k, site)| {
            let eps = match &noise {
                Some(d) => d.sample(&mut stream(s.seed ^ NOISE_STREAM.rotate_left(48), sample_index, k as u64)),
                None => 0.0,
            };
            Station {
                id: site.id.clone(),
                lat: site.lat,
                lon: site.lon,
                elevation: site.elevation,
                value: oracle.y_true(site.lat, site.lon, t) + eps,
                time: t,
            }
        })
        .collect();
    let obs = StationSet::new(stations, grid.bbox())?;
    Ok(Sample { input, truth, obs })
}

/// Uniform sites inside the box shrunk by `margin_cells`, each at least
/// `0.1·resolution` away from every cell center.
pub fn sample_stations(oracle: &Oracle, n: usize, margin_cells: f64, resolution: f64) -> Result<Vec<Site>> {
    if n == 0 {
        return Err(Error::Config("need at least one station".into()));
    }
    let s = &oracle.scenario;
    let inner = s.bbox.shrink(margin_cells * resolution)?;
    let grid = make_coordinate_grid(s.bbox, resolution)?;
    let b = grid.bbox();
    let mut rng = stream(s.seed, STATION_STREAM, n as u64);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut found = None;
        for _ in 0..1000 {
            let lat = rng.random_range(inner.lat_min..inner.lat_max);
            let lon = rng.random_range(inner.lon_min..inner.lon_max);
            // nearest center along each axis
            let fi = libm::round((b.lat_max - lat) / resolution - 0.5).clamp(0.0, (grid.rows() - 1) as f64);
            let fj = libm::round((lon - b.lon_min) / resolution - 0.5).clamp(0.0, (grid.cols() - 1) as f64);
            let (clat, clon) = grid.center(fi as usize, fj as usize);
            let d = libm::sqrt((lat - clat) * (lat - clat) + (lon - clon) * (lon - clon));
            if d >= 0.1 * resolution && b.contains_strict(lat, lon) {
                found = Some((lat, lon));
                break;
            }
        }
        let (lat, lon) = found.ok_or_else(|| Error::Sampling(format!("station {k} could not be placed off-grid")))?;
        out.push(Site { id: format!("S{k:04}"), lat, lon, elevation: oracle.elev(lat, lon) });
    }
    Ok(out)
}

/// Separable Gaussian blur with edge clamping; `sigma` in cells.
pub fn gaussian_blur(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &[f64], along_cols: bool| {
        let mut out = vec![0.0; src.len()];
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for (o, k) in (-radius..=radius).zip(&kernel) {
                    let (ii, jj) = if along_cols {
                        (i as isize, (j as isize + o).clamp(0, cols as isize - 1))
                    } else {
                        ((i as isize + o).clamp(0, rows as isize - 1), j as isize)
                    };
                    acc += k * src[ii as usize * cols + jj as usize];
                }
                out[i * cols + j] = acc;
            }
        }
        out
    };
    let h = pass(values, true);
    pass(&h, false)
}

/// Contiguous train/val/test block sizes.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0)) || libm::fabs(a + b + c - 1.0) > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let train = libm::round(a * n as f64) as usize;
    let val = (libm::round(b * n as f64) as usize).min(n - train);
    Ok((train, val, n - train - val))
}

/// A complete generated dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub oracle: Oracle,
    pub sites: Vec<Site>,
    pub samples: Vec<Sample>,
    /// `(train, val, test)` block sizes, in time order.
    pub split: (usize, usize, usize),
    pub topography: TopographyGrid,
    pub value_stats: NormStats,
    pub elevation_stats: NormStats,
}

impl SyntheticDataset {
    /// Samples at `t = 0, 1, 2, …` hours split into contiguous blocks.
    /// Normalization statistics come from the training block only.
    pub fn generate(
        scenario: &SyntheticScenario,
        n_stations: usize,
        margin_cells: f64,
        n_samples: usize,
        fractions: (f64, f64, f64),
    ) -> Result<Self> {
        let split = split_counts(n_samples, fractions)?;
        if split.0 == 0 {
            return Err(Error::Config("the training split is empty".into()));
        }
        let oracle = build_oracle(scenario)?;
        let grid = make_coordinate_grid(scenario.bbox, scenario.resolution)?;
        let sites = sample_stations(&oracle, n_stations, margin_cells, scenario.resolution)?;
        let samples = (0..n_samples)
            .map(|i| generate_sample(&oracle, &grid, &sites, i as i64, i as u64))
            .collect::<Result<Vec<_>>>()?;
        let train_values: Vec<f64> = samples[..split.0].iter().flat_map(|s| s.input.values().iter().copied()).collect();
        let value_stats = NormStats::from_values(scenario.variable.clone(), &train_values)?;
        let topography = oracle.topography(scenario.resolution)?;
        let elevation_stats = NormStats::from_values(TopographyGrid::VARIABLE, topography.elevation())?;
        Ok(SyntheticDataset { oracle, sites, samples, split, topography, value_stats, elevation_stats })
    }

    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.split.0]
    }

    pub fn val(&self) -> &[Sample] {
        &self.samples[self.split.0..self.split.0 + self.split.1]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.split.0 + self.split.1..]
    }
}

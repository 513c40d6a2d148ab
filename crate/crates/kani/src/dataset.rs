//! Synthetic datasets on disk: grid and station files plus a JSON manifest.

use std::path::Path;

use kani_core::grid::{make_coordinate_grid, BBox, GriddedField, NormStats, StationSet, TopographyGrid};
use kani_core::model::QueryContext;
use kani_core::synth::{build_oracle, Oracle, Sample, SyntheticDataset, SyntheticScenario, VariableMode};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::io::{read_field, read_stations, write_field, write_norm_stats, write_stations};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "kani-dataset 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub seed: u64,
    pub variable: String,
    /// `[lat_min, lat_max, lon_min, lon_max]`.
    pub bbox: [f64; 4],
    pub resolution: f64,
    pub mode: String,
    pub n_bumps: usize,
    pub terrain_amp: [f64; 2],
    pub terrain_sigma: [f64; 2],
    pub smooth_bumps: usize,
    pub smooth_amp: f64,
    pub smooth_sigma: [f64; 2],
    pub baseline: f64,
    pub lapse_rate: f64,
    pub bias_coeffs: [f64; 3],
    pub obs_noise_std: f64,
    pub diurnal_amp: f64,
    pub input_blur: f64,
}

impl From<&SyntheticScenario> for ScenarioRecord {
    fn from(s: &SyntheticScenario) -> Self {
        ScenarioRecord {
            seed: s.seed,
            variable: s.variable.clone(),
            bbox: [s.bbox.lat_min, s.bbox.lat_max, s.bbox.lon_min, s.bbox.lon_max],
            resolution: s.resolution,
            mode: s.mode.name().to_string(),
            n_bumps: s.n_bumps,
            terrain_amp: [s.terrain_amp.0, s.terrain_amp.1],
            terrain_sigma: [s.terrain_sigma.0, s.terrain_sigma.1],
            smooth_bumps: s.smooth_bumps,
            smooth_amp: s.smooth_amp,
            smooth_sigma: [s.smooth_sigma.0, s.smooth_sigma.1],
            baseline: s.baseline,
            lapse_rate: s.lapse_rate,
            bias_coeffs: s.bias_coeffs.into(),
            obs_noise_std: s.obs_noise_std,
            diurnal_amp: s.diurnal_amp,
            input_blur: s.input_blur,
        }
    }
}

impl ScenarioRecord {
    pub fn to_scenario(&self) -> Result<SyntheticScenario> {
        let b = self.bbox;
        let s = SyntheticScenario {
            seed: self.seed,
            variable: self.variable.clone(),
            bbox: BBox::new(b[0], b[1], b[2], b[3])?,
            resolution: self.resolution,
            mode: VariableMode::parse(&self.mode)?,
            n_bumps: self.n_bumps,
            terrain_amp: self.terrain_amp.into(),
            terrain_sigma: self.terrain_sigma.into(),
            smooth_bumps: self.smooth_bumps,
            smooth_amp: self.smooth_amp,
            smooth_sigma: self.smooth_sigma.into(),
            baseline: self.baseline,
            lapse_rate: self.lapse_rate,
            bias_coeffs: self.bias_coeffs.into(),
            obs_noise_std: self.obs_noise_std,
            diurnal_amp: self.diurnal_amp,
            input_blur: self.input_blur,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub variable: String,
    pub mean: f64,
    pub std: f64,
}

impl From<&NormStats> for StatsRecord {
    fn from(s: &NormStats) -> Self {
        StatsRecord { variable: s.variable().to_string(), mean: s.mean(), std: s.std() }
    }
}

impl StatsRecord {
    fn to_stats(&self) -> Result<NormStats> {
        Ok(NormStats::new(self.variable.clone(), self.mean, self.std)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub time: i64,
    pub split: String,
    pub input: String,
    pub truth: String,
    pub stations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemRecord {
    pub resolution: f64,
    pub path: String,
}

/// `[start, end)` sample ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub scenario: ScenarioRecord,
    pub n_stations: usize,
    pub split: SplitRecord,
    pub value_stats: StatsRecord,
    pub elevation_stats: StatsRecord,
    pub norm_stats: String,
    pub dems: Vec<DemRecord>,
    pub samples: Vec<SampleRecord>,
}

/// Which block of the temporal split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s}"))),
        }
    }
}

/// DEM resolutions written with every dataset: r, r/2 and r/4.
pub const DEM_FACTORS: [u32; 3] = [1, 2, 4];

/// Generates the dataset described by `cfg` and writes it under `out`.
pub fn generate_dataset(cfg: &ScenarioConfig, out: &Path) -> Result<Manifest> {
    let ds = SyntheticDataset::generate(&cfg.scenario, cfg.n_stations, cfg.margin_cells, cfg.n_samples, cfg.fractions)?;
    let r = cfg.scenario.resolution;
    let mut dems = Vec::new();
    for f in DEM_FACTORS {
        let res = r / f as f64;
        let path = format!("dem/dem_x{f}.nfgrid");
        write_field(ds.oracle.topography(res)?.field(), &out.join(&path))?;
        dems.push(DemRecord { resolution: res, path });
    }
    let (a, b, _) = ds.split;
    let mut samples = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let split = if i < a {
            Split::Train
        } else if i < a + b {
            Split::Val
        } else {
            Split::Test
        };
        let rec = SampleRecord {
            index: i,
            time: s.input.time(),
            split: split.name().into(),
            input: format!("fields/input_{i:05}.nfgrid"),
            truth: format!("fields/truth_{i:05}.nfgrid"),
            stations: format!("stations/obs_{i:05}.csv"),
        };
        write_field(&s.input, &out.join(&rec.input))?;
        write_field(&s.truth, &out.join(&rec.truth))?;
        write_stations(&s.obs, &out.join(&rec.stations))?;
        samples.push(rec);
    }
    let norm_stats = "norm_stats.csv".to_string();
    write_norm_stats(&[ds.value_stats.clone(), ds.elevation_stats.clone()], &out.join(&norm_stats))?;
    let manifest = Manifest {
        format: FORMAT.into(),
        scenario: (&cfg.scenario).into(),
        n_stations: cfg.n_stations,
        split: SplitRecord { train: [0, a], val: [a, a + b], test: [a + b, ds.samples.len()] },
        value_stats: (&ds.value_stats).into(),
        elevation_stats: (&ds.elevation_stats).into(),
        norm_stats,
        dems,
        samples,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    crate::io::write_bytes(&out.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

/// A dataset in memory, from disk or straight from the generator.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenario: SyntheticScenario,
    pub ctx: QueryContext,
    /// DEMs from the training resolution downwards.
    pub dems: Vec<TopographyGrid>,
    pub samples: Vec<Sample>,
    pub split: (usize, usize, usize),
}

impl Dataset {
    pub fn from_synthetic(ds: &SyntheticDataset) -> Result<Self> {
        let r = ds.oracle.scenario.resolution;
        let dems = DEM_FACTORS.iter().map(|&f| ds.oracle.topography(r / f as f64)).collect::<Result<_, _>>()?;
        Ok(Dataset {
            scenario: ds.oracle.scenario.clone(),
            ctx: QueryContext {
                bbox: ds.oracle.scenario.bbox,
                train_resolution: r,
                value_stats: ds.value_stats.clone(),
                elevation_stats: ds.elevation_stats.clone(),
            },
            dems,
            samples: ds.samples.clone(),
            split: ds.split,
        })
    }

    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        let ds = SyntheticDataset::generate(&cfg.scenario, cfg.n_stations, cfg.margin_cells, cfg.n_samples, cfg.fractions)?;
        Self::from_synthetic(&ds)
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT {
            return Err(Error::BadVersion { path, found: m.format });
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = Self::read_manifest(dir)?;
        let scenario = m.scenario.to_scenario()?;
        let mut dems = Vec::with_capacity(m.dems.len());
        for d in &m.dems {
            dems.push(TopographyGrid::from_field(read_field(&dir.join(&d.path))?));
        }
        dems.sort_by(|a, b| b.resolution().total_cmp(&a.resolution()));
        if dems.first().map(|d| d.resolution()) != Some(scenario.resolution) {
            return Err(Error::Config("manifest lacks a DEM at the training resolution".into()));
        }
        let mut samples = Vec::with_capacity(m.samples.len());
        for rec in &m.samples {
            let input: GriddedField = read_field(&dir.join(&rec.input))?;
            let truth = read_field(&dir.join(&rec.truth))?;
            let obs: StationSet = read_stations(&dir.join(&rec.stations), &scenario.bbox)?;
            samples.push(Sample { input, truth, obs });
        }
        let s = &m.split;
        if s.train[0] != 0 || s.train[1] != s.val[0] || s.val[1] != s.test[0] || s.test[1] != samples.len() {
            return Err(Error::Config("manifest split does not tile the samples".into()));
        }
        Ok(Dataset {
            ctx: QueryContext {
                bbox: scenario.bbox,
                train_resolution: scenario.resolution,
                value_stats: m.value_stats.to_stats()?,
                elevation_stats: m.elevation_stats.to_stats()?,
            },
            scenario,
            dems,
            samples,
            split: (s.train[1], s.val[1] - s.val[0], s.test[1] - s.test[0]),
        })
    }

    pub fn variable(&self) -> &str {
        &self.scenario.variable
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        let (a, b, _) = self.split;
        match split {
            Split::Train => &self.samples[..a],
            Split::Val => &self.samples[a..a + b],
            Split::Test => &self.samples[a + b..],
        }
    }

    /// DEM at the training resolution.
    pub fn topography(&self) -> &TopographyGrid {
        &self.dems[0]
    }

    /// DEM at `resolution`: a stored one when available, otherwise bilinear
    /// from the finest stored DEM.
    pub fn topography_at(&self, resolution: f64) -> Result<TopographyGrid> {
        if let Some(d) = self.dems.iter().find(|d| (d.resolution() - resolution).abs() < 1e-12) {
            return Ok(d.clone());
        }
        let finest = self.dems.last().expect("at least one DEM");
        let grid = make_coordinate_grid(self.ctx.bbox, resolution)?;
        Ok(TopographyGrid::new(self.ctx.bbox, resolution, finest.sample_on(&grid)?)?)
    }

    pub fn oracle(&self) -> Result<Oracle> {
        Ok(build_oracle(&self.scenario)?)
    }
}

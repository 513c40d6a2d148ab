//! Model, training and scenario settings as flat `key = value` files.
//!
//! A run config holds the model keys (named after the `ModelConfig` fields,
//! with `spline_degree`/`spline_grid_size` for the spline and the ablation
//! flags spelled out) and the training keys in one file.

use std::fmt::Write as _;
use std::path::Path;

use kani_core::grid::BBox;
use kani_core::kan::SplineConfig;
use kani_core::model::{Ablation, ModelConfig, Variant};
use kani_core::synth::{SyntheticScenario, VariableMode};
use kani_core::train::TrainConfig;

use crate::error::{Error, Result};
use crate::io::keyvalue::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::default(), train: TrainConfig::desk(), init_seed: 0 }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn model_to_text(m: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "variant = {}", m.variant.name());
    let _ = writeln!(s, "embed_dim = {}", m.embed_dim);
    let _ = writeln!(s, "hidden_dim = {}", m.hidden_dim);
    let _ = writeln!(s, "out_dim = {}", m.out_dim);
    let _ = writeln!(s, "reduce_dim = {}", m.reduce_dim);
    let _ = writeln!(s, "kan_layers = {}", m.kan_layers);
    let _ = writeln!(s, "mlp_width = {}", m.mlp_width);
    let _ = writeln!(s, "encoder_channels = {}", join(&m.encoder_channels));
    let _ = writeln!(s, "feature_channels = {}", m.feature_channels);
    let _ = writeln!(s, "spline_degree = {}", m.spline.degree);
    let _ = writeln!(s, "spline_grid_size = {}", m.spline.grid_size);
    let _ = writeln!(s, "grid_rows = {}", m.grid_rows);
    let _ = writeln!(s, "grid_cols = {}", m.grid_cols);
    let _ = writeln!(s, "zero_init_head = {}", m.zero_init_head);
    let _ = writeln!(s, "disable_date = {}", m.ablation.disable_date);
    let _ = writeln!(s, "disable_topo = {}", m.ablation.disable_topo);
    let _ = writeln!(s, "disable_resolution = {}", m.ablation.disable_resolution);
    s
}

pub fn train_to_text(t: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "epochs = {}", t.epochs);
    let _ = writeln!(s, "base_lr = {:e}", t.base_lr);
    let _ = writeln!(s, "beta1 = {}", t.beta1);
    let _ = writeln!(s, "beta2 = {}", t.beta2);
    let _ = writeln!(s, "milestones = {}", join(&t.milestones));
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "seed = {}", t.seed);
    let _ = writeln!(s, "lambda_grid = {}", t.lambda_grid);
    let _ = writeln!(s, "lambda_station = {}", t.lambda_station);
    s
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        format!("{}{}init_seed = {}\n", model_to_text(&self.model), train_to_text(&self.train), self.init_seed)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text, path)?;
        let model = take_model(&mut kv)?;
        let mut train = TrainConfig::desk();
        let epochs_given = kv.take::<usize>("epochs")?;
        if let Some(e) = epochs_given {
            train.epochs = e;
            train.milestones = TrainConfig::scaled_milestones(e);
        }
        if let Some(v) = kv.take("base_lr")? {
            train.base_lr = v;
        }
        if let Some(v) = kv.take("beta1")? {
            train.beta1 = v;
        }
        if let Some(v) = kv.take("beta2")? {
            train.beta2 = v;
        }
        if let Some(v) = kv.take_list("milestones")? {
            train.milestones = v;
        }
        if let Some(v) = kv.take("batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = kv.take("seed")? {
            train.seed = v;
        }
        if let Some(v) = kv.take("lambda_grid")? {
            train.lambda_grid = v;
        }
        if let Some(v) = kv.take("lambda_station")? {
            train.lambda_station = v;
        }
        let init_seed = kv.take("init_seed")?.unwrap_or(0);
        kv.finish()?;
        train.ablation = model.ablation;
        model.validate()?;
        train.validate()?;
        Ok(RunConfig { model, train, init_seed })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn take_model(kv: &mut KeyValues) -> Result<ModelConfig> {
    let mut m = ModelConfig::default();
    if let Some(v) = kv.take::<String>("variant")? {
        m.variant = Variant::parse(&v)?;
    }
    macro_rules! field {
        ($($name:ident),*) => {$(
            if let Some(v) = kv.take(stringify!($name))? {
                m.$name = v;
            }
        )*};
    }
    field!(embed_dim, hidden_dim, out_dim, reduce_dim, kan_layers, mlp_width, feature_channels, grid_rows, grid_cols, zero_init_head);
    if let Some(v) = kv.take_list::<usize>("encoder_channels")? {
        m.encoder_channels = v
            .try_into()
            .map_err(|_| Error::Config("encoder_channels needs exactly 4 values".into()))?;
    }
    let degree = kv.take("spline_degree")?.unwrap_or(m.spline.degree);
    let grid_size = kv.take("spline_grid_size")?.unwrap_or(m.spline.grid_size);
    m.spline = SplineConfig::new(degree, grid_size)?;
    m.ablation = Ablation {
        disable_date: kv.take("disable_date")?.unwrap_or(false),
        disable_topo: kv.take("disable_topo")?.unwrap_or(false),
        disable_resolution: kv.take("disable_resolution")?.unwrap_or(false),
    };
    Ok(m)
}

/// Reads a model-only config file, as written next to checkpoints.
pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let mut kv = KeyValues::read(path)?;
    let m = take_model(&mut kv)?;
    kv.finish()?;
    m.validate()?;
    Ok(m)
}

/// A scenario preset with optional overrides, plus the dataset layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub preset: String,
    pub scenario: SyntheticScenario,
    pub n_samples: usize,
    pub n_stations: usize,
    pub margin_cells: f64,
    pub fractions: (f64, f64, f64),
}

impl ScenarioConfig {
    /// Desk-scale sizes for `preset`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(ScenarioConfig {
            preset: name.to_string(),
            scenario: SyntheticScenario::preset(name, seed)?,
            n_samples: 1408,
            n_stations: 40,
            margin_cells: 1.0,
            fractions: (1024.0 / 1408.0, 128.0 / 1408.0, 256.0 / 1408.0),
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text, path)?;
        let preset: String = kv.take("preset")?.unwrap_or_else(|| "desk".into());
        let seed = kv.take("seed")?.unwrap_or(0);
        let mut c = ScenarioConfig::preset(&preset, seed)?;
        if let Some(v) = kv.take("n_samples")? {
            c.n_samples = v;
        }
        if let Some(v) = kv.take("n_stations")? {
            c.n_stations = v;
        }
        if let Some(v) = kv.take("margin_cells")? {
            c.margin_cells = v;
        }
        if let Some(v) = kv.take_list::<f64>("split_fractions")? {
            if v.len() != 3 {
                return Err(Error::Config("split_fractions needs 3 values".into()));
            }
            c.fractions = (v[0], v[1], v[2]);
        }
        let s = &mut c.scenario;
        if let Some(v) = kv.take("variable")? {
            s.variable = v;
        }
        if let Some(v) = kv.take_list::<f64>("bbox")? {
            if v.len() != 4 {
                return Err(Error::Config("bbox needs lat_min lat_max lon_min lon_max".into()));
            }
            s.bbox = BBox::new(v[0], v[1], v[2], v[3])?;
        }
        if let Some(v) = kv.take::<String>("mode")? {
            s.mode = VariableMode::parse(&v)?;
        }
        macro_rules! field {
            ($($name:ident),*) => {$(
                if let Some(v) = kv.take(stringify!($name))? {
                    s.$name = v;
                }
            )*};
        }
        field!(resolution, n_bumps, smooth_bumps, smooth_amp, baseline, lapse_rate, obs_noise_std, diurnal_amp, input_blur);
        let pair = |v: Vec<f64>, key: &str| -> Result<(f64, f64)> {
            match v[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Error::Config(format!("{key} needs 2 values"))),
            }
        };
        if let Some(v) = kv.take_list("terrain_amp")? {
            s.terrain_amp = pair(v, "terrain_amp")?;
        }
        if let Some(v) = kv.take_list("terrain_sigma")? {
            s.terrain_sigma = pair(v, "terrain_sigma")?;
        }
        if let Some(v) = kv.take_list("smooth_sigma")? {
            s.smooth_sigma = pair(v, "smooth_sigma")?;
        }
        if let Some(v) = kv.take_list::<f64>("bias_coeffs")? {
            if v.len() != 3 {
                return Err(Error::Config("bias_coeffs needs b0 b1 b2".into()));
            }
            s.bias_coeffs = (v[0], v[1], v[2]);
        }
        kv.finish()?;
        c.scenario.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

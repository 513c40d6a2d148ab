//! The hypernetwork field reconstructor and its baselines.
//!
//! A convolutional encoder turns the input field into a feature map, a
//! generator turns the features into the weights of two per-point dense
//! layers, and a reconstructor maps each query point's embedded inputs to a
//! correction that is added to the point's interpolated state.

mod params;
mod query;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::{GriddedField, TopographyGrid};
use crate::kan::{kan_layer, kan_param_count, SplineConfig};

pub use params::{Leaves, ParamStore};
pub use query::{
    date_features, field_image, Ablation, GridResolution, Query, QueryBatch, QueryContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Kani,
    HyperMlp,
    PureMlp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Kani => "kani",
            Variant::HyperMlp => "hyper_mlp",
            Variant::PureMlp => "pure_mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kani" => Ok(Variant::Kani),
            "hyper_mlp" => Ok(Variant::HyperMlp),
            "pure_mlp" => Ok(Variant::PureMlp),
            _ => Err(Error::Config(format!("unknown variant {s}"))),
        }
    }

    pub fn uses_encoder(self) -> bool {
        self != Variant::PureMlp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding width `C`.
    pub embed_dim: usize,
    /// Width `H` of the first generated layer.
    pub hidden_dim: usize,
    /// Width `C′` of the second generated layer.
    pub out_dim: usize,
    /// Width `C″` of the KAN stack.
    pub reduce_dim: usize,
    pub kan_layers: usize,
    /// Width of the dense baseline layers.
    pub mlp_width: usize,
    pub encoder_channels: [usize; 4],
    /// Feature channels `c` of the encoder output.
    pub feature_channels: usize,
    pub spline: SplineConfig,
    /// Input field size; the generator depends on it through `d`.
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub zero_init_head: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Kani,
            embed_dim: 64,
            hidden_dim: 128,
            out_dim: 128,
            reduce_dim: 32,
            kan_layers: 2,
            mlp_width: 128,
            encoder_channels: [16, 32, 64, 128],
            feature_channels: 128,
            spline: SplineConfig::default(),
            grid_rows: 32,
            grid_cols: 32,
            zero_init_head: true,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.hidden_dim,
            self.out_dim,
            self.reduce_dim,
            self.mlp_width,
            self.feature_channels,
        ];
        if dims.iter().chain(&self.encoder_channels).any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be at least 1".into()));
        }
        if self.grid_rows % 16 != 0 || self.grid_cols % 16 != 0 || self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Config(format!(
                "field size {}x{} is not divisible by 16",
                self.grid_rows, self.grid_cols
            )));
        }
        self.spline.validate()
    }

    /// Spatial size `d` of the flattened feature map.
    pub fn feature_len(&self) -> usize {
        (self.grid_rows / 16) * (self.grid_cols / 16)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn dense_slots(out: &mut Vec<Slot>, name: &str, fan_in: usize, fan_out: usize, zero: bool) {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let init = if zero { Init::Zeros } else { Init::Uniform(bound) };
    out.push(Slot { name: format!("{name}.w"), shape: vec![fan_out, fan_in], init });
    out.push(Slot { name: format!("{name}.b"), shape: vec![fan_out], init });
}

fn conv_slots(out: &mut Vec<Slot>, name: &str, cin: usize, cout: usize, k: usize) {
    // He-uniform for convolutions followed by relu.
    let fan_in = cin * k * k;
    out.push(Slot {
        name: format!("{name}.w"),
        shape: vec![cout, cin, k, k],
        init: Init::Uniform(libm::sqrt(6.0 / fan_in as f64)),
    });
    out.push(Slot { name: format!("{name}.b"), shape: vec![cout], init: Init::Zeros });
}

const EMBEDDINGS: [(&str, usize); 5] = [("coords", 2), ("date", 4), ("topo", 1), ("res", 1), ("state", 1)];

fn layout(cfg: &ModelConfig) -> Vec<Slot> {
    let mut s = Vec::new();
    let ch = cfg.encoder_channels;
    let c = cfg.feature_channels;
    let d = cfg.feature_len();
    if cfg.variant.uses_encoder() {
        conv_slots(&mut s, "enc.stem", 1, ch[0], 3);
        let mut prev = ch[0];
        for (i, &co) in ch.iter().enumerate() {
            conv_slots(&mut s, &format!("enc.down{i}.a"), prev, co, 3);
            conv_slots(&mut s, &format!("enc.down{i}.b"), co, co, 3);
            prev = co;
        }
        conv_slots(&mut s, "enc.tap", ch[3] + ch[2], c, 3);
        let bound = 1.0 / libm::sqrt(c as f64);
        s.push(Slot { name: "enc.head.w".into(), shape: vec![c, c, 1, 1], init: Init::Uniform(bound) });
        s.push(Slot { name: "enc.head.b".into(), shape: vec![c], init: Init::Zeros });

        for (name, rows, cols) in [("gen.w1", cfg.hidden_dim, cfg.embed_dim), ("gen.w2", cfg.out_dim, cfg.hidden_dim)] {
            s.push(Slot {
                name: format!("{name}.conv.w"),
                shape: vec![rows, c, 3],
                init: Init::Uniform(libm::sqrt(6.0 / (3 * c) as f64)),
            });
            dense_slots(&mut s, &format!("{name}.dense"), d, cols, false);
        }
    }
    for (name, width) in EMBEDDINGS {
        dense_slots(&mut s, &format!("emb.{name}"), width, cfg.embed_dim, false);
    }
    let zero = cfg.zero_init_head;
    match cfg.variant {
        Variant::Kani | Variant::HyperMlp => {
            for (name, width) in [("rec.ln1", cfg.hidden_dim), ("rec.ln2", cfg.out_dim)] {
                s.push(Slot { name: format!("{name}.gamma"), shape: vec![width], init: Init::Ones });
                s.push(Slot { name: format!("{name}.beta"), shape: vec![width], init: Init::Zeros });
            }
            if cfg.variant == Variant::Kani {
                let r = cfg.reduce_dim;
                dense_slots(&mut s, "rec.reduce", cfg.out_dim, r, false);
                let nb = cfg.spline.num_basis();
                for l in 0..cfg.kan_layers {
                    s.push(Slot {
                        name: format!("kan.{l}.spline_coeffs"),
                        shape: vec![r, r, nb],
                        init: Init::Normal(0.1 / libm::sqrt(r as f64)),
                    });
                    s.push(Slot {
                        name: format!("kan.{l}.base_weights"),
                        shape: vec![r, r],
                        init: Init::Uniform(1.0 / libm::sqrt(r as f64)),
                    });
                }
                dense_slots(&mut s, "out", r, 1, zero);
            } else {
                let m = cfg.mlp_width;
                dense_slots(&mut s, "rec.reduce", cfg.out_dim, m, false);
                for l in 0..cfg.kan_layers {
                    dense_slots(&mut s, &format!("mlp.{l}"), m, m, false);
                }
                dense_slots(&mut s, "out", m, 1, zero);
            }
        }
        Variant::PureMlp => {
            let m = cfg.mlp_width;
            dense_slots(&mut s, "mlp.neck", cfg.embed_dim, m, false);
            for l in 0..2 {
                dense_slots(&mut s, &format!("mlp.{l}"), m, m, false);
            }
            dense_slots(&mut s, "out", m, 1, zero);
        }
    }
    s
}

/// Exact parameter count with a per-component breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub components: Vec<(&'static str, usize)>,
}

impl ParamCount {
    pub fn component(&self, name: &str) -> usize {
        self.components.iter().find(|(n, _)| *n == name).map_or(0, |c| c.1)
    }
}

fn component_of(name: &str) -> &'static str {
    match name.split('.').next().unwrap_or("") {
        "enc" => "encoder",
        "gen" => "generator",
        "emb" => "embeddings",
        "kan" => "kan",
        "mlp" => "mlp",
        _ => "head",
    }
}

/// The two generated weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWeights {
    /// `[H, C]`.
    pub w1: Tensor,
    /// `[C′, H]`.
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for slot in layout(&config) {
            let n: usize = slot.shape.iter().product();
            let data: Vec<f64> = match slot.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..b)).collect(),
                Init::Normal(sd) => {
                    let dist = Normal::new(0.0, sd).map_err(|e| Error::Config(format!("{e}")))?;
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            params.push(slot.name, Tensor::new(slot.shape, data)?)?;
        }
        Ok(Model { config, params })
    }

    /// Wraps loaded parameters after checking names, order and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let slots = layout(&config);
        if slots.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, (name, t)) in slots.iter().zip(params.iter()) {
            if slot.name != name || slot.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    slot.name,
                    slot.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> ParamCount {
        let mut components: Vec<(&'static str, usize)> = Vec::new();
        for (name, t) in self.params.iter() {
            let c = component_of(name);
            match components.iter_mut().find(|(n, _)| *n == c) {
                Some(e) => e.1 += t.len(),
                None => components.push((c, t.len())),
            }
        }
        ParamCount { total: self.params.count(), components }
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let want = [1, self.config.grid_rows, self.config.grid_cols];
        if shape != want {
            return Err(Error::shape("encode_field", shape, &want));
        }
        Ok(())
    }

    /// Feature map `[c, d]` of a normalized `[1, rows, cols]` image.
    pub fn encode_graph(&self, g: &mut Graph, p: &Leaves, image: Var) -> Result<Var> {
        let conv = |g: &mut Graph, x: Var, name: &str, stride: usize, relu: bool| -> Result<Var> {
            let y = g.conv2d(x, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?), stride)?;
            Ok(if relu { g.relu(y) } else { y })
        };
        let mut x = conv(g, image, "enc.stem", 1, true)?;
        let mut skips = Vec::with_capacity(4);
        for i in 0..4 {
            x = conv(g, x, &format!("enc.down{i}.a"), 2, true)?;
            x = conv(g, x, &format!("enc.down{i}.b"), 1, true)?;
            skips.push(x);
        }
        let skip = g.avg_pool2(skips[2])?;
        let cat = g.concat(&[skips[3], skip], 0)?;
        let t = conv(g, cat, "enc.tap", 1, true)?;
        let a = conv(g, t, "enc.head", 1, false)?;
        let shape = g.shape(a).to_vec();
        g.reshape(a, &[shape[0], shape[1] * shape[2]])
    }

    fn generate_graph(&self, g: &mut Graph, p: &Leaves, a: Var) -> Result<(Var, Var)> {
        let mut out = [a; 2];
        for (i, name) in ["gen.w1", "gen.w2"].iter().enumerate() {
            let h = g.conv1d(a, p.get(&format!("{name}.conv.w"))?, None)?;
            let h = g.relu(h);
            out[i] = g.linear(h, p.get(&format!("{name}.dense.w"))?, Some(p.get(&format!("{name}.dense.b"))?))?;
        }
        Ok((out[0], out[1]))
    }

    fn dense(&self, g: &mut Graph, p: &Leaves, x: Var, name: &str) -> Result<Var> {
        g.linear(x, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?))
    }

    /// Normalized predictions `[N, 1]` for `batch`, given the normalized input image.
    pub fn predict_graph(&self, g: &mut Graph, p: &Leaves, image: Var, batch: &QueryBatch) -> Result<Var> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Config("empty query batch".into()));
        }
        let batch = batch.clone().apply_ablation(&self.config.ablation);
        let inputs = [
            Tensor::new(vec![n, 2], batch.coords)?,
            Tensor::new(vec![n, 4], batch.date)?,
            Tensor::new(vec![n, 1], batch.topo)?,
            Tensor::new(vec![n, 1], batch.resolution)?,
        ];
        let mut terms = Vec::with_capacity(5);
        for ((name, _), t) in EMBEDDINGS.iter().zip(inputs) {
            let x = g.constant(t);
            terms.push(self.dense(g, p, x, &format!("emb.{name}"))?);
        }
        let state = g.constant(Tensor::new(vec![n, 1], batch.state)?);
        terms.push(self.dense(g, p, state, "emb.state")?);
        let u = g.add_all(&terms)?;

        let head_in = match self.config.variant {
            Variant::PureMlp => {
                let mut h = self.dense(g, p, u, "mlp.neck")?;
                for l in 0..2 {
                    let y = self.dense(g, p, h, &format!("mlp.{l}"))?;
                    h = g.relu(y);
                }
                h
            }
            variant => {
                self.check_image(g.shape(image))?;
                let a = self.encode_graph(g, p, image)?;
                let (w1, w2) = self.generate_graph(g, p, a)?;
                let b = g.matmul(u, w1, true)?;
                let b = g.layer_norm(b, p.get("rec.ln1.gamma")?, p.get("rec.ln1.beta")?)?;
                let b = g.relu(b);
                let b = g.matmul(b, w2, true)?;
                let b = g.layer_norm(b, p.get("rec.ln2.gamma")?, p.get("rec.ln2.beta")?)?;
                let b = g.relu(b);
                let mut h = self.dense(g, p, b, "rec.reduce")?;
                for l in 0..self.config.kan_layers {
                    h = if variant == Variant::Kani {
                        let c = p.get(&format!("kan.{l}.spline_coeffs"))?;
                        let w = p.get(&format!("kan.{l}.base_weights"))?;
                        kan_layer(g, h, c, w, self.config.spline)?
                    } else {
                        let y = self.dense(g, p, h, &format!("mlp.{l}"))?;
                        g.relu(y)
                    };
                }
                h
            }
        };
        let out = self.dense(g, p, head_in, "out")?;
        g.add(out, state)
    }

    /// Normalized predictions without gradients.
    pub fn predict(&self, image: &Tensor, batch: &QueryBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.leaves(&mut g, false);
        let img = g.constant(image.clone());
        let y = self.predict_graph(&mut g, &p, img, batch)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        if !self.config.variant.uses_encoder() {
            return Err(Error::Config("pure_mlp has no encoder".into()));
        }
        self.check_image(image.shape())?;
        let mut g = Graph::new();
        let p = self.params.leaves(&mut g, false);
        let img = g.constant(image.clone());
        let a = self.encode_graph(&mut g, &p, img)?;
        Ok(g.value(a).clone())
    }

    /// Generated weights for a feature map `[c, d]`.
    pub fn generate_weights(&self, features: &Tensor) -> Result<GeneratedWeights> {
        if !self.config.variant.uses_encoder() {
            return Err(Error::Config("pure_mlp has no weight generator".into()));
        }
        let mut g = Graph::new();
        let p = self.params.leaves(&mut g, false);
        let a = g.constant(features.clone());
        let (w1, w2) = self.generate_graph(&mut g, &p, a)?;
        Ok(GeneratedWeights { w1: g.value(w1).clone(), w2: g.value(w2).clone() })
    }

    /// Physical-unit predictions for one field.
    pub fn forward(&self, ctx: &QueryContext, field: &GriddedField, topo: &TopographyGrid, query: Query<'_>) -> Result<Vec<f64>> {
        let batch = ctx.query_batch(field, topo, query)?;
        let image = field_image(field, &ctx.value_stats);
        let y = self.predict(&image, &batch)?;
        Ok(y.into_iter().map(|v| ctx.value_stats.denormalize_value(v)).collect())
    }
}

/// Parameters of one KAN layer of width `C″`, for the additivity check.
pub fn kan_layer_count(cfg: &ModelConfig) -> usize {
    kan_param_count(cfg.reduce_dim, cfg.reduce_dim, &cfg.spline)
}

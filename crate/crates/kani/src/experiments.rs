//! Training, evaluation and the comparison experiments built on a [`Dataset`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use kani_core::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use kani_core::autodiff::{Graph, Tensor, Var};
use kani_core::grid::{bilinear_interp, make_coordinate_grid, nearest_interp, BBox, GriddedField, StationSet};
use kani_core::kan::{kan_layer, SplineConfig};
use kani_core::metrics::{evaluate_stations, rmse, StationMetrics, SweepCurve};
use kani_core::model::{field_image, GridResolution, Model, ModelConfig, Query, Variant};
use kani_core::synth::{stream, Sample, SyntheticDataset, SyntheticScenario};
use kani_core::train::{train, EpochRecord, EvalSample, PreparedSample, TrainOutcome};
use rand::seq::index::sample as sample_indices;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};

/// Station ids withheld from training, for spatial generalization checks.
pub fn holdout_ids(ds: &Dataset, frac: f64, seed: u64) -> Result<BTreeSet<String>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Config("holdout fraction must lie in [0, 1)".into()));
    }
    let ids: Vec<String> = ds.samples[0].obs.stations().iter().map(|s| s.id.clone()).collect();
    let k = (frac * ids.len() as f64).round() as usize;
    let mut rng = stream(seed, 0x401D, 0);
    Ok(sample_indices(&mut rng, ids.len(), k).into_iter().map(|i| ids[i].clone()).collect())
}

fn obs_subset(obs: &StationSet, bbox: &BBox, ids: &BTreeSet<String>, keep_listed: bool) -> Result<StationSet> {
    Ok(obs.filter(bbox, |s| ids.contains(&s.id) == keep_listed)?)
}

pub fn prepare_training(ds: &Dataset, holdout: &BTreeSet<String>) -> Result<Vec<PreparedSample>> {
    ds.samples(Split::Train)
        .iter()
        .map(|s| {
            let obs = obs_subset(&s.obs, &ds.ctx.bbox, holdout, false)?;
            Ok(PreparedSample::new(&ds.ctx, &s.input, &obs, ds.topography())?)
        })
        .collect()
}

/// Station queries of a split, optionally restricted to `only` station ids.
pub fn eval_samples(ds: &Dataset, split: Split, only: Option<&BTreeSet<String>>) -> Result<Vec<EvalSample>> {
    ds.samples(split)
        .iter()
        .map(|s| {
            let obs = match only {
                Some(ids) => obs_subset(&s.obs, &ds.ctx.bbox, ids, true)?,
                None => s.obs.clone(),
            };
            Ok(EvalSample::new(&ds.ctx, &s.input, &obs, ds.topography())?)
        })
        .collect()
}

/// Trains a fresh model; validation uses all stations of the val split.
pub fn fit(
    ds: &Dataset,
    run: &RunConfig,
    holdout: &BTreeSet<String>,
    on_epoch: impl FnMut(&EpochRecord, &Model),
) -> Result<TrainOutcome> {
    let mut model_cfg = run.model.clone();
    model_cfg.grid_rows = ds.samples[0].input.rows();
    model_cfg.grid_cols = ds.samples[0].input.cols();
    let model = Model::new(model_cfg, run.init_seed)?;
    let tr = prepare_training(ds, holdout)?;
    let val = eval_samples(ds, Split::Val, None)?;
    Ok(train(model, &ds.ctx, &tr, &val, &run.train, on_epoch)?)
}

/// Physical-unit station predictions and observations of a model.
pub fn model_station_predictions(model: &Model, ds: &Dataset, samples: &[EvalSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for s in samples {
        let y = model.predict(&s.image, &s.batch)?;
        pred.extend(y.into_iter().map(|v| ds.ctx.value_stats.denormalize_value(v)));
        obs.extend_from_slice(&s.observed);
    }
    Ok((pred, obs))
}

pub fn model_metrics(model: &Model, ds: &Dataset, samples: &[EvalSample]) -> Result<StationMetrics> {
    let (p, o) = model_station_predictions(model, ds, samples)?;
    Ok(evaluate_stations(&p, &o)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

impl Interp {
    pub fn name(self) -> &'static str {
        match self {
            Interp::Bilinear => "linear",
            Interp::Nearest => "nearest",
        }
    }
}

/// Interpolation of the input field straight to the stations.
pub fn interp_metrics(ds: &Dataset, split: Split, how: Interp, only: Option<&BTreeSet<String>>) -> Result<StationMetrics> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for s in ds.samples(split) {
        let o = match only {
            Some(ids) => obs_subset(&s.obs, &ds.ctx.bbox, ids, true)?,
            None => s.obs.clone(),
        };
        let pts = o.points();
        let v = match how {
            Interp::Bilinear => bilinear_interp(&s.input, &pts),
            Interp::Nearest => nearest_interp(&s.input, &pts),
        };
        pred.extend(v.values);
        obs.extend(o.values());
    }
    Ok(evaluate_stations(&pred, &obs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub variable: String,
    pub split: String,
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
}

impl MetricsRow {
    fn new(method: &str, ds: &Dataset, split: Split, m: StationMetrics) -> Self {
        MetricsRow {
            method: method.into(),
            variable: ds.variable().into(),
            split: split.name().into(),
            mse: m.mse,
            mae: m.mae,
            n: m.n,
        }
    }
}

/// Interpolation baselines followed by every learned model, all on the same
/// station queries.
pub fn compare_baselines(
    ds: &Dataset,
    models: &[(&str, &Model)],
    split: Split,
    only: Option<&BTreeSet<String>>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for how in [Interp::Bilinear, Interp::Nearest] {
        rows.push(MetricsRow::new(how.name(), ds, split, interp_metrics(ds, split, how, only)?));
    }
    let samples = eval_samples(ds, split, only)?;
    for (name, model) in models {
        rows.push(MetricsRow::new(name, ds, split, model_metrics(model, ds, &samples)?));
    }
    Ok(rows)
}

/// Digest of the query batches every learned method consumes.
pub fn query_digest(samples: &[EvalSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.batch.to_bytes());
    }
    format!("{:x}", h.finalize())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,variable,split,mse,mae,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.method, r.variable, r.split, r.mse, r.mae, r.n);
    }
    s
}

/// Reconstructs each field at `r / f` for every factor, bilinearly
/// interpolates the result to the stations and scores it; the last entry is
/// the direct station query. Also returns the flat input-field curve.
pub fn resolution_sweep(
    model: &Model,
    name: &str,
    ds: &Dataset,
    split: Split,
    factors: &[u32],
    semantics: GridResolution,
) -> Result<(SweepCurve, SweepCurve)> {
    let r = ds.scenario.resolution;
    let mut model_pts = Vec::new();
    let mut input_pts = Vec::new();
    let input_mse = interp_metrics(ds, split, Interp::Bilinear, None)?.mse;
    for &f in factors {
        let res = r / f as f64;
        let grid = make_coordinate_grid(ds.ctx.bbox, res)?;
        let topo = ds.topography_at(res)?;
        let mut pred = Vec::new();
        let mut obs = Vec::new();
        for s in ds.samples(split) {
            let q = Query::Downscale { grid: &grid, topo: &topo, resolution: semantics };
            let values = model.forward(&ds.ctx, &s.input, ds.topography(), q)?;
            let field = GriddedField::new(ds.ctx.bbox, res, ds.variable(), s.input.time(), values)?;
            pred.extend(bilinear_interp(&field, &s.obs.points()).values);
            obs.extend(s.obs.values());
        }
        model_pts.push((res, evaluate_stations(&pred, &obs)?.mse));
        input_pts.push((res, input_mse));
    }
    let direct = model_metrics(model, ds, &eval_samples(ds, split, None)?)?.mse;
    model_pts.push((0.0, direct));
    input_pts.push((0.0, input_mse));
    Ok((SweepCurve::new(name, model_pts)?, SweepCurve::new("input", input_pts)?))
}

pub fn sweep_csv(curves: &[SweepCurve]) -> String {
    let mut s = String::from("method,resolution_deg,mse\n");
    for c in curves {
        for (r, m) in &c.points {
            let _ = writeln!(s, "{},{},{}", c.method, r, m);
        }
    }
    s
}

/// RMSE against the analytic truth on the `r / factor` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownscaleScore {
    pub resolution: f64,
    /// Model queried directly on the fine grid with fine topography.
    pub model: f64,
    /// Model-corrected field at `r`, bilinearly upsampled.
    pub corrected_upsampled: f64,
    /// Raw input field, bilinearly upsampled.
    pub input_upsampled: f64,
}

pub fn oracle_downscale_score(model: &Model, ds: &Dataset, split: Split, factor: u32, semantics: GridResolution) -> Result<DownscaleScore> {
    let oracle = ds.oracle()?;
    let res = ds.scenario.resolution / factor as f64;
    let fine = make_coordinate_grid(ds.ctx.bbox, res)?;
    let fine_pts = fine.points();
    let topo = ds.topography_at(res)?;
    let (mut truth, mut direct, mut corrected, mut input) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in ds.samples(split) {
        let t = s.input.time();
        truth.extend(fine_pts.iter().map(|&(a, b)| oracle.y_true(a, b, t)));
        let q = Query::Downscale { grid: &fine, topo: &topo, resolution: semantics };
        direct.extend(model.forward(&ds.ctx, &s.input, ds.topography(), q)?);
        let c = model.forward(&ds.ctx, &s.input, ds.topography(), Query::Correct(semantics))?;
        let c = s.input.with_values(c)?;
        corrected.extend(bilinear_interp(&c, &fine_pts).values);
        input.extend(bilinear_interp(&s.input, &fine_pts).values);
    }
    Ok(DownscaleScore {
        resolution: res,
        model: rmse(&direct, &truth)?,
        corrected_upsampled: rmse(&corrected, &truth)?,
        input_upsampled: rmse(&input, &truth)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub variable: String,
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("setting,variable,mse,mae,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.setting, r.variable, r.mse, r.mae, r.n);
    }
    s
}

/// One line of the gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn rand_tensor(seed: u64, shape: &[usize], scale: f64) -> Tensor {
    use rand::Rng;
    let mut rng = stream(seed, 0xA0D1, shape.iter().product::<usize>() as u64);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

fn project(g: &mut Graph, y: Var, seed: u64) -> kani_core::Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = rand_tensor(seed ^ 0x9E37, &shape, 1.0);
    let n = w.len();
    let w = g.constant(w.reshaped(&[1, n])?);
    let flat = g.reshape(y, &[1, n])?;
    let p = g.matmul(flat, w, true)?;
    Ok(g.sum(p))
}

type AuditFn = Box<dyn Fn(&mut Graph, &[Var]) -> kani_core::Result<Var>>;

fn primitive_cases(seed: u64) -> Vec<(&'static str, AuditFn, Vec<Tensor>)> {
    let t = |k: u64, shape: &[usize]| rand_tensor(seed.wrapping_add(k), shape, 1.0);
    let spline = SplineConfig::default();
    vec![
        ("linear", Box::new(move |g, x| {
            let y = g.linear(x[0], x[1], Some(x[2]))?;
            project(g, y, seed)
        }), vec![t(1, &[5, 4]), t(2, &[3, 4]), t(3, &[3])]),
        ("matmul", Box::new(move |g, x| {
            let y = g.matmul(x[0], x[1], false)?;
            project(g, y, seed)
        }), vec![t(4, &[4, 3]), t(5, &[3, 5])]),
        ("matmul_trans_b", Box::new(move |g, x| {
            let y = g.matmul(x[0], x[1], true)?;
            project(g, y, seed)
        }), vec![t(6, &[4, 3]), t(7, &[5, 3])]),
        ("conv2d_stride1", Box::new(move |g, x| {
            let y = g.conv2d(x[0], x[1], Some(x[2]), 1)?;
            project(g, y, seed)
        }), vec![t(8, &[2, 6, 6]), t(9, &[3, 2, 3, 3]), t(10, &[3])]),
        ("conv2d_stride2", Box::new(move |g, x| {
            let y = g.conv2d(x[0], x[1], Some(x[2]), 2)?;
            project(g, y, seed)
        }), vec![t(11, &[2, 6, 6]), t(12, &[3, 2, 3, 3]), t(13, &[3])]),
        ("conv1d", Box::new(move |g, x| {
            let y = g.conv1d(x[0], x[1], Some(x[2]))?;
            project(g, y, seed)
        }), vec![t(14, &[3, 7]), t(15, &[2, 3, 3]), t(16, &[2])]),
        ("relu", Box::new(move |g, x| {
            let y = g.relu(x[0]);
            project(g, y, seed)
        }), vec![t(17, &[4, 5])]),
        ("layer_norm", Box::new(move |g, x| {
            let y = g.layer_norm(x[0], x[1], x[2])?;
            project(g, y, seed)
        }), vec![t(18, &[4, 6]), t(19, &[6]), t(20, &[6])]),
        ("add", Box::new(move |g, x| {
            let y = g.add(x[0], x[1])?;
            project(g, y, seed)
        }), vec![t(21, &[3, 4]), t(22, &[3, 4])]),
        ("transpose", Box::new(move |g, x| {
            let y = g.transpose(x[0])?;
            project(g, y, seed)
        }), vec![t(23, &[3, 5])]),
        ("concat", Box::new(move |g, x| {
            let y = g.concat(&[x[0], x[1]], 1)?;
            project(g, y, seed)
        }), vec![t(24, &[3, 2]), t(25, &[3, 4])]),
        ("sum", Box::new(|g, x| Ok(g.sum(x[0]))), vec![t(26, &[3, 4])]),
        ("mse", Box::new(|g, x| g.mse(x[0], x[1])), vec![t(27, &[6, 1]), t(28, &[6, 1])]),
        ("avg_pool2", Box::new(move |g, x| {
            let y = g.avg_pool2(x[0])?;
            project(g, y, seed)
        }), vec![t(29, &[2, 4, 6])]),
        ("kan_layer", Box::new(move |g, x| {
            let y = kan_layer(g, x[0], x[1], x[2], spline)?;
            project(g, y, seed)
        }), vec![rand_tensor(seed + 30, &[6, 3], 1.2), t(31, &[2, 3, spline.num_basis()]), t(32, &[2, 3])]),
    ]
}

fn audit_scenario(seed: u64) -> SyntheticScenario {
    let mut sc = SyntheticScenario::desk(seed);
    sc.bbox = BBox { lat_min: 36.0, lat_max: 40.0, lon_min: -112.0, lon_max: -108.0 };
    sc.n_bumps = 4;
    sc.smooth_bumps = 3;
    sc
}

fn audit_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        embed_dim: 6,
        hidden_dim: 5,
        out_dim: 7,
        reduce_dim: 4,
        mlp_width: 6,
        encoder_channels: [3, 4, 4, 5],
        feature_channels: 4,
        grid_rows: 16,
        grid_cols: 16,
        ..ModelConfig::default()
    }
}

/// Finite-difference audit of every primitive and of the whole model on a
/// 16×16 field, including the encoder input.
pub fn gradient_audit(seed: u64) -> Result<Vec<AuditRow>> {
    let opts = GradCheckOptions::default();
    let mut rows = Vec::new();
    for (name, f, inputs) in primitive_cases(seed) {
        let rep = check_gradients(f, &inputs, &[], &opts)?;
        rows.push(AuditRow { name: name.into(), max_rel_err: rep.max_rel_err(), passed: rep.passed() });
    }
    let sd = SyntheticDataset::generate(&audit_scenario(seed), 10, 1.0, 2, (1.0, 0.0, 0.0))?;
    let ds = Dataset::from_synthetic(&sd)?;
    let s: &Sample = &ds.samples[0];
    for variant in [Variant::Kani, Variant::HyperMlp, Variant::PureMlp] {
        let mut model = Model::new(audit_model_config(variant), seed)?;
        // Nonzero head, perturbed norms and nonzero biases: zero biases put
        // dead receptive fields exactly on the relu kink.
        let names: Vec<String> = model.params().names().to_vec();
        for (k, n) in names.iter().enumerate() {
            let (offset, scale) = match n.as_str() {
                n if n.starts_with("out.") => (0.0, 0.5),
                n if n.starts_with("rec.ln") => (1.0, 0.5),
                n if n.ends_with(".b") => (0.0, 0.1),
                _ => continue,
            };
            let t = model.params_mut().get_mut(n).expect("listed name");
            let r = rand_tensor(seed + 100 + k as u64, t.shape(), scale);
            t.data_mut().iter_mut().zip(r.data()).for_each(|(a, b)| *a = offset + b);
        }
        let batch = ds.ctx.training_batch(&s.input, &s.obs, ds.topography())?;
        let rows_idx: Vec<usize> = (0..batch.len()).step_by(9).collect();
        let batch = batch.select(&rows_idx);
        let targets: Vec<f64> = batch.state.iter().map(|v| v + 0.25).collect();
        let mut inputs: Vec<Tensor> = model.params().tensors().to_vec();
        inputs.push(field_image(&s.input, &ds.ctx.value_stats));
        let m = &model;
        let f = |g: &mut Graph, x: &[Var]| -> kani_core::Result<Var> {
            let (params, image) = x.split_at(x.len() - 1);
            let p = m.params().bind(params.to_vec())?;
            let y = m.predict_graph(g, &p, image[0], &batch)?;
            let t = g.constant(Tensor::new(vec![targets.len(), 1], targets.clone())?);
            g.mse(y, t)
        };
        let opts = GradCheckOptions { max_entries: Some(8), seed, retry_h: Some(1e-6), ..Default::default() };
        let rep = check_gradients(f, &inputs, &[], &opts)?;
        rows.push(AuditRow {
            name: format!("model_{}", variant.name()),
            max_rel_err: rep.max_rel_err(),
            passed: rep.passed(),
        });
    }
    Ok(rows)
}

pub fn audit_text(rows: &[AuditRow]) -> String {
    let mut s = String::from("check,max_rel_err,passed\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.3e},{}", r.name, r.max_rel_err, r.passed);
    }
    s
}

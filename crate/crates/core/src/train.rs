//! Joint grid and station training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Adam, AdamConfig, Graph, LrSchedule, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::{GriddedField, StationSet, TopographyGrid};
use crate::metrics::evaluate_stations;
use crate::model::{field_image, Ablation, Model, Query, QueryBatch, QueryContext};
use crate::synth::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub milestones: Vec<usize>,
    /// Fields per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_grid: f64,
    pub lambda_station: f64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            milestones: vec![60, 96, 108, 114],
            batch_size: 4,
            seed: 0,
            lambda_grid: 1.0,
            lambda_station: 1.0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    /// 60 epochs with the milestones scaled by the epoch ratio.
    pub fn desk() -> Self {
        TrainConfig { epochs: 60, milestones: vec![30, 48, 54, 57], ..Self::default() }
    }

    /// Milestones of the 120-epoch schedule scaled to `epochs`.
    pub fn scaled_milestones(epochs: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for m in [60usize, 96, 108, 114] {
            let v = m * epochs / 120;
            if v > 0 && v < epochs && out.last().is_none_or(|&l| v > l) {
                out.push(v);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return Err(Error::Config("every milestone must be below the epoch count".into()));
        }
        if !(self.lambda_grid >= 0.0 && self.lambda_station >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.base_lr, self.milestones.clone())
    }
}

/// One field with its query batch and normalized targets, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub image: Tensor,
    pub batch: QueryBatch,
    /// Grid targets followed by station targets, normalized.
    pub targets: Vec<f64>,
    pub n_grid: usize,
}

impl PreparedSample {
    /// Grid targets are the input field itself; station targets are the observations.
    pub fn new(ctx: &QueryContext, input: &GriddedField, obs: &StationSet, topo: &TopographyGrid) -> Result<Self> {
        let batch = ctx.training_batch(input, obs, topo)?;
        let n_grid = batch.n_grid();
        let mut targets: Vec<f64> = batch.state[..n_grid].to_vec();
        targets.extend(obs.values().iter().map(|&v| ctx.value_stats.normalize_value(v)));
        Ok(PreparedSample { image: field_image(input, &ctx.value_stats), batch, targets, n_grid })
    }
}

/// A validation field: observations and the station-only query.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image: Tensor,
    pub batch: QueryBatch,
    pub observed: Vec<f64>,
}

impl EvalSample {
    pub fn new(ctx: &QueryContext, input: &GriddedField, obs: &StationSet, topo: &TopographyGrid) -> Result<Self> {
        let points = obs.points();
        let elev = obs.elevations();
        let batch = ctx.query_batch(input, topo, Query::Points { points: &points, elevations: &elev })?;
        Ok(EvalSample { image: field_image(input, &ctx.value_stats), batch, observed: obs.values() })
    }
}

/// Graph handles of the loss and its unweighted components.
pub struct LossVars {
    pub total: Var,
    pub grid: Option<Var>,
    pub station: Option<Var>,
}

/// `λ_g·mse(grid) + λ_s·mse(stations)` for predictions `[N, 1]` whose first
/// `n_grid` rows are grid points.
pub fn loss_graph(g: &mut Graph, pred: Var, targets: &[f64], n_grid: usize, lambda_grid: f64, lambda_station: f64) -> Result<LossVars> {
    let n = targets.len();
    if g.value(pred).len() != n || n_grid > n {
        return Err(Error::shape("loss", g.shape(pred), &[n]));
    }
    let mut parts = Vec::new();
    let mut comp = [None, None];
    for (k, (lo, hi, lambda)) in [(0, n_grid, lambda_grid), (n_grid, n, lambda_station)].into_iter().enumerate() {
        if hi == lo {
            continue;
        }
        let p = g.slice_rows(pred, lo, hi)?;
        let t = g.constant(Tensor::new(vec![hi - lo, 1], targets[lo..hi].to_vec())?);
        let m = g.mse(p, t)?;
        comp[k] = Some(m);
        parts.push(g.scale(m, lambda));
    }
    let total = g.add_all(&parts)?;
    Ok(LossVars { total, grid: comp[0], station: comp[1] })
}

/// Loss value and unweighted components of plain predictions.
pub fn loss_value(pred: &[f64], targets: &[f64], n_grid: usize, lambda_grid: f64, lambda_station: f64) -> Result<(f64, f64, f64)> {
    if pred.len() != targets.len() || n_grid > pred.len() {
        return Err(Error::shape("loss", &[pred.len()], &[targets.len()]));
    }
    let mse = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
        }
    };
    let lg = mse(&pred[..n_grid], &targets[..n_grid]);
    let ls = mse(&pred[n_grid..], &targets[n_grid..]);
    Ok((lambda_grid * lg + lambda_station * ls, lg, ls))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_grid: f64,
    pub loss_station: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: Model,
    pub last: Model,
}

/// Loss, components and parameter gradients of one sample.
pub fn sample_gradients(model: &Model, s: &PreparedSample, cfg: &TrainConfig) -> Result<((f64, f64, f64), Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.params().leaves(&mut g, true);
    let img = g.constant(s.image.clone());
    let pred = model.predict_graph(&mut g, &p, img, &s.batch)?;
    let l = loss_graph(&mut g, pred, &s.targets, s.n_grid, cfg.lambda_grid, cfg.lambda_station)?;
    let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    let parts = (g.value(l.total).data()[0], value(l.grid), value(l.station));
    if !parts.0.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (grid {}, station {})",
            parts.1, parts.2
        )));
    }
    g.backward(l.total)?;
    let grads = p.vars.iter().map(|&v| g.take_grad(v)).collect();
    Ok((parts, grads))
}

/// Station MSE and MAE in physical units over several fields.
pub fn validate(model: &Model, ctx: &QueryContext, samples: &[EvalSample]) -> Result<(f64, f64)> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for s in samples {
        let y = model.predict(&s.image, &s.batch)?;
        pred.extend(y.into_iter().map(|v| ctx.value_stats.denormalize_value(v)));
        obs.extend_from_slice(&s.observed);
    }
    if pred.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let m = evaluate_stations(&pred, &obs)?;
    Ok((m.mse, m.mae))
}

/// Runs the full schedule. `on_epoch` sees every record together with the
/// current parameters, e.g. for logging.
pub fn train(
    mut model: Model,
    ctx: &QueryContext,
    train: &[PreparedSample],
    val: &[EvalSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.ablation != model.config().ablation {
        return Err(Error::Config("ablation flags of the model and the training run differ".into()));
    }
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let schedule = cfg.schedule()?;
    let mut adam = Adam::new(AdamConfig { beta1: cfg.beta1, beta2: cfg.beta2, eps: 1e-8 }, model.params().tensors());
    let names = model.params().names().to_vec();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = stream(cfg.seed, 0x5EED, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut parts_by_sample = vec![(0.0, 0.0, 0.0); train.len()];
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in chunk {
                let (parts, grads) = sample_gradients(&model, &train[i], cfg)
                    .map_err(|e| match e {
                        Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, sample {i}")),
                        other => other,
                    })?;
                parts_by_sample[i] = parts;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (x, y) in a.iter_mut().zip(&grads) {
                            x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty chunk");
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().flatten().for_each(|v| *v *= scale);
            adam.step(model.params_mut().tensors_mut(), &grads, lr, &names)?;
        }
        let n = train.len() as f64;
        let sums = parts_by_sample
            .iter()
            .fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
        let (val_mse, val_mae) = validate(&model, ctx, val)?;
        let rec = EpochRecord {
            epoch,
            lr,
            loss_total: sums.0 / n,
            loss_grid: sums.1 / n,
            loss_station: sums.2 / n,
            val_mse,
            val_mae,
        };
        on_epoch(&rec, &model);
        records.push(rec);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_mse < *b,
        };
        if better || val.is_empty() {
            best = Some((val_mse, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome { records, best_epoch, best: best_model, last: model })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2, 1.0, 1.0).unwrap().0, 0.0);
        let (l, g, s) = loss_value(&[1.0, 1.0, 5.0], &[0.0, 0.0, 5.0], 2, 1.0, 1.0).unwrap();
        assert_eq!((l, g, s), (1.0, 1.0, 0.0));
        let (l, _, _) = loss_value(&[1.0, -1.0, 2.0], &[0.0, 0.0, 0.0], 2, 1.0, 1.0).unwrap();
        assert_eq!(l, 5.0);
    }

    #[test]
    fn graph_loss_matches_plain() {
        let mut g = Graph::new();
        let pred = g.param(Tensor::new(vec![4, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap());
        let t = [0.0, 0.0, 1.0, 1.0];
        let l = loss_graph(&mut g, pred, &t, 2, 0.7, 1.3).unwrap();
        let (want, wg, ws) = loss_value(&[0.5, -1.0, 2.0, 0.25], &t, 2, 0.7, 1.3).unwrap();
        assert!((g.value(l.total).data()[0] - want).abs() < 1e-15);
        assert!((g.value(l.grid.unwrap()).data()[0] - wg).abs() < 1e-15);
        assert!((g.value(l.station.unwrap()).data()[0] - ws).abs() < 1e-15);
    }

    #[test]
    fn scaled_milestones() {
        assert_eq!(TrainConfig::scaled_milestones(120), vec![60, 96, 108, 114]);
        assert_eq!(TrainConfig::scaled_milestones(60), vec![30, 48, 54, 57]);
        assert_eq!(TrainConfig::desk().milestones, TrainConfig::scaled_milestones(60));
    }
}

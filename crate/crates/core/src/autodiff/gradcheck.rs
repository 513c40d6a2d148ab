//! Central finite differences against the backward pass.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Relative errors divide by at least this much.
    pub floor: f64,
    /// Check at most this many entries per input, chosen with `seed`.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Second step for entries that fail at `h`; a relu kink within `h` of
    /// the point spoils the first difference, not the second.
    pub retry_h: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, tol: 1e-4, floor: 1e-6, max_entries: None, seed: 0, retry_h: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Evaluates `f` with every input as a parameter and returns the scalar and
/// the gradient of each input.
pub fn value_and_grads<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape("grad_check", g.shape(out), &[1]));
    }
    let v = g.value(out).data()[0];
    g.backward(out)?;
    let grads = vars.iter().map(|&x| g.take_grad(x)).collect();
    Ok((v, grads))
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

fn central<F>(f: &F, work: &mut [Tensor], i: usize, j: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let orig = work[i].data()[j];
    work[i].data_mut()[j] = orig + h;
    let fp = eval(f, work)?;
    work[i].data_mut()[j] = orig - h;
    let fm = eval(f, work)?;
    work[i].data_mut()[j] = orig;
    Ok((fp - fm) / (2.0 * h))
}

/// Compares reverse-mode gradients of a scalar function with central differences.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], names: &[&str], opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, grads) = value_and_grads(&f, inputs)?;
    compare_gradients(&f, inputs, &grads, names, opts)
}

/// Compares supplied analytic gradients with central differences of `f`.
pub fn compare_gradients<F>(
    f: &F,
    inputs: &[Tensor],
    analytic: &[Vec<f64>],
    names: &[&str],
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let len = inputs[i].len();
        let idx: Vec<usize> = match opts.max_entries {
            Some(m) if m < len => {
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut worst = 0.0;
        let mut worst_index = 0;
        for &j in &idx {
            let mut e = relative_error(grad[j], central(f, &mut work, i, j, opts.h)?, opts.floor);
            if let Some(h) = opts.retry_h.filter(|_| e > opts.tol) {
                e = e.min(relative_error(grad[j], central(f, &mut work, i, j, h)?, opts.floor));
            }
            if e > worst || e.is_nan() {
                worst = if e.is_nan() { f64::INFINITY } else { e };
                worst_index = j;
            }
        }
        reports.push(InputReport {
            name: names.get(i).map(|s| String::from(*s)).unwrap_or_else(|| alloc::format!("input{i}")),
            max_rel_err: worst,
            worst_index,
            checked: idx.len(),
            passed: worst <= opts.tol,
        });
    }
    Ok(GradReport { inputs: reports })
}

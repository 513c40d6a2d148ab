//! Uniform B-spline bases on `[-1, 1]` and the Kolmogorov–Arnold layer.
//!
//! A layer maps `x: [N, C_in]` to `[N, C_out]` with
//! `out[n,q] = Σ_p base[q,p]·silu(x[n,p]) + Σ_j coeffs[q,p,j]·B_j(x[n,p])`.
//! It is evaluated as a feature expansion (all basis values and the silu term
//! of every input) followed by one matrix product against the stacked weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest supported `degree + 1`.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplineConfig {
    pub degree: usize,
    pub grid_size: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { degree: 3, grid_size: 5 }
    }
}

impl SplineConfig {
    pub fn new(degree: usize, grid_size: usize) -> Result<Self> {
        let c = SplineConfig { degree, grid_size };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::Config("spline grid_size must be at least 1".into()));
        }
        if self.degree + 1 > MAX_ORDER {
            return Err(Error::Config(alloc::format!(
                "spline degree {} exceeds the supported maximum {}",
                self.degree,
                MAX_ORDER - 1
            )));
        }
        Ok(())
    }

    /// `G + k` basis functions.
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.degree
    }

    /// Knot spacing.
    pub fn step(&self) -> f64 {
        2.0 / self.grid_size as f64
    }

    /// The `G + 2k + 1` uniform knots, `k` of them beyond each end of `[-1, 1]`.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.grid_size + 2 * self.degree + 1)
            .map(|i| -1.0 + (i as f64 - self.degree as f64) * h)
            .collect()
    }

    fn knot(&self, i: usize) -> f64 {
        -1.0 + (i as f64 - self.degree as f64) * self.step()
    }
}

/// Evaluates the `k + 1` possibly nonzero basis functions at `u` (clamped to
/// `[-1, 1]`) into `vals[..=k]` and returns the index of the first one.
/// When `ders` is given it receives the derivatives of the same functions.
pub(crate) fn basis_span(u: f64, cfg: &SplineConfig, vals: &mut [f64; MAX_ORDER], mut ders: Option<&mut [f64; MAX_ORDER]>) -> usize {
    let k = cfg.degree;
    let u = u.clamp(-1.0, 1.0);
    let h = cfg.step();
    let cell = libm::floor((u + 1.0) / h);
    let first = if cell < 0.0 { 0 } else { (cell as usize).min(cfg.grid_size - 1) };
    let span = first + k;

    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    vals[0] = 1.0;
    for d in 1..=k {
        if d == k {
            if let Some(ders) = ders.as_deref_mut() {
                // vals[..k] holds degree k-1 values of N_{span-k+1..=span}.
                for l in 0..=k {
                    let lo = if l >= 1 { vals[l - 1] } else { 0.0 };
                    let hi = if l < k { vals[l] } else { 0.0 };
                    ders[l] = (lo - hi) / h;
                }
            }
        }
        left[d] = u - cfg.knot(span + 1 - d);
        right[d] = cfg.knot(span + d) - u;
        let mut saved = 0.0;
        for r in 0..d {
            let tmp = vals[r] / (right[r + 1] + left[d - r]);
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[d - r] * tmp;
        }
        vals[d] = saved;
    }
    if k == 0 {
        if let Some(ders) = ders.as_deref_mut() {
            ders[0] = 0.0;
        }
    }
    first
}

/// All `G + k` basis values at `u`.
pub fn bspline_basis(u: f64, cfg: &SplineConfig) -> Vec<f64> {
    let mut vals = [0.0; MAX_ORDER];
    let first = basis_span(u, cfg, &mut vals, None);
    let mut out = vec![0.0; cfg.num_basis()];
    out[first..first + cfg.degree + 1].copy_from_slice(&vals[..cfg.degree + 1]);
    out
}

/// Derivatives of all `G + k` basis functions at `u`; zero outside `[-1, 1]`.
pub fn bspline_basis_derivative(u: f64, cfg: &SplineConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.num_basis()];
    if !(-1.0..=1.0).contains(&u) {
        return out;
    }
    let mut vals = [0.0; MAX_ORDER];
    let mut ders = [0.0; MAX_ORDER];
    let first = basis_span(u, cfg, &mut vals, Some(&mut ders));
    out[first..first + cfg.degree + 1].copy_from_slice(&ders[..cfg.degree + 1]);
    out
}

/// `C_out·C_in·(G+k) + C_out·C_in`.
pub fn kan_param_count(c_in: usize, c_out: usize, cfg: &SplineConfig) -> usize {
    c_out * c_in * cfg.num_basis() + c_out * c_in
}

/// Applies a KAN layer on the graph. `coeffs: [C_out, C_in, G+k]`, `base: [C_out, C_in]`.
pub fn kan_layer(g: &mut Graph, x: Var, coeffs: Var, base: Var, cfg: SplineConfig) -> Result<Var> {
    let c_in = g.shape(x).get(1).copied().unwrap_or(0);
    let nb = cfg.num_basis();
    let cs = g.shape(coeffs).to_vec();
    let bs = g.shape(base).to_vec();
    if cs.len() != 3 || cs[1] != c_in || cs[2] != nb || bs != [cs[0], c_in] {
        return Err(Error::shape("kan_layer", g.shape(x), &cs));
    }
    let feats = g.kan_expand(x, cfg)?;
    let flat = g.reshape(coeffs, &[cs[0], c_in * nb])?;
    let w = g.concat(&[flat, base], 1)?;
    g.matmul(feats, w, true)
}

/// Stand-alone parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayerParams {
    pub spline_coeffs: Tensor,
    pub base_weights: Tensor,
    pub config: SplineConfig,
}

impl KanLayerParams {
    pub fn zeros(c_in: usize, c_out: usize, config: SplineConfig) -> Self {
        KanLayerParams {
            spline_coeffs: Tensor::zeros(&[c_out, c_in, config.num_basis()]),
            base_weights: Tensor::zeros(&[c_out, c_in]),
            config,
        }
    }

    pub fn c_in(&self) -> usize {
        self.base_weights.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.base_weights.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let c = g.constant(self.spline_coeffs.clone());
        let b = g.constant(self.base_weights.clone());
        let out = kan_layer(&mut g, xv, c, b, self.config)?;
        Ok(g.value(out).clone())
    }
}

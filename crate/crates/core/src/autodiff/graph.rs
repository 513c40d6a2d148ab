//! Tape of tensor operations with exact reverse-mode gradients.
//!
//! Nodes are appended in creation order, which is a topological order, so the
//! backward pass walks the tape once from the root down to index 0.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::kan::{basis_span, SplineConfig, MAX_ORDER};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn out_len(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Transpose(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SumAll(Var),
    Mse { pred: Var, target: Var },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    AvgPool2(Var),
    KanExpand { x: Var, config: SplineConfig },
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node needed one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Takes a gradient out of the graph, leaving zeros if none was reached.
    pub fn take_grad(&mut self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.values[v.0].len()])
    }

    /// `x·wᵀ + b` for `x: [n, k]`, `w: [m, k]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.values[x.0].dims2("linear")?;
        let (m, kw) = self.values[w.0].dims2("linear")?;
        if k != kw {
            return Err(Error::shape("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bias = self.values[b.0].data();
            if bias.len() != m {
                return Err(Error::shape("linear", self.shape(w), self.shape(b)));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            n,
            k,
            m,
            self.values[x.0].data(),
            k,
            1,
            self.values[w.0].data(),
            1,
            k,
            &mut out,
            1.0,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Linear { x, w, b }, ng))
    }

    /// `a·b` (or `a·bᵀ` when `trans_b`); both operands are differentiable.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.values[a.0].dims2("matmul")?;
        let (br, bc) = self.values[b.0].dims2("matmul")?;
        let (kb, n, rsb, csb) = if trans_b { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
        if k != kb {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.values[a.0].data(), k, 1, self.values[b.0].data(), rsb, csb, &mut out, 0.0);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), ng))
    }

    /// Sum of several same-shape nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Config("add_all of nothing".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = &self.values[x.0];
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.needs_grad[x.0];
        self.push(out, Op::Scale(x, factor), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.needs_grad[x.0];
        self.push(out, Op::Relu(x), ng)
    }

    /// Normalizes each row of `x: [n, d]` and applies `gamma`, `beta: [d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.values[x.0].dims2("layer_norm")?;
        if self.values[gamma.0].len() != d || self.values[beta.0].len() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.values[x.0].data();
        let g = self.values[gamma.0].data();
        let bt = self.values[beta.0].data();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * g[c] + bt[c];
            }
        }
        let ng = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.values[x.0].dims2("transpose")?;
        let src = self.values[x.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs_grad[x.0];
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), ng))
    }

    /// Concatenation along axis 0 (any rank) or axis 1 (rank 2).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        let out = match axis {
            0 => {
                let mut lead = 0;
                let mut data = Vec::new();
                for p in parts {
                    let s = self.shape(*p);
                    if s.len() != base.len() || s[1..] != base[1..] {
                        return Err(Error::shape("concat", &base, s));
                    }
                    lead += s[0];
                    data.extend_from_slice(self.values[p.0].data());
                }
                let mut shape = base.clone();
                shape[0] = lead;
                Tensor::new(shape, data)?
            }
            1 => {
                let rows = self.values[first.0].dims2("concat")?.0;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = self.values[p.0].dims2("concat")?;
                    if r != rows {
                        return Err(Error::shape("concat", &base, self.shape(*p)));
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut data = vec![0.0; rows * total];
                for r in 0..rows {
                    let mut off = 0;
                    for (p, &c) in parts.iter().zip(&widths) {
                        let src = &self.values[p.0].data()[r * c..(r + 1) * c];
                        data[r * total + off..r * total + off + c].copy_from_slice(src);
                        off += c;
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => return Err(Error::shape("concat", &base, &[axis])),
        };
        let ng = self.any_grad(parts);
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.values[x.0].clone().reshaped(shape)?;
        let ng = self.needs_grad[x.0];
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Rows `start..end` of a tensor (leading axis).
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start > end || end > shape[0] {
            return Err(Error::shape("slice_rows", &shape, &[start, end]));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.values[x.0].data()[start * row..end * row].to_vec();
        let mut s = shape;
        s[0] = end - start;
        let ng = self.needs_grad[x.0];
        Ok(self.push(Tensor::new(s, data)?, Op::SliceRows { x, start }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data().iter().sum();
        let ng = self.needs_grad[x.0];
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.values[pred.0].len() != self.values[target.0].len() || self.values[pred.0].is_empty() {
            return Err(Error::shape("mse", self.shape(pred), self.shape(target)));
        }
        let p = self.values[pred.0].data();
        let t = self.values[target.0].data();
        let s = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let ng = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target }, ng))
    }

    /// 2-D convolution of `x: [cin, h, w]` by `w: [cout, cin, kh, kw]` with
    /// stride 1 or 2 and "same" zero padding (`pad = k / 2`).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (cin, h, wd) = match xs.as_slice() {
            &[c, h, w] => (c, h, w),
            _ => return Err(Error::shape("conv2d", &xs, &ws)),
        };
        let (cout, wcin, kh, kw) = match ws.as_slice() {
            &[a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::shape("conv2d", &xs, &ws)),
        };
        if wcin != cin || !(stride == 1 || stride == 2) || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (wd + 2 * pw - kw) / stride + 1;
        let geom = ConvGeom { cin, h, w: wd, cout, kh, kw, stride, ph, pw, ho, wo };
        self.conv(x, w, b, geom, vec![cout, ho, wo])
    }

    /// 1-D convolution of `x: [cin, len]` by `w: [cout, cin, k]`, "same" padding.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (cin, len) = match xs.as_slice() {
            &[c, l] => (c, l),
            _ => return Err(Error::shape("conv1d", &xs, &ws)),
        };
        let (cout, wcin, k) = match ws.as_slice() {
            &[a, b, c] => (a, b, c),
            _ => return Err(Error::shape("conv1d", &xs, &ws)),
        };
        if wcin != cin || k % 2 == 0 {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        let geom = ConvGeom { cin, h: 1, w: len, cout, kh: 1, kw: k, stride: 1, ph: 0, pw: k / 2, ho: 1, wo: len };
        self.conv(x, w, b, geom, vec![cout, len])
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom, out_shape: Vec<usize>) -> Result<Var> {
        let cols = im2col(self.values[x.0].data(), &geom);
        let l = geom.out_len();
        let mut out = vec![0.0; geom.cout * l];
        if let Some(b) = b {
            let bias = self.values[b.0].data();
            if bias.len() != geom.cout {
                return Err(Error::shape("conv", self.shape(w), self.shape(b)));
            }
            for (row, &bv) in out.chunks_exact_mut(l).zip(bias) {
                row.fill(bv);
            }
        }
        let k = geom.patch();
        gemm(geom.cout, k, l, self.values[w.0].data(), k, 1, &cols, l, 1, &mut out, 1.0);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Conv { x, w, b, geom, cols }, ng))
    }

    /// 2×2 average pooling of `x: [c, h, w]` with even `h`, `w`.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (c, h, w) = match xs.as_slice() {
            &[c, h, w] if h % 2 == 0 && w % 2 == 0 => (c, h, w),
            _ => return Err(Error::shape("avg_pool2", &xs, &[2, 2])),
        };
        let src = self.values[x.0].data();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let base = ch * h * w;
                    let s = src[base + 2 * i * w + 2 * j]
                        + src[base + 2 * i * w + 2 * j + 1]
                        + src[base + (2 * i + 1) * w + 2 * j]
                        + src[base + (2 * i + 1) * w + 2 * j + 1];
                    out[ch * ho * wo + i * wo + j] = 0.25 * s;
                }
            }
        }
        let ng = self.needs_grad[x.0];
        Ok(self.push(Tensor::new(vec![c, ho, wo], out)?, Op::AvgPool2(x), ng))
    }

    /// Expands `x: [n, c]` into per-input B-spline basis values followed by
    /// `silu(x)`: the output is `[n, c·(G+k) + c]`.
    pub fn kan_expand(&mut self, x: Var, config: SplineConfig) -> Result<Var> {
        let (n, c) = self.values[x.0].dims2("kan_expand")?;
        let nb = config.num_basis();
        let width = c * nb + c;
        let src = self.values[x.0].data();
        let mut out = vec![0.0; n * width];
        let mut vals = [0.0; MAX_ORDER];
        for r in 0..n {
            let row = &mut out[r * width..(r + 1) * width];
            for p in 0..c {
                let v = src[r * c + p];
                let first = basis_span(v, &config, &mut vals, None);
                let dst = &mut row[p * nb + first..p * nb + first + config.degree + 1];
                dst.copy_from_slice(&vals[..config.degree + 1]);
                row[c * nb + p] = silu(v);
            }
        }
        let ng = self.needs_grad[x.0];
        Ok(self.push(Tensor::new(vec![n, width], out)?, Op::KanExpand { x, config }, ng))
    }

    /// Runs the backward pass from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].len() != 1 {
            return Err(Error::shape("backward", self.shape(root), &[1]));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.needs_grad[root.0] {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        let Graph { values, grads, ops, needs_grad } = self;
        for i in (0..=root.0).rev() {
            if !needs_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&ops[i], &g, i, values, grads, needs_grad);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    needs: &[bool],
    values: &[Tensor],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !needs[v.0] {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].len()]))
}

fn backward_node(
    op: &Op,
    g: &[f64],
    idx: usize,
    values: &[Tensor],
    grads: &mut [Option<Vec<f64>>],
    needs: &[bool],
) {
    let out_shape = values[idx].shape();
    match op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let (n, k) = (values[x.0].shape()[0], values[x.0].shape()[1]);
            let m = values[w.0].shape()[0];
            if let Some(dx) = slot(grads, needs, values, *x) {
                gemm(n, m, k, g, m, 1, values[w.0].data(), k, 1, dx, 1.0);
            }
            if let Some(dw) = slot(grads, needs, values, *w) {
                gemm(m, n, k, g, 1, m, values[x.0].data(), k, 1, dw, 1.0);
            }
            if let Some(b) = b {
                if let Some(db) = slot(grads, needs, values, *b) {
                    for row in g.chunks_exact(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::MatMul { a, b, trans_b } => {
            let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
            let n = out_shape[1];
            let bd = values[b.0].data();
            if let Some(da) = slot(grads, needs, values, *a) {
                // da = g · op(b)ᵀ
                if *trans_b {
                    gemm(m, n, k, g, n, 1, bd, k, 1, da, 1.0);
                } else {
                    gemm(m, n, k, g, n, 1, bd, 1, n, da, 1.0);
                }
            }
            let ad = values[a.0].data();
            if let Some(db) = slot(grads, needs, values, *b) {
                if *trans_b {
                    // b is [n, k]: db = gᵀ · a
                    gemm(n, m, k, g, 1, n, ad, k, 1, db, 1.0);
                } else {
                    // b is [k, n]: db = aᵀ · g
                    gemm(k, m, n, ad, 1, k, g, n, 1, db, 1.0);
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = slot(grads, needs, values, *v) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Scale(x, f) => {
            if let Some(d) = slot(grads, needs, values, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += f * g);
            }
        }
        Op::Relu(x) => {
            let xv = values[x.0].data();
            if let Some(d) = slot(grads, needs, values, *x) {
                for ((d, g), &v) in d.iter_mut().zip(g).zip(xv) {
                    if v > 0.0 {
                        *d += g;
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let d = out_shape[1];
            let gm = values[gamma.0].data();
            if let Some(dg) = slot(grads, needs, values, *gamma) {
                for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for c in 0..d {
                        dg[c] += gr[c] * xr[c];
                    }
                }
            }
            if let Some(db) = slot(grads, needs, values, *beta) {
                for gr in g.chunks_exact(d) {
                    db.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
            }
            if let Some(dx) = slot(grads, needs, values, *x) {
                let mut dxh = vec![0.0; d];
                for (r, (gr, xr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..d {
                        dxh[c] = gr[c] * gm[c];
                        m1 += dxh[c];
                        m2 += dxh[c] * xr[c];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let out = &mut dx[r * d..(r + 1) * d];
                    for c in 0..d {
                        out[c] += rstd[r] * (dxh[c] - m1 - xr[c] * m2);
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (values[x.0].shape()[0], values[x.0].shape()[1]);
            if let Some(d) = slot(grads, needs, values, *x) {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut off = 0;
                for p in parts {
                    let len = values[p.0].len();
                    if let Some(d) = slot(grads, needs, values, *p) {
                        d.iter_mut().zip(&g[off..off + len]).for_each(|(a, b)| *a += b);
                    }
                    off += len;
                }
            } else {
                let total = out_shape[1];
                let rows = out_shape[0];
                let mut off = 0;
                for p in parts {
                    let c = values[p.0].shape()[1];
                    if let Some(d) = slot(grads, needs, values, *p) {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + c];
                            d[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    off += c;
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(d) = slot(grads, needs, values, *x) {
                d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        Op::SliceRows { x, start } => {
            let row: usize = out_shape[1..].iter().product();
            if let Some(d) = slot(grads, needs, values, *x) {
                d[start * row..start * row + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
        }
        Op::SumAll(x) => {
            if let Some(d) = slot(grads, needs, values, *x) {
                d.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Mse { pred, target } => {
            let p = values[pred.0].data();
            let t = values[target.0].data();
            let scale = 2.0 * g[0] / p.len() as f64;
            if let Some(d) = slot(grads, needs, values, *pred) {
                for ((d, a), b) in d.iter_mut().zip(p).zip(t) {
                    *d += scale * (a - b);
                }
            }
            if let Some(d) = slot(grads, needs, values, *target) {
                for ((d, a), b) in d.iter_mut().zip(p).zip(t) {
                    *d -= scale * (a - b);
                }
            }
        }
        Op::Conv { x, w, b, geom, cols } => {
            let l = geom.out_len();
            let k = geom.patch();
            if let Some(dw) = slot(grads, needs, values, *w) {
                gemm(geom.cout, l, k, g, l, 1, cols, 1, l, dw, 1.0);
            }
            if let Some(b) = b {
                if let Some(db) = slot(grads, needs, values, *b) {
                    for (d, row) in db.iter_mut().zip(g.chunks_exact(l)) {
                        *d += row.iter().sum::<f64>();
                    }
                }
            }
            if needs[x.0] {
                let mut dcols = vec![0.0; k * l];
                gemm(k, geom.cout, l, values[w.0].data(), 1, k, g, l, 1, &mut dcols, 0.0);
                if let Some(dx) = slot(grads, needs, values, *x) {
                    col2im(&dcols, geom, dx);
                }
            }
        }
        Op::AvgPool2(x) => {
            let xs = values[x.0].shape();
            let (c, h, w) = (xs[0], xs[1], xs[2]);
            let (ho, wo) = (h / 2, w / 2);
            if let Some(d) = slot(grads, needs, values, *x) {
                for ch in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let gv = 0.25 * g[ch * ho * wo + i * wo + j];
                            let base = ch * h * w;
                            d[base + 2 * i * w + 2 * j] += gv;
                            d[base + 2 * i * w + 2 * j + 1] += gv;
                            d[base + (2 * i + 1) * w + 2 * j] += gv;
                            d[base + (2 * i + 1) * w + 2 * j + 1] += gv;
                        }
                    }
                }
            }
        }
        Op::KanExpand { x, config } => {
            let (n, c) = (values[x.0].shape()[0], values[x.0].shape()[1]);
            let nb = config.num_basis();
            let width = c * nb + c;
            let xv = values[x.0].data();
            if let Some(d) = slot(grads, needs, values, *x) {
                let mut vals = [0.0; MAX_ORDER];
                let mut ders = [0.0; MAX_ORDER];
                for r in 0..n {
                    let grow = &g[r * width..(r + 1) * width];
                    for p in 0..c {
                        let v = xv[r * c + p];
                        let mut acc = grow[c * nb + p] * silu_prime(v);
                        if (-1.0..=1.0).contains(&v) {
                            let first = basis_span(v, config, &mut vals, Some(&mut ders));
                            for l in 0..=config.degree {
                                acc += grow[p * nb + first + l] * ders[l];
                            }
                        }
                        d[r * c + p] += acc;
                    }
                }
            }
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let l = g.out_len();
    let mut cols = vec![0.0; g.patch() * l];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[c * g.h * g.w + iy as usize * g.w..];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let l = g.out_len();
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = c * g.h * g.w + iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

/// `z·σ(z)`.
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

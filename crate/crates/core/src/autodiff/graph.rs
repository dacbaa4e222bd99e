use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Additive pre-softmax value for masked attention scores.
pub const MASK_SENTINEL: f64 = -1e9;

const GELU_COEF: f64 = 0.044715;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    /// a · bᵀ
    MatMulNt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// x[m×n] + bias[n] broadcast over rows
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    CausalMask {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu {
        x: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Record of executed operations (the tape) together with the values they
/// produced. Nodes are appended in execution order, which is a topological
/// order by construction.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn dims2(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match *t {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(op, t, &[])),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor. Only leaves created with `requires_grad`
    /// receive gradients from [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul_nt", self.shape(a))?;
        let (n, k2) = dims2("matmul_nt", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for (o, &bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Scale { x, factor },
            rg,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Row-wise softmax over the last dimension, stabilized by subtracting
    /// each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x }, rg))
    }

    /// Adds [`MASK_SENTINEL`] to every entry above the diagonal of a square
    /// score matrix, so row `t` can only attend to columns `<= t`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (n, n2) = dims2("causal_mask", self.shape(x))?;
        if n != n2 {
            return Err(shape_err("causal_mask", self.shape(x), &[n, n]));
        }
        let sentinel = T::from_real(MASK_SENTINEL);
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for v in &mut out[i * n + i + 1..(i + 1) * n] {
                *v += sentinel;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, n], out)?, Op::CausalMask { x }, rg))
    }

    /// Per-row normalization over the last dimension followed by an affine
    /// map: `(x - mean) / sqrt(var + eps) * gamma + beta`, with the biased
    /// (population) variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        if d == 0 || eps <= 0.0 {
            return Err(Error::Contract("layer_norm needs d >= 1 and eps > 0".into()));
        }
        let eps = T::from_real(eps);
        let inv_d = T::one() / T::from_real(d as f64);
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.rows();
        let mut normed = vec![T::zero(); xv.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |acc, &v| acc + v) * inv_d;
            let var = row.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                normed[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Gelu { x }, rg)
    }

    /// Gathers rows of a `[V×d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2("embedding", self.shape(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index { index: bad, size: v });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, d) = dims2("concat_rows", self.shape(first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = dims2("concat_rows", self.shape(p))?;
            if c != d {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::ConcatRows { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2("slice_cols", self.shape(x))?;
        if start + len > n {
            return Err(Error::Index {
                index: start + len,
                size: n,
            });
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Places 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = dims2("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.shape(p))?;
            if r != m {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`, computed
    /// through log-sum-exp. Masked rows contribute nothing and their targets
    /// are not range-checked.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (n, v) = dims2("cross_entropy_mean", self.shape(logits))?;
        if targets.len() != n || mask.len() != n {
            return Err(shape_err(
                "cross_entropy_mean",
                self.shape(logits),
                &[targets.len(), mask.len()],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * v];
        let mut total = T::zero();
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= v {
                return Err(Error::Index { index: t, size: v });
            }
            let row = lv.row(r);
            if row.iter().any(|x| x.is_nan()) {
                return Err(Error::NonFinite("cross_entropy_mean"));
            }
            let lse = log_sum_exp(row);
            total += lse - row[t];
            let p = &mut probs[r * v..(r + 1) * v];
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - lse).exp();
            }
        }
        let loss = total / T::from_real(count as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss` and adds `d loss / d leaf` into
    /// the stored gradient of every reachable leaf created with
    /// `requires_grad`. Calling it twice without [`Graph::zero_grad`]
    /// therefore doubles those gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    gemm_nt(g, self.value(*b).data(), slot(grads, nodes, *a), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(self.value(*a).data(), g, slot(grads, nodes, *b), m, k, n);
                }
            }
            Op::MatMulNt { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if wants(*a) {
                    gemm_nn(g, self.value(*b).data(), slot(grads, nodes, *a), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(g, self.value(*a).data(), slot(grads, nodes, *b), m, n, k);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        slot(grads, nodes, v).iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
                }
                if wants(*bias) {
                    let d = self.value(*bias).numel();
                    let sb = slot(grads, nodes, *bias);
                    for row in g.chunks_exact(d) {
                        sb.iter_mut().zip(row).for_each(|(s, &gi)| *s += gi);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let sa = slot(grads, nodes, *a);
                    for i in 0..g.len() {
                        sa[i] += g[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let sb = slot(grads, nodes, *b);
                    for i in 0..g.len() {
                        sb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                slot(grads, nodes, *x)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, &gi)| *s += gi * *factor);
            }
            Op::Sum { x } => {
                let g0 = g[0];
                slot(grads, nodes, *x).iter_mut().for_each(|s| *s += g0);
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let sx = slot(grads, nodes, *x);
                for ((yr, gr), sr) in y.chunks_exact(d).zip(g.chunks_exact(d)).zip(sx.chunks_exact_mut(d)) {
                    let inner = yr.iter().zip(gr).fold(T::zero(), |acc, (&yi, &gi)| acc + yi * gi);
                    for j in 0..d {
                        sr[j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::CausalMask { x } => {
                slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(s, &gi)| *s += gi);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let d = node.value.last_dim();
                if wants(*beta) {
                    let sb = slot(grads, nodes, *beta);
                    for row in g.chunks_exact(d) {
                        sb.iter_mut().zip(row).for_each(|(s, &gi)| *s += gi);
                    }
                }
                if wants(*gamma) {
                    let sg = slot(grads, nodes, *gamma);
                    for (row, hrow) in g.chunks_exact(d).zip(normed.chunks_exact(d)) {
                        for j in 0..d {
                            sg[j] += row[j] * hrow[j];
                        }
                    }
                }
                if wants(*x) {
                    let gam = self.value(*gamma).data();
                    let dt = T::from_real(d as f64);
                    let sx = slot(grads, nodes, *x);
                    let mut dh = vec![T::zero(); d];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &normed[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            dh[j] = grow[j] * gam[j];
                            sum_dh += dh[j];
                            sum_dh_h += dh[j] * hrow[j];
                        }
                        let c = inv / dt;
                        for j in 0..d {
                            sx[r * d + j] += c * (dt * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                let sx = slot(grads, nodes, *x);
                for i in 0..g.len() {
                    sx[i] += g[i] * gelu_grad_scalar(xv[i]);
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.value.last_dim();
                let st = slot(grads, nodes, *table);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut st[id * d..(id + 1) * d];
                    dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(s, &gi)| *s += gi);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if wants(p) {
                        slot(grads, nodes, p)
                            .iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(s, &gi)| *s += gi);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.shape(*x)[1];
                let len = node.value.last_dim();
                let sx = slot(grads, nodes, *x);
                for (r, row) in g.chunks_exact(len).enumerate() {
                    sx[r * n + start..r * n + start + len]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(s, &gi)| *s += gi);
                }
            }
            Op::ConcatCols { parts } => {
                let total = node.value.last_dim();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if wants(p) {
                        let sp = slot(grads, nodes, p);
                        for (r, row) in g.chunks_exact(total).enumerate() {
                            sp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&row[col..col + w])
                                .for_each(|(s, &gi)| *s += gi);
                        }
                    }
                    col += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let v = self.value(*logits).last_dim();
                let scale = g[0] / T::from_real(*count as f64);
                let sl = slot(grads, nodes, *logits);
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if !m {
                        continue;
                    }
                    let p = &probs[r * v..(r + 1) * v];
                    let dst = &mut sl[r * v..(r + 1) * v];
                    for j in 0..v {
                        dst[j] += scale * p[j];
                    }
                    dst[t] -= scale;
                }
            }
        }
    }
}

fn slot<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'g mut Vec<T> {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let total = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + total.ln()
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_real((2.0 / std::f64::consts::PI).sqrt());
    let half = T::from_real(0.5);
    let u = c * (x + T::from_real(GELU_COEF) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_real((2.0 / std::f64::consts::PI).sqrt());
    let half = T::from_real(0.5);
    let k = T::from_real(GELU_COEF);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::from_real(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

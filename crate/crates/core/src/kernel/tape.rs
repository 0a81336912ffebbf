//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A forward pass pushes one node per primitive operation; `backward` walks
//! the tape in reverse and accumulates exact gradients. Parameters enter a
//! tape via [`Tape::param`], which remembers the store slot so gradients can
//! be scattered back with [`Tape::accumulate_param_grads`]. Gradient buffers
//! are only allocated when `backward` runs, so evaluation-only passes pay
//! nothing for them.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::kernel::optim::ParamStore;
use crate::kernel::rng::SeedRng;
use crate::kernel::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without intermediate underflow.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Pooling mode over the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

enum Op {
    Leaf,
    /// x:[in] or [rows,in], w:[out,in], b:[out]
    Affine { x: usize, w: usize, b: usize },
    /// Row `index` of matrix node `src`.
    Row { src: usize, index: usize },
    Concat { a: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    OneMinus { x: usize },
    Neg { x: usize },
    Scale { x: usize, c: f64 },
    Tanh { x: usize },
    Sigmoid { x: usize },
    LogSigmoid { x: usize },
    Dropout { x: usize, mask: Vec<f64> },
    StackRows { rows: Vec<usize> },
    PoolMax { x: usize, argmax: Vec<usize> },
    PoolMean { x: usize },
    Dot { a: usize, b: usize },
    Sum { xs: Vec<usize> },
    Softmax { x: usize },
    Pick { x: usize, index: usize },
    LnClamped { x: usize, min: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    param_slot: Option<usize>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`
    /// (zeros if the node is not on any path to the root).
    pub fn of(&self, v: Var, tape: &Tape) -> Tensor {
        match &self.per_node[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(tape.value(v)),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: format!("{:?}", left.shape()),
        right: format!("{:?}", right.shape()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param_slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no parameter gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind parameter `name` from the store onto the tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let slot = store.slot(name)?;
        let v = self.push(store.by_slot(slot).value.clone(), Op::Leaf);
        self.nodes[v.0].param_slot = Some(slot);
        Ok(v)
    }

    /// W·x + b: a vector x of width `in` maps to width `out`, and a
    /// matrix x maps row-wise.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if !wv.is_matrix() || !bv.is_vector() || wv.rows() != bv.len() {
            return Err(shape_err("affine", wv, bv));
        }
        let (out_dim, in_dim) = (wv.rows(), wv.cols());
        let value = if xv.is_vector() {
            if xv.len() != in_dim {
                return Err(shape_err("affine", xv, wv));
            }
            let mut y = bv.data().to_vec();
            for o in 0..out_dim {
                y[o] += dot_slices(wv.row(o), xv.data());
            }
            Tensor::vector(y)
        } else if xv.is_matrix() {
            if xv.cols() != in_dim {
                return Err(shape_err("affine", xv, wv));
            }
            let rows = xv.rows();
            let mut y = Tensor::zeros(vec![rows, out_dim]);
            for r in 0..rows {
                let xr = xv.row(r);
                let yr = y.row_mut(r);
                for o in 0..out_dim {
                    yr[o] = bv.data()[o] + dot_slices(wv.row(o), xr);
                }
            }
            y
        } else {
            return Err(shape_err("affine", xv, wv));
        };
        Ok(self.push(value, Op::Affine { x: x.0, w: w.0, b: b.0 }))
    }

    /// Row `index` of a matrix node (embedding lookup path).
    pub fn row(&mut self, src: Var, index: usize) -> Result<Var> {
        let m = self.value(src);
        if !m.is_matrix() || index >= m.rows() {
            return Err(Error::PositionOutOfRange {
                position: index,
                len: if m.is_matrix() { m.rows() } else { 0 },
            });
        }
        let value = Tensor::vector(m.row(index).to_vec());
        Ok(self.push(value, Op::Row { src: src.0, index }))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_vector() || !bv.is_vector() {
            return Err(shape_err("concat", av, bv));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        Ok(self.push(Tensor::vector(data), Op::Concat { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| 1.0 - v).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::OneMinus { x: x.0 })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| -v).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Neg { x: x.0 })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| c * v).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x: x.0, c })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Tanh { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| sigmoid(*v)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid { x: x.0 })
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| log_sigmoid(*v)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LogSigmoid { x: x.0 })
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). In inference mode (or at rate 0) the input var is
    /// returned unchanged, so the identity is exact.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut SeedRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidDropoutRate { rate });
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        Ok(self.push(value, Op::Dropout { x: x.0, mask }))
    }

    /// Stack T vector nodes of equal length d into a [T, d] matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptySequence { op: "stack_rows" });
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let rv = self.value(r);
            if !rv.is_vector() || rv.len() != d {
                return Err(shape_err("stack_rows", self.value(rows[0]), rv));
            }
            data.extend_from_slice(rv.data());
        }
        let value = Tensor::matrix(rows.len(), d, data).expect("shape agrees");
        Ok(self.push(
            value,
            Op::StackRows {
                rows: rows.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// Per-dimension max over the time axis of a [T, d] matrix. Gradient
    /// routes to the first occurrence of the maximum in each column.
    pub fn pool_max(&mut self, h: Var) -> Result<Var> {
        let m = self.value(h);
        if !m.is_matrix() {
            return Err(shape_err("pool_max", m, m));
        }
        if m.rows() == 0 {
            return Err(Error::EmptySequence { op: "pool_max" });
        }
        let (t_len, d) = (m.rows(), m.cols());
        let mut best = m.row(0).to_vec();
        let mut argmax = vec![0usize; d];
        for t in 1..t_len {
            for (j, &v) in m.row(t).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = t;
                }
            }
        }
        Ok(self.push(Tensor::vector(best), Op::PoolMax { x: h.0, argmax }))
    }

    /// Per-dimension arithmetic mean over the time axis of a [T, d] matrix.
    pub fn pool_mean(&mut self, h: Var) -> Result<Var> {
        let m = self.value(h);
        if !m.is_matrix() {
            return Err(shape_err("pool_mean", m, m));
        }
        if m.rows() == 0 {
            return Err(Error::EmptySequence { op: "pool_mean" });
        }
        let (t_len, d) = (m.rows(), m.cols());
        let mut out = vec![0.0; d];
        for t in 0..t_len {
            for (j, &v) in m.row(t).iter().enumerate() {
                out[j] += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= t_len as f64);
        Ok(self.push(Tensor::vector(out), Op::PoolMean { x: h.0 }))
    }

    pub fn pool_over_time(&mut self, h: Var, mode: PoolMode) -> Result<Var> {
        match mode {
            PoolMode::Max => self.pool_max(h),
            PoolMode::Mean => self.pool_mean(h),
        }
    }

    /// Inner product of two equal-length vectors; scalar result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_vector() || !bv.is_vector() || av.len() != bv.len() {
            return Err(shape_err("dot", av, bv));
        }
        let value = Tensor::scalar(dot_slices(av.data(), bv.data()));
        Ok(self.push(value, Op::Dot { a: a.0, b: b.0 }))
    }

    /// Sum of same-shaped nodes (used to fold per-position scalar losses).
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::EmptySequence { op: "sum" });
        }
        let mut acc = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            let xv = self.value(x);
            if xv.shape() != acc.shape() {
                return Err(shape_err("sum", &acc, xv));
            }
            acc.add_assign(xv);
        }
        Ok(self.push(
            acc,
            Op::Sum {
                xs: xs.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// Softmax over a vector (max-shifted for stability).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_vector() || xv.is_empty() {
            return Err(shape_err("softmax", xv, xv));
        }
        let max = xv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = Tensor::vector(exps.into_iter().map(|e| e / total).collect());
        Ok(self.push(value, Op::Softmax { x: x.0 }))
    }

    /// Element `index` of a vector as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_vector() || index >= xv.len() {
            return Err(Error::PositionOutOfRange {
                position: index,
                len: xv.len(),
            });
        }
        let value = Tensor::scalar(xv.data()[index]);
        Ok(self.push(value, Op::Pick { x: x.0, index }))
    }

    /// ln(max(x, min)) elementwise. Values at or below the clamp get zero
    /// gradient.
    pub fn ln_clamped(&mut self, x: Var, min: f64) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.max(min).ln())
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LnClamped { x: x.0, min })
    }

    /// Reverse sweep from a scalar root. Returns the per-node gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: format!("{:?}", self.value(root).shape()),
                right: "[] (scalar)".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { per_node: grads })
    }

    /// Add every param-bound node's gradient into the store accumulators.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(slot), Some(g)) = (node.param_slot, &grads.per_node[i]) {
                store.by_slot_mut(slot).grad.add_assign(g);
            }
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        // `grads` and `self.nodes` are disjoint, so reading parent values
        // while mutating one parent's gradient at a time borrows cleanly.
        fn slot<'g>(
            grads: &'g mut [Option<Tensor>],
            nodes: &[Node],
            parent: usize,
        ) -> &'g mut Tensor {
            let shape = nodes[parent].value.shape().to_vec();
            grads[parent].get_or_insert_with(|| Tensor::zeros(shape))
        }
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = &nodes[*x].value;
                let wv = &nodes[*w].value;
                let out_dim = wv.rows();
                if xv.is_vector() {
                    {
                        let gx = slot(grads, nodes, *x);
                        for o in 0..out_dim {
                            axpy(gx.data_mut(), wv.row(o), g.data()[o]);
                        }
                    }
                    {
                        let gw = slot(grads, nodes, *w);
                        for o in 0..out_dim {
                            axpy(gw.row_mut(o), xv.data(), g.data()[o]);
                        }
                    }
                    slot(grads, nodes, *b).add_assign(g);
                } else {
                    let rows = xv.rows();
                    {
                        let gx = slot(grads, nodes, *x);
                        for r in 0..rows {
                            let gr = g.row(r);
                            let gxr = gx.row_mut(r);
                            for o in 0..out_dim {
                                axpy(gxr, wv.row(o), gr[o]);
                            }
                        }
                    }
                    {
                        let gw = slot(grads, nodes, *w);
                        for r in 0..rows {
                            let gr = g.row(r);
                            for o in 0..out_dim {
                                axpy(gw.row_mut(o), xv.row(r), gr[o]);
                            }
                        }
                    }
                    let gb = slot(grads, nodes, *b);
                    for r in 0..rows {
                        axpy(gb.data_mut(), g.row(r), 1.0);
                    }
                }
            }
            Op::Row { src, index } => {
                let gs = slot(grads, nodes, *src);
                axpy(gs.row_mut(*index), g.data(), 1.0);
            }
            Op::Concat { a, b } => {
                let split = nodes[*a].value.len();
                slot(grads, nodes, *a)
                    .data_mut()
                    .iter_mut()
                    .zip(&g.data()[..split])
                    .for_each(|(d, s)| *d += s);
                slot(grads, nodes, *b)
                    .data_mut()
                    .iter_mut()
                    .zip(&g.data()[split..])
                    .for_each(|(d, s)| *d += s);
            }
            Op::Add { a, b } => {
                slot(grads, nodes, *a).add_assign(g);
                slot(grads, nodes, *b).add_assign(g);
            }
            Op::Mul { a, b } => {
                {
                    let bv = &nodes[*b].value;
                    let ga = slot(grads, nodes, *a);
                    for ((d, s), o) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += s * o;
                    }
                }
                let av = &nodes[*a].value;
                let gb = slot(grads, nodes, *b);
                for ((d, s), o) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *d += s * o;
                }
            }
            Op::OneMinus { x } | Op::Neg { x } => {
                slot(grads, nodes, *x).add_scaled(g, -1.0);
            }
            Op::Scale { x, c } => {
                slot(grads, nodes, *x).add_scaled(g, *c);
            }
            Op::Tanh { x } => {
                let y = &node.value;
                let gx = slot(grads, nodes, *x);
                for ((d, s), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *d += s * (1.0 - yv * yv);
                }
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let gx = slot(grads, nodes, *x);
                for ((d, s), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *d += s * yv * (1.0 - yv);
                }
            }
            Op::LogSigmoid { x } => {
                // d/dx log(sigmoid(x)) = sigmoid(-x)
                let xv = &nodes[*x].value;
                let gx = slot(grads, nodes, *x);
                for ((d, s), v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *d += s * sigmoid(-v);
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, nodes, *x);
                for ((d, s), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *d += s * m;
                }
            }
            Op::StackRows { rows } => {
                for (t, &r) in rows.iter().enumerate() {
                    slot(grads, nodes, r)
                        .data_mut()
                        .iter_mut()
                        .zip(g.row(t))
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::PoolMax { x, argmax } => {
                let gx = slot(grads, nodes, *x);
                for (j, (&t, &s)) in argmax.iter().zip(g.data()).enumerate() {
                    gx.row_mut(t)[j] += s;
                }
            }
            Op::PoolMean { x } => {
                let t_len = nodes[*x].value.rows();
                let inv = 1.0 / t_len as f64;
                let gx = slot(grads, nodes, *x);
                for t in 0..t_len {
                    axpy(gx.row_mut(t), g.data(), inv);
                }
            }
            Op::Dot { a, b } => {
                let s = g.item();
                {
                    let bv = nodes[*b].value.clone();
                    slot(grads, nodes, *a).add_scaled(&bv, s);
                }
                let av = nodes[*a].value.clone();
                slot(grads, nodes, *b).add_scaled(&av, s);
            }
            Op::Sum { xs } => {
                for &x in xs {
                    slot(grads, nodes, x).add_assign(g);
                }
            }
            Op::Softmax { x } => {
                let y = &node.value;
                let inner = dot_slices(g.data(), y.data());
                let gx = slot(grads, nodes, *x);
                for ((d, s), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *d += yv * (s - inner);
                }
            }
            Op::Pick { x, index } => {
                slot(grads, nodes, *x).data_mut()[*index] += g.item();
            }
            Op::LnClamped { x, min } => {
                let xv = &nodes[*x].value;
                let gx = slot(grads, nodes, *x);
                for ((d, s), v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    if *v > *min {
                        *d += s / v;
                    }
                }
            }
        }
    }
}

/// Four independent accumulators break the floating-point dependency chain
/// so the loop keeps several multiply-adds in flight.
#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut acc = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub(crate) fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

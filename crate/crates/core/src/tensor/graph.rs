use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub type NodeId = usize;

/// Running statistics and hyperparameters of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnState {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Max,
}

enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
    },
    Relu {
        a: NodeId,
    },
    GatherRows {
        a: NodeId,
        index: Rc<[usize]>,
    },
    GatherCols {
        a: NodeId,
        index: Rc<[usize]>,
    },
    Segment {
        a: NodeId,
        offsets: Rc<[usize]>,
        mean: bool,
    },
    SegmentMax {
        a: NodeId,
        argmax: Vec<usize>,
    },
    ScaleRows {
        a: NodeId,
        weights: Rc<[f64]>,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Reshape {
        a: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Reduce {
        a: NodeId,
        mean: bool,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Rc<[usize]>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Dynamic tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that accumulates gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Clears accumulated gradients on every leaf.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Back-propagates from a scalar `loss`. Gradients are added to whatever
    /// the leaves already hold, so repeated calls accumulate.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut leaf_grads = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.len() != 1 {
                return Err(Error::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.value.shape()
                )));
            }
            let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
            grads.resize_with(loss.id + 1, || None);
            grads[loss.id] = Some(vec![1.0]);
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                    continue;
                }
                backprop(&nodes, node, &g, &mut grads);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Lazily allocated gradient buffer for `id`, or `None` if it needs none.
fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    id: NodeId,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: NodeId| -> &Tensor { &nodes[id].value };
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let (la, lb) = (av.len(), bv.len());
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, gi) in g.iter().enumerate() {
                    let d = match kind {
                        BinaryKind::Add | BinaryKind::Sub => *gi,
                        BinaryKind::Mul => gi * bv[i % lb],
                        BinaryKind::Max => {
                            if av[i % la] >= bv[i % lb] {
                                *gi
                            } else {
                                0.0
                            }
                        }
                    };
                    ga[i % la] += d;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for (i, gi) in g.iter().enumerate() {
                    let d = match kind {
                        BinaryKind::Add => *gi,
                        BinaryKind::Sub => -gi,
                        BinaryKind::Mul => gi * av[i % la],
                        BinaryKind::Max => {
                            if av[i % la] >= bv[i % lb] {
                                0.0
                            } else {
                                *gi
                            }
                        }
                    };
                    gb[i % lb] += d;
                }
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += factor * gi);
            }
        }
        Op::MatMul { a, b } => {
            let (at, bt) = (val(*a), val(*b));
            let (n, k) = (at.shape()[0], at.shape()[1]);
            let m = bt.shape()[1];
            let (ad, bd) = (at.data(), bt.data());
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = dC * B^T
                let mut tmp = vec![0.0; n * k];
                par::rows_mut(&mut tmp, k, |i, row| {
                    let gr = &g[i * m..(i + 1) * m];
                    for (kk, out) in row.iter_mut().enumerate() {
                        *out = dot(gr, &bd[kk * m..(kk + 1) * m]);
                    }
                });
                ga.iter_mut().zip(tmp).for_each(|(x, v)| *x += v);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // dB = A^T * dC
                let acc = par::reduce_blocks(n, k * m, |s, e, acc| {
                    for i in s..e {
                        let gr = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            axpy(ad[i * k + kk], gr, &mut acc[kk * m..(kk + 1) * m]);
                        }
                    }
                });
                gb.iter_mut().zip(acc).for_each(|(x, v)| *x += v);
            }
        }
        Op::Linear { x, w, bias } => {
            let (xt, wt) = (val(*x), val(*w));
            let (rows, cin) = (xt.shape()[0], xt.shape()[1]);
            let cout = wt.shape()[0];
            let (xd, wd) = (xt.data(), wt.data());
            if let Some(gx) = slot(nodes, grads, *x) {
                par::rows_mut(gx, cin, |i, row| {
                    let gr = &g[i * cout..(i + 1) * cout];
                    for (o, go) in gr.iter().enumerate() {
                        axpy(*go, &wd[o * cin..(o + 1) * cin], row);
                    }
                });
            }
            if let Some(gw) = slot(nodes, grads, *w) {
                let acc = par::reduce_blocks(rows, cout * cin, |s, e, acc| {
                    for i in s..e {
                        let xr = &xd[i * cin..(i + 1) * cin];
                        for o in 0..cout {
                            axpy(g[i * cout + o], xr, &mut acc[o * cin..(o + 1) * cin]);
                        }
                    }
                });
                gw.iter_mut().zip(acc).for_each(|(a, v)| *a += v);
            }
            if let Some(b) = bias {
                if let Some(gb) = slot(nodes, grads, *b) {
                    let acc = column_sums(g, rows, cout);
                    gb.iter_mut().zip(acc).for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::Relu { a } => {
            let av = val(*a).data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((x, gi), v) in ga.iter_mut().zip(g).zip(av) {
                    if *v > 0.0 {
                        *x += gi;
                    }
                }
            }
        }
        Op::GatherRows { a, index } => {
            let cols = val(*a).cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (r, &src) in index.iter().enumerate() {
                    let dst = &mut ga[src * cols..(src + 1) * cols];
                    dst.iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(x, v)| *x += v);
                }
            }
        }
        Op::GatherCols { a, index } => {
            let cols = val(*a).cols();
            let out_cols = index.len();
            let index: &[usize] = index;
            if let Some(ga) = slot(nodes, grads, *a) {
                par::rows_mut(ga, cols, |r, row| {
                    let gr = &g[r * out_cols..(r + 1) * out_cols];
                    for (j, &c) in index.iter().enumerate() {
                        row[c] += gr[j];
                    }
                });
            }
        }
        Op::Segment { a, offsets, mean } => {
            let cols = val(*a).cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (s, w) in offsets.windows(2).enumerate() {
                    let scale = if *mean { 1.0 / (w[1] - w[0]) as f64 } else { 1.0 };
                    let gs = &g[s * cols..(s + 1) * cols];
                    for r in w[0]..w[1] {
                        let dst = &mut ga[r * cols..(r + 1) * cols];
                        dst.iter_mut()
                            .zip(gs)
                            .for_each(|(x, v)| *x += v * scale);
                    }
                }
            }
        }
        Op::SegmentMax { a, argmax } => {
            let cols = val(*a).cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, (&src, gi)) in argmax.iter().zip(g).enumerate() {
                    ga[src * cols + i % cols] += gi;
                }
            }
        }
        Op::ScaleRows { a, weights } => {
            let cols = val(*a).cols();
            let weights: &[f64] = weights;
            if let Some(ga) = slot(nodes, grads, *a) {
                par::rows_mut(ga, cols, |r, row| {
                    let w = weights[r];
                    row.iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(x, v)| *x += w * v);
                });
            }
        }
        Op::Concat { parts } => {
            let total: usize = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let c = val(p).cols();
                if let Some(gp) = slot(nodes, grads, p) {
                    par::rows_mut(gp, c, |r, row| {
                        let src = &g[r * total + offset..r * total + offset + c];
                        row.iter_mut().zip(src).for_each(|(x, v)| *x += v);
                    });
                }
                offset += c;
            }
        }
        Op::Reshape { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(x, v)| *x += v);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => {
            let d = inv_std.len();
            let n = xhat.len() / d;
            let gam = val(*gamma).data();
            let sum_dy = column_sums(g, n, d);
            let prod: Vec<f64> = g.iter().zip(xhat).map(|(a, b)| a * b).collect();
            let sum_dy_xhat = column_sums(&prod, n, d);
            if let Some(gx) = slot(nodes, grads, *x) {
                let nf = n as f64;
                par::rows_mut(gx, d, |r, row| {
                    for c in 0..d {
                        let i = r * d + c;
                        let k = gam[c] * inv_std[c];
                        row[c] += if *training {
                            k / nf * (nf * g[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c])
                        } else {
                            k * g[i]
                        };
                    }
                });
            }
            if let Some(gg) = slot(nodes, grads, *gamma) {
                gg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, v)| *a += v);
            }
            if let Some(gb) = slot(nodes, grads, *beta) {
                gb.iter_mut().zip(&sum_dy).for_each(|(a, v)| *a += v);
            }
        }
        Op::Reduce { a, mean } => {
            let n = val(*a).len();
            let scale = if *mean { g[0] / n as f64 } else { g[0] };
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|x| *x += scale);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let n = targets.len();
            let c = probs.len() / n;
            let scale = g[0] / n as f64;
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn column_sums(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    par::reduce_blocks(rows, cols, |s, e, acc| {
        for r in s..e {
            axpy(1.0, &data[r * cols..(r + 1) * cols], acc);
        }
    })
}

fn validate_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&rows) {
        return Err(Error::Contract(format!(
            "segment offsets must run from 0 to {rows}"
        )));
    }
    for (s, w) in offsets.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::DegenerateNeighborhood { segment: s });
        }
    }
    Ok(())
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        let rg = self.graph.requires(&[self.id]);
        self.graph.push(value, op, rg)
    }

    fn binary(&self, other: Var<'g>, kind: BinaryKind, name: &'static str) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        let shape = if sa == sb || sa.ends_with(sb) {
            sa.to_vec()
        } else if sb.ends_with(sa) {
            sb.to_vec()
        } else {
            return Err(Error::dim(name, sa, sb));
        };
        let (ad, bd) = (a.data(), b.data());
        let (la, lb) = (ad.len(), bd.len());
        let n = la.max(lb);
        let data = (0..n)
            .map(|i| {
                let (x, y) = (ad[i % la], bd[i % lb]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Max => {
                        if x >= y {
                            x
                        } else {
                            y
                        }
                    }
                }
            })
            .collect();
        let rg = self.graph.requires(&[self.id, other.id]);
        Ok(self.graph.push(
            Tensor { shape, data },
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            rg,
        ))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Max, "maximum")
    }

    pub fn scale(&self, factor: f64) -> Var<'g> {
        let v = self.value();
        let data = v.data().iter().map(|x| x * factor).collect();
        self.unary(
            Tensor {
                shape: v.shape().to_vec(),
                data,
            },
            Op::Scale {
                a: self.id,
                factor,
            },
        )
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (n, k) = a.expect_2d("matmul")?;
        let (k2, m) = b.expect_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", a.shape(), b.shape()));
        }
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; n * m];
        par::rows_mut(&mut out, m, |i, row| {
            for kk in 0..k {
                axpy(ad[i * k + kk], &bd[kk * m..(kk + 1) * m], row);
            }
        });
        let rg = self.graph.requires(&[self.id, other.id]);
        Ok(self.graph.push(
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            rg,
        ))
    }

    /// Row-wise affine map `x * W^T + b` with `W` shaped `[out, in]`.
    pub fn linear(&self, weight: Var<'g>, bias: Option<Var<'g>>) -> Result<Var<'g>> {
        let (x, w) = (self.value(), weight.value());
        let (rows, cin) = x.expect_2d("linear")?;
        let (cout, win) = w.expect_2d("linear")?;
        if cin != win {
            return Err(Error::dim("linear", x.shape(), w.shape()));
        }
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.len() != cout {
                return Err(Error::dim("linear bias", w.shape(), b.shape()));
            }
        }
        let bd: Option<&[f64]> = bv.as_deref().map(Tensor::data);
        let (xd, wd) = (x.data(), w.data());
        let mut out = vec![0.0; rows * cout];
        par::rows_mut(&mut out, cout, |i, row| {
            let xr = &xd[i * cin..(i + 1) * cin];
            for (o, y) in row.iter_mut().enumerate() {
                *y = dot(xr, &wd[o * cin..(o + 1) * cin]);
            }
            if let Some(b) = bd {
                row.iter_mut().zip(b).for_each(|(y, bb)| *y += bb);
            }
        });
        let mut ids = vec![self.id, weight.id];
        ids.extend(bias.map(|b| b.id));
        let rg = self.graph.requires(&ids);
        Ok(self.graph.push(
            Tensor {
                shape: vec![rows, cout],
                data: out,
            },
            Op::Linear {
                x: self.id,
                w: weight.id,
                bias: bias.map(|b| b.id),
            },
            rg,
        ))
    }

    /// `max(0, x)` with subgradient 0 at the kink.
    pub fn relu(&self) -> Var<'g> {
        let v = self.value();
        let data = v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.unary(
            Tensor {
                shape: v.shape().to_vec(),
                data,
            },
            Op::Relu { a: self.id },
        )
    }

    /// Row selection; the backward pass scatter-adds (duplicates accumulate).
    pub fn gather_rows(&self, index: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        let index: Rc<[usize]> = index.into();
        let v = self.value();
        let rows = v.rows();
        let cols = v.cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let src = v.data();
        let idx: &[usize] = &index;
        let mut out = vec![0.0; index.len() * cols];
        par::rows_mut(&mut out, cols, |r, row| {
            let s = idx[r];
            row.copy_from_slice(&src[s * cols..(s + 1) * cols]);
        });
        let mut shape = v.shape().to_vec();
        shape[0] = index.len();
        Ok(self.unary(
            Tensor { shape, data: out },
            Op::GatherRows { a: self.id, index },
        ))
    }

    /// Column selection on a 2-D tensor.
    pub fn gather_cols(&self, index: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        let index: Rc<[usize]> = index.into();
        let v = self.value();
        let (rows, cols) = v.expect_2d("gather_cols")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return Err(Error::Index {
                op: "gather_cols",
                index: bad,
                len: cols,
            });
        }
        let src = v.data();
        let oc = index.len();
        let idx: &[usize] = &index;
        let mut out = vec![0.0; rows * oc];
        par::rows_mut(&mut out, oc, |r, row| {
            for (j, &c) in idx.iter().enumerate() {
                row[j] = src[r * cols + c];
            }
        });
        Ok(self.unary(
            Tensor {
                shape: vec![rows, oc],
                data: out,
            },
            Op::GatherCols { a: self.id, index },
        ))
    }

    fn segment(&self, offsets: Rc<[usize]>, mean: bool) -> Result<Var<'g>> {
        let v = self.value();
        let rows = v.rows();
        let cols = v.cols();
        validate_offsets(&offsets, rows)?;
        let segs = offsets.len() - 1;
        let src = v.data();
        let offs: &[usize] = &offsets;
        let mut out = vec![0.0; segs * cols];
        par::rows_mut(&mut out, cols, |s, row| {
            let (b, e) = (offs[s], offs[s + 1]);
            for r in b..e {
                axpy(1.0, &src[r * cols..(r + 1) * cols], row);
            }
            if mean {
                let n = (e - b) as f64;
                row.iter_mut().for_each(|x| *x /= n);
            }
        });
        let mut shape = v.shape().to_vec();
        shape[0] = segs;
        Ok(self.unary(
            Tensor { shape, data: out },
            Op::Segment {
                a: self.id,
                offsets,
                mean,
            },
        ))
    }

    /// Mean over each contiguous row range `offsets[s]..offsets[s+1]`.
    pub fn segment_mean(&self, offsets: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        self.segment(offsets.into(), true)
    }

    pub fn segment_sum(&self, offsets: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        self.segment(offsets.into(), false)
    }

    /// Per-segment, per-column maximum. Gradient goes to the first argmax row.
    pub fn segment_max(&self, offsets: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        let offsets: Rc<[usize]> = offsets.into();
        let v = self.value();
        let rows = v.rows();
        let cols = v.cols();
        if rows == 0 {
            return Err(Error::Argument("max pool over zero rows".into()));
        }
        validate_offsets(&offsets, rows)?;
        let segs = offsets.len() - 1;
        let src = v.data();
        let mut out = vec![f64::NEG_INFINITY; segs * cols];
        let mut argmax = vec![0usize; segs * cols];
        for s in 0..segs {
            for r in offsets[s]..offsets[s + 1] {
                for c in 0..cols {
                    let x = src[r * cols + c];
                    let i = s * cols + c;
                    if r == offsets[s] || x > out[i] {
                        out[i] = x;
                        argmax[i] = r;
                    }
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] = segs;
        Ok(self.unary(
            Tensor { shape, data: out },
            Op::SegmentMax { a: self.id, argmax },
        ))
    }

    /// Multiplies row `r` by the constant `weights[r]`.
    pub fn scale_rows(&self, weights: impl Into<Rc<[f64]>>) -> Result<Var<'g>> {
        let weights: Rc<[f64]> = weights.into();
        let v = self.value();
        let cols = v.cols();
        if weights.len() != v.rows() {
            return Err(Error::dim("scale_rows", v.shape(), &[weights.len()]));
        }
        let mut out = v.data().to_vec();
        let w: &[f64] = &weights;
        par::rows_mut(&mut out, cols, |r, row| {
            row.iter_mut().for_each(|x| *x *= w[r]);
        });
        Ok(self.unary(
            Tensor {
                shape: v.shape().to_vec(),
                data: out,
            },
            Op::ScaleRows { a: self.id, weights },
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'g>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape { a: self.id }))
    }

    pub fn sum(&self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Reduce { a: self.id, mean: false })
    }

    pub fn mean(&self) -> Var<'g> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.unary(Tensor::scalar(s), Op::Reduce { a: self.id, mean: true })
    }

    /// Per-channel normalization of an `[n, d]` tensor followed by the affine
    /// map `gamma * x + beta`. Training mode uses (biased) batch statistics
    /// and folds them into `state` with its momentum; the running variance
    /// receives the unbiased estimate. Eval mode uses the running statistics.
    pub fn batch_norm(
        &self,
        gamma: Var<'g>,
        beta: Var<'g>,
        state: &mut BnState,
        training: bool,
    ) -> Result<Var<'g>> {
        let x = self.value();
        let (n, d) = x.expect_2d("batch_norm")?;
        if gamma.value().len() != d || beta.value().len() != d || state.running_mean.len() != d {
            return Err(Error::dim("batch_norm", x.shape(), gamma.value().shape()));
        }
        if training && n < 2 {
            return Err(Error::InsufficientBatch { rows: n });
        }
        let xd = x.data();
        let (mean, var) = if training {
            let mean: Vec<f64> = column_sums(xd, n, d).into_iter().map(|s| s / n as f64).collect();
            let sq = par::reduce_blocks(n, d, |s, e, acc| {
                for r in s..e {
                    for c in 0..d {
                        let t = xd[r * d + c] - mean[c];
                        acc[c] += t * t;
                    }
                }
            });
            let var: Vec<f64> = sq.into_iter().map(|s| s / n as f64).collect();
            let m = state.momentum;
            let unbias = n as f64 / (n as f64 - 1.0);
            for c in 0..d {
                state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
                state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c] * unbias;
            }
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let (gd, bd) = (gv.data(), bv.data());
        let mut xhat = vec![0.0; n * d];
        par::rows_mut(&mut xhat, d, |r, row| {
            for c in 0..d {
                row[c] = (xd[r * d + c] - mean[c]) * inv_std[c];
            }
        });
        let mut out = vec![0.0; n * d];
        par::rows_mut(&mut out, d, |r, row| {
            for c in 0..d {
                row[c] = gd[c] * xhat[r * d + c] + bd[c];
            }
        });
        let rg = self.graph.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.graph.push(
            Tensor {
                shape: vec![n, d],
                data: out,
            },
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                training,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        let (n, c) = v.expect_2d("cross_entropy")?;
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", v.shape(), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Argument(format!(
                "target {t} out of range for {c} classes"
            )));
        }
        let z = v.data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &z[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - mx).exp() / se;
            }
            loss += (mx - row[targets[r]]) + se.ln();
        }
        loss /= n as f64;
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.into(),
                probs,
            },
        ))
    }
}

/// Concatenates 2-D tensors with equal row counts along columns.
pub fn concat_cols<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
    let graph = first.graph;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let rows = vals[0].expect_2d("concat")?.0;
    for v in &vals {
        let (r, _) = v.expect_2d("concat")?;
        if r != rows {
            return Err(Error::dim("concat", vals[0].shape(), v.shape()));
        }
    }
    let total: usize = vals.iter().map(|v| v.cols()).sum();
    let blocks: Vec<(&[f64], usize)> = vals.iter().map(|v| (v.data(), v.cols())).collect();
    let mut out = vec![0.0; rows * total];
    par::rows_mut(&mut out, total, |r, row| {
        let mut off = 0;
        for &(data, c) in &blocks {
            row[off..off + c].copy_from_slice(&data[r * c..(r + 1) * c]);
            off += c;
        }
    });
    let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
    let rg = graph.requires(&ids);
    Ok(graph.push(
        Tensor {
            shape: vec![rows, total],
            data: out,
        },
        Op::Concat { parts: ids },
        rg,
    ))
}

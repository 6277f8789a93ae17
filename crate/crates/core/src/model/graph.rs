//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every forward pass records its operations on a [`Graph`]; inference simply
//! never calls [`Graph::backward`].

use std::collections::HashMap;

use super::params::ParamId;
use super::tensor::{gemm, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow { a: NodeId, row: NodeId },
    Scale(NodeId, f64),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor, inv_std: Vec<f64> },
    Softmax(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { a: NodeId, start: usize },
    SliceCols { a: NodeId, start: usize },
    Reshape(NodeId),
    BceMean { logits: NodeId, target: Tensor },
    SquaredError { a: NodeId, target: f64 },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
    grads: Vec<Option<Tensor>>,
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, t: Tensor) {
    match &mut grads[id.0] {
        Some(e) => e.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a model parameter; repeated requests share one node.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(value.clone(), Op::Leaf);
        self.params.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = gemm(ta, tb, self.value(a), self.value(b));
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(v, Op::Mul(a, b))
    }

    /// Add a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, r.cols);
        for chunk in v.data.chunks_mut(r.cols) {
            for (x, b) in chunk.iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1 x cols`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.data[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols.max(1)) {
            let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in chunk.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| gelu_parts(x).0);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        let data = x.data[start * x.cols..(start + len) * x.cols].to_vec();
        let v = Tensor { rows: len, cols: x.cols, data };
        self.push(v, Op::SliceRows { a, start })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols);
        let v = Tensor { rows, cols, data: x.data.clone() };
        self.push(v, Op::Reshape(a))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `target`.
    pub fn bce_mean(&mut self, logits: NodeId, target: Tensor) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.shape(), target.shape());
        let n = z.len() as f64;
        let total: f64 = z
            .data
            .iter()
            .zip(&target.data)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        self.push(Tensor::scalar(total / n), Op::BceMean { logits, target })
    }

    /// `(a - target)²` for a scalar node.
    pub fn squared_error(&mut self, a: NodeId, target: f64) -> NodeId {
        let d = self.value(a).item() - target;
        self.push(Tensor::scalar(d * d), Op::SquaredError { a, target })
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            v.add_assign(self.value(p));
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Back-propagate from scalar `root`.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = if !ta { gemm(false, !tb, &g, bv) } else { gemm(*tb, true, bv, &g) };
                    let db = if !tb { gemm(!ta, false, av, &g) } else { gemm(true, *ta, &g, av) };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = Tensor { rows: g.rows, cols: g.cols, data: g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect() };
                    let db = Tensor { rows: g.rows, cols: g.cols, data: g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect() };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow { a, row } => {
                    let mut dr = Tensor::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        for (d, v) in dr.data.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *row, dr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|v| v * s)),
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = &self.nodes[gamma.0].value.data;
                    let (rows, cols) = xhat.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            dg.data[c] += gr[c] * hr[c];
                            db.data[c] += gr[c];
                            let dh = gr[c] * gam[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        for c in 0..cols {
                            let dh = gr[c] * gam[c];
                            dx.data[r * cols + c] = inv_std[r] * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut dx = Tensor::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        let (pr, gr) = (p.row(r), g.row(r));
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for c in 0..p.cols {
                            dx.data[r * p.cols + c] = pr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let data = x.data.iter().zip(&g.data).map(|(&x, &d)| d * gelu_parts(x).1).collect();
                    accumulate(&mut grads, *a, Tensor { rows: x.rows, cols: x.cols, data });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = y.data.iter().zip(&g.data).map(|(&y, &d)| d * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, Tensor { rows: y.rows, cols: y.cols, data });
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.nodes[p.0].value.shape();
                        let data = g.data[off * c..(off + r) * c].to_vec();
                        accumulate(&mut grads, p, Tensor { rows: r, cols: c, data });
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.nodes[p.0].value.shape();
                        let mut t = Tensor::zeros(r, c);
                        for row in 0..r {
                            t.data[row * c..(row + 1) * c].copy_from_slice(&g.row(row)[off..off + c]);
                        }
                        accumulate(&mut grads, p, t);
                        off += c;
                    }
                }
                Op::SliceRows { a, start } => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut t = Tensor::zeros(r, c);
                    t.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, t);
                }
                Op::SliceCols { a, start } => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut t = Tensor::zeros(r, c);
                    for row in 0..r {
                        t.data[row * c + start..row * c + start + g.cols].copy_from_slice(g.row(row));
                    }
                    accumulate(&mut grads, *a, t);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Tensor { rows: r, cols: c, data: g.data });
                }
                Op::BceMean { logits, target } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g.item() / z.len() as f64;
                    let data = z.data.iter().zip(&target.data).map(|(&z, &t)| (sigmoid(z) - t) * scale).collect();
                    accumulate(&mut grads, *logits, Tensor { rows: z.rows, cols: z.cols, data });
                }
                Op::SquaredError { a, target } => {
                    let d = self.nodes[a.0].value.item() - target;
                    accumulate(&mut grads, *a, Tensor::scalar(2.0 * d * g.item()));
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
            }
        }
        self.grads = grads;
    }

    /// Gradient of a node after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Parameter gradients after [`Graph::backward`].
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> = self
            .params
            .iter()
            .filter_map(|(&p, &n)| self.grad(n).map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

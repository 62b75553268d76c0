//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in execution order,
//! so node ids are already a topological order. [`Tape::backward`] walks the
//! list once in reverse. Tapes are cheap and rebuilt for every sequence.

use std::borrow::Cow;

use super::tensor::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    Mul,
    Add,
}

impl Elementwise {
    fn arity(self) -> usize {
        match self {
            Elementwise::Sigmoid | Elementwise::Tanh | Elementwise::Relu => 1,
            Elementwise::Mul | Elementwise::Add => 2,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    Unary(Elementwise, NodeId),
    Binary(Elementwise, NodeId, NodeId),
    Concat(Vec<NodeId>),
    SumPool(NodeId),
    Bce { pred: NodeId, target: f64 },
    Scale(NodeId, f64),
    MeanRows(NodeId, Vec<usize>),
    Index(NodeId, usize),
}

#[derive(Debug)]
struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Cow<'a, Tensor>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Records a borrowed tensor, typically a model parameter.
    pub fn leaf(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Borrowed(value))
    }

    /// Records an owned tensor (inputs, constants).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Owned(value))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    fn vector_len(&self, op: &'static str, id: NodeId) -> Result<usize> {
        let v = self.value(id);
        if v.rank() != 1 {
            return Err(Error::Rank {
                op,
                expected: 1,
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.len())
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let wt = self.value(w);
        let xt = self.value(x);
        let (rows, cols) = match wt.shape() {
            [r, c] => (*r, *c),
            _ => return Err(Error::dim("matvec", wt.shape(), xt.shape())),
        };
        if xt.shape() != [cols] {
            return Err(Error::dim("matvec", wt.shape(), xt.shape()));
        }
        let wd = wt.data();
        let xd = xt.data();
        let out: Vec<f64> = (0..rows)
            .map(|i| dot(&wd[i * cols..(i + 1) * cols], xd))
            .collect();
        Ok(self.push(Op::MatVec(w, x), Cow::Owned(Tensor::vector(out))))
    }

    pub fn elementwise(&mut self, kind: Elementwise, operands: &[NodeId]) -> Result<NodeId> {
        if operands.len() != kind.arity() {
            return Err(Error::Contract(format!(
                "{kind:?} takes {} operand(s), got {}",
                kind.arity(),
                operands.len()
            )));
        }
        match kind {
            Elementwise::Sigmoid | Elementwise::Tanh | Elementwise::Relu => {
                let x = operands[0];
                let xt = self.value(x);
                let f: fn(f64) -> f64 = match kind {
                    Elementwise::Sigmoid => sigmoid,
                    Elementwise::Tanh => f64::tanh,
                    _ => |v: f64| if v > 0.0 { v } else { 0.0 },
                };
                let data = xt.data().iter().map(|&v| f(v)).collect();
                let out = Tensor::with_shape(xt.shape(), data)?;
                Ok(self.push(Op::Unary(kind, x), Cow::Owned(out)))
            }
            Elementwise::Mul | Elementwise::Add => {
                let (a, b) = (operands[0], operands[1]);
                let at = self.value(a);
                let bt = self.value(b);
                if at.shape() != bt.shape() {
                    return Err(Error::dim(
                        if kind == Elementwise::Mul { "mul" } else { "add" },
                        at.shape(),
                        bt.shape(),
                    ));
                }
                let data = at
                    .data()
                    .iter()
                    .zip(bt.data())
                    .map(|(x, y)| if kind == Elementwise::Mul { x * y } else { x + y })
                    .collect();
                let out = Tensor::with_shape(at.shape(), data)?;
                Ok(self.push(Op::Binary(kind, a, b), Cow::Owned(out)))
            }
        }
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Tanh, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Relu, &[x])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Mul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Add, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            self.vector_len("concat", p)?;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Cow::Owned(Tensor::vector(data))))
    }

    /// Sum of the entries of a vector, as a rank-0 scalar.
    pub fn sum_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.vector_len("sum_pool", x)?;
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Op::SumPool(x), Cow::Owned(Tensor::scalar(s))))
    }

    /// Binary cross-entropy of a one-element probability against a 0/1 target.
    pub fn bce(&mut self, pred: NodeId, target: f64) -> Result<NodeId> {
        if target != 0.0 && target != 1.0 {
            return Err(Error::Domain(format!("bce target must be 0 or 1, got {target}")));
        }
        let p = self.value(pred).item()?;
        let out = bce_value(p, target);
        Ok(self.push(Op::Bce { pred, target }, Cow::Owned(Tensor::scalar(out))))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v * factor).collect();
        let out = Tensor::with_shape(xt.shape(), data).expect("same shape");
        self.push(Op::Scale(x, factor), Cow::Owned(out))
    }

    /// Mean of the selected rows of a matrix.
    pub fn mean_rows(&mut self, m: NodeId, rows: &[usize]) -> Result<NodeId> {
        let mt = self.value(m);
        let (n_rows, cols) = mt.dims2("mean_rows")?;
        if rows.is_empty() {
            return Err(Error::Data("mean over an empty row set".into()));
        }
        let mut acc = vec![0.0; cols];
        for &r in rows {
            if r >= n_rows {
                return Err(Error::Index {
                    op: "mean_rows",
                    index: r,
                    len: n_rows,
                });
            }
            for (a, v) in acc.iter_mut().zip(&mt.data()[r * cols..(r + 1) * cols]) {
                *a += v;
            }
        }
        let k = rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(self.push(Op::MeanRows(m, rows.to_vec()), Cow::Owned(Tensor::vector(acc))))
    }

    /// Element `i` of a vector, as a rank-0 scalar.
    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let len = self.vector_len("index", x)?;
        if i >= len {
            return Err(Error::Index {
                op: "index",
                index: i,
                len,
            });
        }
        let v = self.value(x).data()[i];
        Ok(self.push(Op::Index(x, i), Cow::Owned(Tensor::scalar(v))))
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatVec(w, x) => {
                    let wt = self.value(*w);
                    let xt = self.value(*x);
                    let cols = xt.len();
                    {
                        let gw = slot(&mut grads, *w, wt.len());
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (gwij, xj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(xt.data()) {
                                *gwij += gi * xj;
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, cols);
                    let wd = wt.data();
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (gxj, wij) in gx.iter_mut().zip(&wd[i * cols..(i + 1) * cols]) {
                            *gxj += gi * wij;
                        }
                    }
                }
                Op::Unary(kind, x) => {
                    let y = node.value.data();
                    let xv = self.value(*x).data();
                    let gx = slot(&mut grads, *x, y.len());
                    for i in 0..y.len() {
                        let d = match kind {
                            Elementwise::Sigmoid => y[i] * (1.0 - y[i]),
                            Elementwise::Tanh => 1.0 - y[i] * y[i],
                            _ => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[i] += g[i] * d;
                    }
                }
                Op::Binary(kind, a, b) => {
                    let n = g.len();
                    match kind {
                        Elementwise::Add => {
                            add_into(slot(&mut grads, *a, n), &g);
                            add_into(slot(&mut grads, *b, n), &g);
                        }
                        _ => {
                            let av = self.value(*a).data();
                            let bv = self.value(*b).data();
                            {
                                let ga = slot(&mut grads, *a, n);
                                for i in 0..n {
                                    ga[i] += g[i] * bv[i];
                                }
                            }
                            let gb = slot(&mut grads, *b, n);
                            for i in 0..n {
                                gb[i] += g[i] * av[i];
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        add_into(slot(&mut grads, *p, len), &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::SumPool(x) => {
                    let len = self.value(*x).len();
                    slot(&mut grads, *x, len).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred).data()[0];
                    slot(&mut grads, *pred, 1)[0] += g[0] * bce_grad(p, *target);
                }
                Op::Scale(x, factor) => {
                    let gx = slot(&mut grads, *x, g.len());
                    for (gi, v) in gx.iter_mut().zip(&g) {
                        *gi += v * factor;
                    }
                }
                Op::MeanRows(m, rows) => {
                    let mt = self.value(*m);
                    let cols = g.len();
                    let k = rows.len() as f64;
                    let gm = slot(&mut grads, *m, mt.len());
                    for &r in rows {
                        for (gmj, gj) in gm[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *gmj += gj / k;
                        }
                    }
                }
                Op::Index(x, i) => {
                    let len = self.value(*x).len();
                    slot(&mut grads, *x, len)[*i] += g[0];
                }
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::with_shape(self.nodes[i].value.shape(), data).expect("gradient shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

/// Dot product with eight independent partial sums, so the loop is not
/// bound by the latency of a single accumulator.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn bce_value(p: f64, target: f64) -> f64 {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln())
}

fn bce_grad(p: f64, target: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        return 0.0;
    }
    -target / p + (1.0 - target) / (1.0 - p)
}

/// Gradients from one reverse sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

//! Single-use computation tape for reverse-mode differentiation.
//!
//! Every recorded operation stores its input references and whatever
//! forward values its backward rule needs. `backward` walks the tape in
//! reverse topological order (creation order is already topological) and
//! accumulates gradients with `+=`, so fan-out sums contributions.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use super::{Tensor, TensorError};

/// Reference to an operand: its node id when tracked, plus its forward data.
#[derive(Clone)]
pub(crate) struct Src {
    pub node: Option<usize>,
    pub data: Arc<Vec<f64>>,
}

impl Src {
    pub fn of(t: &Tensor) -> Self {
        Src {
            node: t.node.as_ref().map(|(_, id)| *id),
            data: t.data_arc(),
        }
    }
}

pub(crate) enum BackOp {
    Leaf,
    Add { a: Src, b: Src },
    Sub { a: Src, b: Src },
    Mul { a: Src, b: Src },
    Div { a: Src, b: Src, out: Arc<Vec<f64>> },
    Scale { a: Src, c: f64 },
    Relu { a: Src, out: Arc<Vec<f64>> },
    Tanh { a: Src, out: Arc<Vec<f64>> },
    Sigmoid { a: Src, out: Arc<Vec<f64>> },
    Matmul { a: Src, b: Src, m: usize, k: usize, p: usize },
    Transpose { a: Src, rows: usize, cols: usize },
    SumAxis { a: Src, axis: usize, in_shape: Vec<usize> },
    MeanAxis { a: Src, axis: usize, in_shape: Vec<usize> },
    MaxAxis { a: Src, argmax: Vec<usize> },
    SumAll { a: Src },
    RepeatRows { a: Src, n: usize, d: usize },
    ConcatLast { parts: Vec<Src>, widths: Vec<usize>, rows: usize },
    SoftmaxRows { a: Src, rows: usize, cols: usize, out: Arc<Vec<f64>> },
    BceMasked { logits: Src, targets: Arc<Vec<f64>>, mask: Arc<Vec<f64>>, inv_count: f64 },
    PairsConcat { a: Src, n: usize, d: usize },
    PairsFull { a: Src, n: usize, d: usize },
    GatherTriplets { a: Src, triplets: Arc<Vec<[usize; 3]>>, d: usize },
    SegmentPool { a: Src, seg: usize, rows: usize, d: usize, mean: bool },
    SegmentMax { a: Src, argmax: Vec<usize> },
    Crop2d { a: Src, in_cols: usize, rows: usize, cols: usize },
    PadRows { a: Src, rows: usize, cols: usize },
}

pub(crate) struct Node {
    pub grad: Vec<f64>,
    pub op: BackOp,
}

impl Node {
    fn placeholder() -> Self {
        Node {
            grad: Vec::new(),
            op: BackOp::Leaf,
        }
    }
}

struct TapeInner {
    nodes: Mutex<Vec<Node>>,
    consumed: AtomicBool,
}

/// A recording of tensor operations, consumed by one backward pass.
///
/// Confined to one logical forward/backward; cloning shares the recording.
#[derive(Clone)]
pub struct Tape {
    inner: Arc<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Arc::new(TapeInner {
                nodes: Mutex::new(Vec::new()),
                consumed: AtomicBool::new(false),
            }),
        }
    }

    /// Registers a tensor as a tracked leaf, sharing its data buffer.
    ///
    /// A tensor already tracked on this tape is returned as-is.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        if let Some((tape, _)) = &t.node {
            if Arc::ptr_eq(&tape.inner, &self.inner) {
                return t.clone();
            }
        }
        let id = self.push(t.len(), BackOp::Leaf);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data_arc(),
            node: None,
        }
        .with_node(self, id)
    }

    pub(crate) fn push(&self, len: usize, op: BackOp) -> usize {
        let mut nodes = self.inner.nodes.lock().expect("tape lock");
        nodes.push(Node {
            grad: vec![0.0; len],
            op,
        });
        nodes.len() - 1
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn grad_of(&self, id: usize, len: usize) -> Vec<f64> {
        let nodes = self.inner.nodes.lock().expect("tape lock");
        let g = &nodes[id].grad;
        if g.is_empty() {
            vec![0.0; len]
        } else {
            g.clone()
        }
    }

    pub(crate) fn run_backward(&self, root: usize) -> Result<(), TensorError> {
        if self.inner.consumed.swap(true, Ordering::SeqCst) {
            return Err(TensorError::TapeConsumed);
        }
        let mut nodes = std::mem::take(&mut *self.inner.nodes.lock().expect("tape lock"));
        nodes[root].grad[0] = 1.0;
        for id in (0..=root).rev() {
            let node = std::mem::replace(&mut nodes[id], Node::placeholder());
            apply_backward(&node.op, &node.grad, &mut nodes);
            nodes[id].grad = node.grad;
        }
        *self.inner.nodes.lock().expect("tape lock") = nodes;
        Ok(())
    }
}

impl Tensor {
    /// Seeds this scalar with gradient 1 and back-propagates through its tape.
    pub fn backward(&self) -> Result<(), TensorError> {
        let (tape, id) = self.node.as_ref().ok_or(TensorError::NotTracked)?;
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        tape.run_backward(*id)
    }
}

fn acc(nodes: &mut [Node], src: &Src, f: impl FnOnce(&mut [f64])) {
    if let Some(id) = src.node {
        f(&mut nodes[id].grad);
    }
}

fn apply_backward(op: &BackOp, g: &[f64], nodes: &mut [Node]) {
    match op {
        BackOp::Leaf => {}
        BackOp::Add { a, b } => {
            acc(nodes, a, |ga| add_assign(ga, g));
            acc(nodes, b, |gb| add_assign(gb, g));
        }
        BackOp::Sub { a, b } => {
            acc(nodes, a, |ga| add_assign(ga, g));
            acc(nodes, b, |gb| {
                for (o, &x) in gb.iter_mut().zip(g) {
                    *o -= x;
                }
            });
        }
        BackOp::Mul { a, b } => {
            acc(nodes, a, |ga| {
                for ((o, &x), &bv) in ga.iter_mut().zip(g).zip(b.data.iter()) {
                    *o += x * bv;
                }
            });
            acc(nodes, b, |gb| {
                for ((o, &x), &av) in gb.iter_mut().zip(g).zip(a.data.iter()) {
                    *o += x * av;
                }
            });
        }
        BackOp::Div { a, b, out } => {
            acc(nodes, a, |ga| {
                for ((o, &x), &bv) in ga.iter_mut().zip(g).zip(b.data.iter()) {
                    *o += x / bv;
                }
            });
            acc(nodes, b, |gb| {
                for (((o, &x), &cv), &bv) in
                    gb.iter_mut().zip(g).zip(out.iter()).zip(b.data.iter())
                {
                    *o -= x * cv / bv;
                }
            });
        }
        BackOp::Scale { a, c } => {
            acc(nodes, a, |ga| {
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o += x * c;
                }
            });
        }
        BackOp::Relu { a, out } => {
            acc(nodes, a, |ga| {
                for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                    if y > 0.0 {
                        *o += x;
                    }
                }
            });
        }
        BackOp::Tanh { a, out } => {
            acc(nodes, a, |ga| {
                for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                    *o += x * (1.0 - y * y);
                }
            });
        }
        BackOp::Sigmoid { a, out } => {
            acc(nodes, a, |ga| {
                for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                    *o += x * y * (1.0 - y);
                }
            });
        }
        BackOp::Matmul { a, b, m, k, p } => {
            // dA += dC·Bᵀ ; dB += Aᵀ·dC
            acc(nodes, a, |ga| matmul_nt_acc(g, &b.data, *m, *k, *p, ga));
            acc(nodes, b, |gb| matmul_tn_acc(&a.data, g, *m, *k, *p, gb));
        }
        BackOp::Transpose { a, rows, cols } => {
            // out is cols x rows
            acc(nodes, a, |ga| {
                for i in 0..*rows {
                    for j in 0..*cols {
                        ga[i * cols + j] += g[j * rows + i];
                    }
                }
            });
        }
        BackOp::SumAxis { a, axis, in_shape } => {
            acc(nodes, a, |ga| {
                spread_axis(ga, g, in_shape, *axis, 1.0);
            });
        }
        BackOp::MeanAxis { a, axis, in_shape } => {
            let scale = 1.0 / in_shape[*axis] as f64;
            acc(nodes, a, |ga| {
                spread_axis(ga, g, in_shape, *axis, scale);
            });
        }
        BackOp::MaxAxis { a, argmax } => {
            acc(nodes, a, |ga| {
                for (o, &src_idx) in g.iter().zip(argmax.iter()) {
                    ga[src_idx] += *o;
                }
            });
        }
        BackOp::SumAll { a } => {
            let x = g[0];
            acc(nodes, a, |ga| {
                for o in ga.iter_mut() {
                    *o += x;
                }
            });
        }
        BackOp::RepeatRows { a, n, d } => {
            acc(nodes, a, |ga| {
                for i in 0..*n {
                    for j in 0..*d {
                        ga[j] += g[i * d + j];
                    }
                }
            });
        }
        BackOp::ConcatLast { parts, widths, rows } => {
            let total: usize = widths.iter().sum();
            let mut start = 0;
            for (part, &w) in parts.iter().zip(widths) {
                acc(nodes, part, |gp| {
                    for r in 0..*rows {
                        for j in 0..w {
                            gp[r * w + j] += g[r * total + start + j];
                        }
                    }
                });
                start += w;
            }
        }
        BackOp::SoftmaxRows { a, rows, cols, out } => {
            acc(nodes, a, |ga| {
                for r in 0..*rows {
                    let y = &out[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..*cols {
                        ga[r * cols + j] += y[j] * (gr[j] - dot);
                    }
                }
            });
        }
        BackOp::BceMasked { logits, targets, mask, inv_count } => {
            let x = g[0] * inv_count;
            acc(nodes, logits, |gl| {
                for (((o, &z), &y), &m) in gl
                    .iter_mut()
                    .zip(logits.data.iter())
                    .zip(targets.iter())
                    .zip(mask.iter())
                {
                    if m != 0.0 {
                        *o += x * m * (sigmoid(z) - y);
                    }
                }
            });
        }
        BackOp::PairsConcat { a, n, d } => {
            acc(nodes, a, |ga| {
                for i in 0..*n {
                    for j in 0..*n {
                        let row = (i * n + j) * 2 * d;
                        for c in 0..*d {
                            ga[i * d + c] += g[row + c];
                            ga[j * d + c] += g[row + d + c];
                        }
                    }
                }
            });
        }
        BackOp::PairsFull { a, n, d } => {
            acc(nodes, a, |ga| {
                let width = 5 * d;
                // channels 1, 2: broadcast of x_i and x_j over all pairs
                for i in 0..*n {
                    for j in 0..*n {
                        let row = (i * n + j) * width;
                        for c in 0..*d {
                            ga[i * d + c] += g[row + c];
                            ga[j * d + c] += g[row + d + c];
                        }
                    }
                }
                // channel 3: constant column sum over every pair
                for c in 0..*d {
                    let mut total = 0.0;
                    for i in 0..*n {
                        for j in 0..*n {
                            total += g[(i * n + j) * width + 2 * d + c];
                        }
                    }
                    for l in 0..*n {
                        ga[l * d + c] += total;
                    }
                }
                // channels 4, 5: diagonal-only entries
                for i in 0..*n {
                    let row = (i * n + i) * width;
                    for c in 0..*d {
                        ga[i * d + c] += g[row + 3 * d + c];
                    }
                }
                for c in 0..*d {
                    let mut total = 0.0;
                    for i in 0..*n {
                        total += g[(i * n + i) * width + 4 * d + c];
                    }
                    for l in 0..*n {
                        ga[l * d + c] += total;
                    }
                }
            });
        }
        BackOp::GatherTriplets { a, triplets, d } => {
            acc(nodes, a, |ga| {
                for (t, trip) in triplets.iter().enumerate() {
                    for (r, &src_row) in trip.iter().enumerate() {
                        let out_row = (3 * t + r) * d;
                        for c in 0..*d {
                            ga[src_row * d + c] += g[out_row + c];
                        }
                    }
                }
            });
        }
        BackOp::SegmentPool { a, seg, rows, d, mean } => {
            let scale = if *mean { 1.0 / *seg as f64 } else { 1.0 };
            acc(nodes, a, |ga| {
                for group in 0..rows / seg {
                    for c in 0..*d {
                        let mut total = 0.0;
                        for r in 0..*seg {
                            total += g[((group * seg) + r) * d + c];
                        }
                        total *= scale;
                        for r in 0..*seg {
                            ga[((group * seg) + r) * d + c] += total;
                        }
                    }
                }
            });
        }
        BackOp::SegmentMax { a, argmax } => {
            acc(nodes, a, |ga| {
                for (o, &src_idx) in g.iter().zip(argmax.iter()) {
                    ga[src_idx] += *o;
                }
            });
        }
        BackOp::Crop2d { a, in_cols, rows, cols } => {
            acc(nodes, a, |ga| {
                for r in 0..*rows {
                    for c in 0..*cols {
                        ga[r * in_cols + c] += g[r * cols + c];
                    }
                }
            });
        }
        BackOp::PadRows { a, rows, cols } => {
            acc(nodes, a, |ga| {
                add_assign(ga, &g[..rows * cols]);
            });
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

/// Broadcasts a reduced gradient back along `axis`, scaled.
fn spread_axis(ga: &mut [f64], g: &[f64], in_shape: &[usize], axis: usize, scale: f64) {
    let axis_len = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let outer: usize = in_shape[..axis].iter().product();
    for o in 0..outer {
        for a in 0..axis_len {
            for i in 0..inner {
                ga[(o * axis_len + a) * inner + i] += g[o * inner + i] * scale;
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// C += A·B with A m×k, B k×p.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * p..(i + 1) * p];
        for (l, &ail) in arow.iter().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ail * bv;
            }
        }
    }
}

/// dA += dC·Bᵀ with dC m×p, B k×p, dA m×k.
fn matmul_nt_acc(dc: &[f64], b: &[f64], m: usize, k: usize, p: usize, da: &mut [f64]) {
    for i in 0..m {
        let gr = &dc[i * p..(i + 1) * p];
        for l in 0..k {
            let brow = &b[l * p..(l + 1) * p];
            let mut s = 0.0;
            for (&gv, &bv) in gr.iter().zip(brow) {
                s += gv * bv;
            }
            da[i * k + l] += s;
        }
    }
}

/// dB += Aᵀ·dC with A m×k, dC m×p, dB k×p.
fn matmul_tn_acc(a: &[f64], dc: &[f64], m: usize, k: usize, p: usize, db: &mut [f64]) {
    for i in 0..m {
        let gr = &dc[i * p..(i + 1) * p];
        let arow = &a[i * k..(i + 1) * k];
        for (l, &ail) in arow.iter().enumerate() {
            let dbrow = &mut db[l * p..(l + 1) * p];
            for (o, &gv) in dbrow.iter_mut().zip(gr) {
                *o += ail * gv;
            }
        }
    }
}

//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in append order; [`Var`] is a cheap
//! handle into it. [`Tape::backward`] walks the records once in reverse and
//! returns the cotangent of every node, so intermediate states (layer
//! boundaries) can be inspected as well as leaves.

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Neighborhoods, NormalizedAdjacency};
use crate::tensor::Matrix;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Default LeakyReLU slope for attention scores.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// ReLU derivative at exactly zero is 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// `(sup |σ|, sup |σ'|)`; `sup |σ|` is infinite for ReLU and identity.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (1.0, 1.0),
            Activation::Relu | Activation::Identity => (f64::INFINITY, 1.0),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "id" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_derivative(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: usize,
    index: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    LinComb(Vec<(f64, usize)>),
    Hadamard(usize, usize),
    ConcatCols(usize, usize),
    SliceRows(usize, usize),
    Sum(usize),
    Spmm(Arc<NormalizedAdjacency>, usize),
    Activation(usize, Activation),
    EdgeScores {
        xw: usize,
        att: usize,
        layout: Arc<Neighborhoods>,
        slope: f64,
        pre: Vec<f64>,
    },
    NeighborSoftmax {
        layout: Arc<Neighborhoods>,
        scores: usize,
    },
    AttnAggregate {
        layout: Arc<Neighborhoods>,
        weights: usize,
        xw: usize,
    },
    Mse {
        pred: usize,
        residual: Matrix,
        denom: f64,
    },
    CrossEntropy {
        logits: usize,
        probs: Matrix,
        labels: Vec<usize>,
        mask: Vec<usize>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Append-only operation record. Single writer; not `Sync`.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let var = Var {
            tape: self.id,
            index: nodes.len(),
            rows: value.rows(),
            cols: value.cols(),
        };
        nodes.push(Node { value, op });
        var
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "Var used with a different tape");
    }

    /// Records a leaf (parameter or input).
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix> {
        self.check(v);
        Ref::map(self.nodes.borrow(), |n| &n[v.index].value)
    }

    pub fn value_cloned(&self, v: Var) -> Matrix {
        self.value(v).clone()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.index].value.matmul(&nodes[b.index].value)?
        };
        Ok(self.push(value, Op::MatMul(a.index, b.index)))
    }

    /// `Σ_k c_k v_k` over equally shaped operands.
    pub fn lincomb(&self, terms: &[(f64, Var)]) -> Result<Var> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let mut value = Matrix::zeros(first.rows, first.cols);
        {
            let nodes = self.nodes.borrow();
            for &(c, v) in terms {
                self.check(v);
                if v.shape() != first.shape() {
                    return shape_err(format!("linear combination of {:?} and {:?}", first.shape(), v.shape()));
                }
                value.axpy(c, &nodes[v.index].value);
            }
        }
        let op = Op::LinComb(terms.iter().map(|&(c, v)| (c, v.index)).collect());
        Ok(self.push(value, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(1.0, a), (1.0, b)])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(1.0, a), (-1.0, b)])
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.lincomb(&[(c, a)]).expect("single-term combination")
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        if a.shape() != b.shape() {
            return shape_err(format!("hadamard {:?} and {:?}", a.shape(), b.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.index].value.zip_map(&nodes[b.index].value, |x, y| x * y)
        };
        Ok(self.push(value, Op::Hadamard(a.index, b.index)))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        if a.rows != b.rows {
            return shape_err(format!("concat_cols {:?} and {:?}", a.shape(), b.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.index].value, &nodes[b.index].value);
            Matrix::from_fn(a.rows, a.cols + b.cols, |i, j| {
                if j < a.cols {
                    x[(i, j)]
                } else {
                    y[(i, j - a.cols)]
                }
            })
        };
        Ok(self.push(value, Op::ConcatCols(a.index, b.index)))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a);
        if start > end || end > a.rows {
            return shape_err(format!("slice rows {start}..{end} of {:?}", a.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.index].value;
            Matrix::from_vec(end - start, a.cols, x.data()[start * a.cols..end * a.cols].to_vec())
        };
        Ok(self.push(value, Op::SliceRows(a.index, start)))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.check(a);
        let s = self.nodes.borrow()[a.index].value.sum();
        self.push(Matrix::scalar(s), Op::Sum(a.index))
    }

    /// `y_i = Σ_{j ∈ N(i) ∪ {i}} w_ij x_j`.
    pub fn spmm(&self, adj: &Arc<NormalizedAdjacency>, x: Var) -> Result<Var> {
        self.check(x);
        if adj.num_nodes() != x.rows {
            return shape_err(format!(
                "spmm: adjacency has {} nodes, input has {} rows",
                adj.num_nodes(),
                x.rows
            ));
        }
        let value = adj.apply(&self.nodes.borrow()[x.index].value);
        Ok(self.push(value, Op::Spmm(Arc::clone(adj), x.index)))
    }

    pub fn activation(&self, x: Var, kind: Activation) -> Var {
        self.check(x);
        let value = self.nodes.borrow()[x.index].value.map(|z| kind.apply(z));
        self.push(value, Op::Activation(x.index, kind))
    }

    /// One score per pair `(i <- j)` of `layout`:
    /// `LeakyReLU(a[..m]·xw_i + a[m..]·xw_j)`, target first. Output is `P x 1`.
    pub fn edge_scores(&self, xw: Var, att: Var, layout: &Arc<Neighborhoods>, slope: f64) -> Result<Var> {
        self.check(xw);
        self.check(att);
        let m = xw.cols;
        if att.rows * att.cols != 2 * m || xw.rows != layout.num_nodes() {
            return shape_err(format!(
                "edge_scores: features {:?}, attention {:?}, {} nodes",
                xw.shape(),
                att.shape(),
                layout.num_nodes()
            ));
        }
        let (pre, value) = {
            let nodes = self.nodes.borrow();
            let (h, a) = (&nodes[xw.index].value, nodes[att.index].value.data());
            let (left, right): (Vec<f64>, Vec<f64>) = (0..h.rows())
                .map(|i| {
                    let row = h.row(i);
                    let l: f64 = row.iter().zip(&a[..m]).map(|(x, y)| x * y).sum();
                    let r: f64 = row.iter().zip(&a[m..]).map(|(x, y)| x * y).sum();
                    (l, r)
                })
                .unzip();
            let pre: Vec<f64> = layout
                .targets()
                .iter()
                .zip(layout.sources())
                .map(|(&i, &j)| left[i] + right[j])
                .collect();
            let value = Matrix::column(&pre.iter().map(|&p| leaky(p, slope)).collect::<Vec<_>>());
            (pre, value)
        };
        Ok(self.push(
            value,
            Op::EdgeScores {
                xw: xw.index,
                att: att.index,
                layout: Arc::clone(layout),
                slope,
                pre,
            },
        ))
    }

    /// Softmax of pair scores within each target's neighbourhood.
    pub fn neighbor_softmax(&self, scores: Var, layout: &Arc<Neighborhoods>) -> Result<Var> {
        self.check(scores);
        if scores.rows * scores.cols != layout.num_pairs() {
            return shape_err(format!(
                "neighbor_softmax: {} scores for {} pairs",
                scores.rows * scores.cols,
                layout.num_pairs()
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let s = nodes[scores.index].value.data();
            let mut out = vec![0.0; s.len()];
            for i in 0..layout.num_nodes() {
                let r = layout.row(i);
                if r.is_empty() {
                    return Err(Error::InvalidArgument(format!("node {i} has an empty neighbourhood")));
                }
                let max = s[r.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for p in r.clone() {
                    out[p] = (s[p] - max).exp();
                    total += out[p];
                }
                for p in r {
                    out[p] /= total;
                }
            }
            Matrix::column(&out)
        };
        Ok(self.push(
            value,
            Op::NeighborSoftmax {
                layout: Arc::clone(layout),
                scores: scores.index,
            },
        ))
    }

    /// `y_i = Σ_j α_ij xw_j` with one weight per pair of `layout`.
    pub fn attn_aggregate(&self, weights: Var, xw: Var, layout: &Arc<Neighborhoods>) -> Result<Var> {
        self.check(weights);
        self.check(xw);
        if weights.rows * weights.cols != layout.num_pairs() || xw.rows != layout.num_nodes() {
            return shape_err(format!(
                "attn_aggregate: weights {:?}, features {:?}",
                weights.shape(),
                xw.shape()
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let (a, h) = (nodes[weights.index].value.data(), &nodes[xw.index].value);
            let mut y = Matrix::zeros(h.rows(), h.cols());
            for p in 0..layout.num_pairs() {
                let (i, j) = (layout.targets()[p], layout.sources()[p]);
                for c in 0..h.cols() {
                    y[(i, c)] += a[p] * h[(j, c)];
                }
            }
            y
        };
        Ok(self.push(
            value,
            Op::AttnAggregate {
                layout: Arc::clone(layout),
                weights: weights.index,
                xw: xw.index,
            },
        ))
    }

    /// `(1 / 2n) Σ_{i ∈ mask} ‖pred_i - target_i‖²` with `n = |mask|`, or all
    /// rows and `n = rows` when no mask is given.
    pub fn mse_loss(&self, pred: Var, target: &Matrix, mask: Option<&[usize]>) -> Result<Var> {
        self.check(pred);
        if pred.shape() != target.shape() {
            return shape_err(format!("mse: pred {:?}, target {:?}", pred.shape(), target.shape()));
        }
        let rows: Vec<usize> = match mask {
            Some([]) => return Err(Error::InvalidArgument("empty loss mask".into())),
            Some(m) => m.to_vec(),
            None => (0..pred.rows).collect(),
        };
        let denom = rows.len() as f64;
        let (loss, residual) = {
            let nodes = self.nodes.borrow();
            let p = &nodes[pred.index].value;
            let mut residual = Matrix::zeros(p.rows(), p.cols());
            let mut loss = 0.0;
            for &i in &rows {
                for c in 0..p.cols() {
                    let r = p[(i, c)] - target[(i, c)];
                    residual[(i, c)] = r;
                    loss += r * r;
                }
            }
            (loss / (2.0 * denom), residual)
        };
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Mse {
                pred: pred.index,
                residual,
                denom,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits`, over the rows in `mask`.
    pub fn cross_entropy_loss(&self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        self.check(logits);
        if mask.is_empty() {
            return Err(Error::InvalidArgument("empty loss mask".into()));
        }
        if labels.len() != logits.rows {
            return shape_err(format!("{} labels for {} rows", labels.len(), logits.rows));
        }
        let c = logits.cols;
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.index].value;
            let mut probs = Matrix::zeros(z.rows(), c);
            let mut loss = 0.0;
            for &i in mask {
                let label = labels[i];
                if label >= c {
                    return Err(Error::InvalidArgument(format!(
                        "label {label} at node {i} but only {c} classes"
                    )));
                }
                let row = z.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                for k in 0..c {
                    probs[(i, k)] = (row[k] - lse).exp();
                }
                loss += lse - row[label];
            }
            (loss / mask.len() as f64, probs)
        };
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits: logits.index,
                probs,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Cotangents of a scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return shape_err(format!("backward needs a 1x1 loss, got {:?}", loss.shape()));
        }
        self.backward_from(loss, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`).
    pub fn backward_from(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        self.check(output);
        if seed.shape() != output.shape() {
            return shape_err(format!("seed {:?} for output {:?}", seed.shape(), output.shape()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.index] = Some(seed);

        fn acc(grads: &mut [Option<Matrix>], idx: usize, shape: (usize, usize)) -> &mut Matrix {
            grads[idx].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
        }

        for idx in (0..=output.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let shape_of = |i: usize| nodes[i].value.shape();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = g.matmul(&vb.transpose())?;
                    let gb = va.transpose().matmul(&g)?;
                    acc(&mut grads, *a, shape_of(*a)).axpy(1.0, &ga);
                    acc(&mut grads, *b, shape_of(*b)).axpy(1.0, &gb);
                }
                Op::LinComb(terms) => {
                    for &(c, i) in terms {
                        acc(&mut grads, i, shape_of(i)).axpy(c, &g);
                    }
                }
                Op::Hadamard(a, b) => {
                    let ga = g.zip_map(&nodes[*b].value, |x, y| x * y);
                    let gb = g.zip_map(&nodes[*a].value, |x, y| x * y);
                    acc(&mut grads, *a, shape_of(*a)).axpy(1.0, &ga);
                    acc(&mut grads, *b, shape_of(*b)).axpy(1.0, &gb);
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[*a].value.cols();
                    let ga = acc(&mut grads, *a, shape_of(*a));
                    for i in 0..g.rows() {
                        for j in 0..ca {
                            ga[(i, j)] += g[(i, j)];
                        }
                    }
                    let gb = acc(&mut grads, *b, shape_of(*b));
                    for i in 0..g.rows() {
                        for j in ca..g.cols() {
                            gb[(i, j - ca)] += g[(i, j)];
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let cols = g.cols();
                    let ga = acc(&mut grads, *a, shape_of(*a));
                    for (k, v) in g.data().iter().enumerate() {
                        ga.data_mut()[start * cols + k] += v;
                    }
                }
                Op::Sum(a) => {
                    let s = g[(0, 0)];
                    let ga = acc(&mut grads, *a, shape_of(*a));
                    ga.data_mut().iter_mut().for_each(|x| *x += s);
                }
                Op::Spmm(adj, a) => {
                    let layout = adj.layout();
                    let w = adj.weights();
                    let ga = acc(&mut grads, *a, shape_of(*a));
                    for p in 0..w.len() {
                        let (i, j) = (layout.targets()[p], layout.sources()[p]);
                        for c in 0..g.cols() {
                            ga[(j, c)] += w[p] * g[(i, c)];
                        }
                    }
                }
                Op::Activation(a, kind) => {
                    let local = nodes[*a].value.zip_map(&g, |z, gz| gz * kind.derivative(z));
                    acc(&mut grads, *a, shape_of(*a)).axpy(1.0, &local);
                }
                Op::EdgeScores {
                    xw,
                    att,
                    layout,
                    slope,
                    pre,
                } => {
                    let h = nodes[*xw].value.clone();
                    let a = nodes[*att].value.data().to_vec();
                    let m = h.cols();
                    let mut gh = Matrix::zeros(h.rows(), m);
                    let mut gatt = vec![0.0; 2 * m];
                    for p in 0..layout.num_pairs() {
                        let d = g.data()[p] * leaky_derivative(pre[p], *slope);
                        if d == 0.0 {
                            continue;
                        }
                        let (i, j) = (layout.targets()[p], layout.sources()[p]);
                        for c in 0..m {
                            gh[(i, c)] += d * a[c];
                            gh[(j, c)] += d * a[m + c];
                            gatt[c] += d * h[(i, c)];
                            gatt[m + c] += d * h[(j, c)];
                        }
                    }
                    acc(&mut grads, *xw, shape_of(*xw)).axpy(1.0, &gh);
                    let ga = acc(&mut grads, *att, shape_of(*att));
                    for (x, v) in ga.data_mut().iter_mut().zip(gatt) {
                        *x += v;
                    }
                }
                Op::NeighborSoftmax { layout, scores } => {
                    let alpha = node.value.data();
                    let mut gs = vec![0.0; alpha.len()];
                    for i in 0..layout.num_nodes() {
                        let r = layout.row(i);
                        let dot: f64 = r.clone().map(|p| alpha[p] * g.data()[p]).sum();
                        for p in r {
                            gs[p] = alpha[p] * (g.data()[p] - dot);
                        }
                    }
                    let ga = acc(&mut grads, *scores, shape_of(*scores));
                    for (x, v) in ga.data_mut().iter_mut().zip(gs) {
                        *x += v;
                    }
                }
                Op::AttnAggregate { layout, weights, xw } => {
                    let alpha = nodes[*weights].value.data().to_vec();
                    let h = &nodes[*xw].value;
                    let mut galpha = vec![0.0; alpha.len()];
                    let mut gh = Matrix::zeros(h.rows(), h.cols());
                    for p in 0..layout.num_pairs() {
                        let (i, j) = (layout.targets()[p], layout.sources()[p]);
                        let mut s = 0.0;
                        for c in 0..h.cols() {
                            s += g[(i, c)] * h[(j, c)];
                            gh[(j, c)] += alpha[p] * g[(i, c)];
                        }
                        galpha[p] = s;
                    }
                    let gw = acc(&mut grads, *weights, shape_of(*weights));
                    for (x, v) in gw.data_mut().iter_mut().zip(galpha) {
                        *x += v;
                    }
                    acc(&mut grads, *xw, shape_of(*xw)).axpy(1.0, &gh);
                }
                Op::Mse { pred, residual, denom } => {
                    acc(&mut grads, *pred, shape_of(*pred)).axpy(g[(0, 0)] / denom, residual);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                    mask,
                } => {
                    let s = g[(0, 0)] / mask.len() as f64;
                    let gl = acc(&mut grads, *logits, shape_of(*logits));
                    for &i in mask {
                        for k in 0..probs.cols() {
                            let onehot = if k == labels[i] { 1.0 } else { 0.0 };
                            gl[(i, k)] += s * (probs[(i, k)] - onehot);
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }
}

/// Cotangents for every node of a tape after one backward pass.
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; zero if `v` did not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        assert_eq!(v.tape, self.tape, "Var from a different tape");
        match &self.grads[v.index] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.index];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Matrix> {
        assert_eq!(v.tape, self.tape, "Var from a different tape");
        self.grads[v.index].as_ref()
    }
}

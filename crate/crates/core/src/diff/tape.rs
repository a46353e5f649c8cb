//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`].
//! Nodes are only ever appended, so node order is a topological order and
//! [`Tape::backward`] walks the nodes once in reverse.

use super::params::{ParamId, ParamStore};
use super::tensor::{log_sigmoid, matmul, matmul_nt, matmul_tn, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    EmbedMean { table: Var, bags: Vec<Vec<usize>> },
    Concat(Var, Var),
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradient of a root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Config(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Copy of `v`'s current value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let v = self.push(store.get(id).value().clone(), Op::Param(id));
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(r, c, matmul(ta.data(), tb.data(), r, k, c))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds vector `bias` of width `c` to every row of the `[r, c]` matrix `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.shape().len() != 2 || tb.len() != ta.cols() {
            return Err(shape_err("add_row", ta, tb));
        }
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Stable `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean over all elements. Mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Looks up rows of `table` `[vocab, d]` and averages each bag, giving `[bags, d]`.
    pub fn embed_mean(&mut self, table: Var, bags: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Config(format!(
                "embed_mean: table must be rank 2, got {:?}",
                t.shape()
            )));
        }
        let (vocab, d) = (t.rows(), t.cols());
        let mut out = vec![0.0; bags.len() * d];
        for (b, ids) in bags.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Config(format!("embed_mean: bag {b} is empty")));
            }
            let w = 1.0 / ids.len() as f64;
            let row = &mut out[b * d..(b + 1) * d];
            for &id in ids {
                if id >= vocab {
                    return Err(Error::Config(format!(
                        "embed_mean: id {id} out of range for table with {vocab} rows"
                    )));
                }
                for (o, e) in row.iter_mut().zip(t.row(id)) {
                    *o += w * e;
                }
            }
        }
        let out = Tensor::matrix(bags.len(), d, out)?;
        Ok(self.push(out, Op::EmbedMean { table, bags }))
    }

    /// Concatenates two `[r, *]` matrices along columns.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(shape_err("concat", ta, tb));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::matrix(r, ca + cb, data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Gathers rows `rows` of a matrix (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::Config(format!(
                "select_rows: expected rank 2, got {:?}",
                t.shape()
            )));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            if r >= t.rows() {
                return Err(Error::Config(format!(
                    "select_rows: row {r} out of range for shape {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(out, Op::SelectRows(a, rows)))
    }

    /// Picks individual `(row, col)` entries into a vector.
    pub fn gather(&mut self, a: Var, at: Vec<(usize, usize)>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(at.len());
        for &(i, j) in &at {
            if i >= r || j >= c {
                return Err(Error::Config(format!(
                    "gather: index ({i}, {j}) out of range for shape {:?}",
                    t.shape()
                )));
            }
            data.push(t.data()[i * c + j]);
        }
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::Gather(a, at)))
    }

    /// Gradients of a scalar `root` with respect to every node.
    pub fn gradients(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut done: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
                    accumulate(&mut grads, *a, &matmul_nt(&g, tb.data(), r, c, k));
                    accumulate(&mut grads, *b, &matmul_tn(ta.data(), &g, r, k, c));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *a, &g);
                    let c = self.value(*bias).len();
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        for (o, x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *bias, &gb);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, s)| x * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::LogSigmoid(a) => {
                    // d/dx log σ(x) = σ(-x)
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, &z)| x * sigmoid(-z))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, t)| x * (1.0 - t * t))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, &z)| if z > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    if n > 0 {
                        accumulate(&mut grads, *a, &vec![g[0] / n as f64; n]);
                    }
                }
                Op::EmbedMean { table, bags } => {
                    let t = self.value(*table);
                    let d = t.cols();
                    let mut gt = vec![0.0; t.len()];
                    for (b, ids) in bags.iter().enumerate() {
                        let w = 1.0 / ids.len() as f64;
                        let gr = &g[b * d..(b + 1) * d];
                        for &id in ids {
                            for (o, x) in gt[id * d..(id + 1) * d].iter_mut().zip(gr) {
                                *o += w * x;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, &gt);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let mut ga = Vec::with_capacity(self.value(*a).len());
                    let mut gb = Vec::with_capacity(self.value(*b).len());
                    for row in g.chunks(ca + cb) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::SelectRows(a, rows) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, x) in ga[r * c..(r + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Gather(a, at) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    for (k, &(i, j)) in at.iter().enumerate() {
                        ga[i * c + j] += g[k];
                    }
                    accumulate(&mut grads, *a, &ga);
                }
            }
            done[idx] = Some(g);
        }
        Ok(Gradients { grads: done })
    }

    /// Accumulates `∂root/∂param` into every parameter reached from `root`.
    ///
    /// Accumulators are not zeroed; call [`ParamStore::zero_grad`] between steps.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(root)?;
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.get(Var(idx))) {
                store.accumulate(*id, g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

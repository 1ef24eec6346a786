use super::kernels;
use super::Tensor;
use crate::{Result, VpnError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Softplus(Var),
    LogSoftmax(Var),
    CapRowNorm(Var, f64),
    GatherRows(Var, Vec<usize>),
    NllMean(Var, Vec<usize>),
    Sum(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Record of one forward pass.
///
/// Nodes are appended in evaluation order, so replaying adjoints from the
/// root down to index 0 is a valid reverse topological sweep. A tape is
/// meant to live for a single forward/backward pair.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// `a + row` with `row` (`1 x k`) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = kernels::add_row(self.value(a), self.value(row))?;
        let rg = self.needs(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::hadamard(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = kernels::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = kernels::softplus(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Softplus(x), rg)
    }

    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let value = kernels::log_softmax(self.value(logits))?;
        let rg = self.needs(&[logits]);
        Ok(self.push(value, Op::LogSoftmax(logits), rg))
    }

    /// Rescales each row to L2 norm `cap` when it is longer than that.
    pub fn cap_row_norm(&mut self, x: Var, cap: f64) -> Result<Var> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(VpnError::Contract(format!(
                "norm cap must be positive and finite, got {cap}"
            )));
        }
        let value = kernels::cap_row_norm(self.value(x), cap);
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::CapRowNorm(x, cap), rg))
    }

    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let value = kernels::gather_rows(self.value(x), &index)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::GatherRows(x, index), rg))
    }

    /// Mean over rows of `-logp[i, labels[i]]`.
    pub fn nll_mean(&mut self, logp: Var, labels: Vec<usize>) -> Result<Var> {
        let lp = self.value(logp);
        if labels.len() != lp.rows() || labels.is_empty() {
            return Err(VpnError::dim(
                "nll_mean",
                format!("{} labels for {} rows", labels.len(), lp.rows()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lp.cols()) {
            return Err(VpnError::dim(
                "nll_mean",
                format!("label {bad} out of range for {} classes", lp.cols()),
            ));
        }
        let total: f64 = labels.iter().enumerate().map(|(i, &y)| -lp.get(i, y)).sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        let rg = self.needs(&[logp]);
        Ok(self.push(value, Op::NllMean(logp, labels), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Populates gradients of `loss` on every node that requires one.
    ///
    /// Calling it twice on the same tape is an error; build a new tape (or
    /// call [`Tape::reset_grads`]) for another pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(VpnError::Contract(
                "backward already ran on this tape; reset gradients first".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(VpnError::Contract("loss is not recorded on this tape".into()));
        }
        let root = &self.nodes[loss.0].value;
        if root.shape() != [1, 1] {
            return Err(VpnError::Contract(format!(
                "backward needs a scalar root, got {:?}",
                root.shape()
            )));
        }
        if !root.is_finite() {
            return Err(VpnError::Numeric(format!(
                "backward from non-finite loss {}",
                root.data()[0]
            )));
        }
        self.backward_done = true;

        for node in &mut self.nodes[..=loss.0] {
            if node.requires_grad {
                let [r, c] = node.value.shape();
                node.grad = Some(Tensor::zeros(r, c));
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g.data_mut()[0] = 1.0;
        }

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[idx].grad.take().expect("grad allocated above");
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn accumulate(&mut self, target: Var, f: impl FnOnce(&mut Tensor, &[Node])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let mut acc = self.nodes[target.0]
            .grad
            .take()
            .expect("grad allocated for requires_grad node");
        f(&mut acc, &self.nodes);
        self.nodes[target.0].grad = Some(acc);
    }

    fn propagate(&mut self, idx: usize, g: &Tensor) {
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                self.accumulate(a, |acc, nodes| {
                    kernels::matmul_grad_lhs(g, &nodes[b.0].value, acc)
                });
                self.accumulate(b, |acc, nodes| {
                    kernels::matmul_grad_rhs(&nodes[a.0].value, g, acc)
                });
            }
            &Op::Add(a, b) => {
                for t in [a, b] {
                    self.accumulate(t, |acc, _| add_into(acc, g.data()));
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(a, |acc, _| add_into(acc, g.data()));
                self.accumulate(row, |acc, _| {
                    let k = acc.cols();
                    if k > 0 {
                        for chunk in g.data().chunks_exact(k) {
                            add_into(acc, chunk);
                        }
                    }
                });
            }
            &Op::Hadamard(a, b) => {
                self.accumulate(a, |acc, nodes| {
                    for ((o, gv), bv) in acc.data_mut().iter_mut().zip(g.data()).zip(nodes[b.0].value.data()) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(b, |acc, nodes| {
                    for ((o, gv), av) in acc.data_mut().iter_mut().zip(g.data()).zip(nodes[a.0].value.data()) {
                        *o += gv * av;
                    }
                });
            }
            &Op::Relu(x) => {
                self.accumulate(x, |acc, nodes| {
                    for ((o, gv), xv) in acc.data_mut().iter_mut().zip(g.data()).zip(nodes[x.0].value.data()) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            &Op::Softplus(x) => {
                self.accumulate(x, |acc, nodes| {
                    for ((o, gv), xv) in acc.data_mut().iter_mut().zip(g.data()).zip(nodes[x.0].value.data()) {
                        *o += gv * kernels::sigmoid(*xv);
                    }
                });
            }
            &Op::LogSoftmax(x) => {
                let out = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((d, gv), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(out.row(r)) {
                        *d = gv - yv.exp() * gsum;
                    }
                }
                self.accumulate(x, |acc, _| add_into(acc, dx.data()));
            }
            &Op::CapRowNorm(x, cap) => {
                self.accumulate(x, |acc, nodes| {
                    let xv = &nodes[x.0].value;
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let gr = g.row(r);
                        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let out = acc.row_mut(r);
                        if norm > cap {
                            // d(c x/|x|) = c/|x| (I - x x^T / |x|^2)
                            let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                            let s = cap / norm;
                            let t = dot / (norm * norm);
                            for ((o, gv), xv) in out.iter_mut().zip(gr).zip(row) {
                                *o += s * (gv - xv * t);
                            }
                        } else {
                            for (o, gv) in out.iter_mut().zip(gr) {
                                *o += gv;
                            }
                        }
                    }
                });
            }
            Op::GatherRows(x, index) => {
                self.accumulate(*x, |acc, _| {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, gv) in acc.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::NllMean(logp, labels) => {
                let scale = -g.data()[0] / labels.len() as f64;
                self.accumulate(*logp, |acc, _| {
                    for (i, &y) in labels.iter().enumerate() {
                        let v = acc.get(i, y);
                        acc.set(i, y, v + scale);
                    }
                });
            }
            &Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(x, |acc, _| {
                    for o in acc.data_mut() {
                        *o += gv;
                    }
                });
            }
            &Op::Scale(x, factor) => {
                self.accumulate(x, |acc, _| {
                    for (o, gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * factor;
                    }
                });
            }
        }
        self.nodes[idx].op = op;
    }
}

fn add_into(acc: &mut Tensor, g: &[f64]) {
    for (o, v) in acc.data_mut().iter_mut().zip(g) {
        *o += v;
    }
}

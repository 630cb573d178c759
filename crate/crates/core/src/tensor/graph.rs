use super::{FlopCounter, Tensor, TensorError};
use crate::scalar::{sum_of, Scalar};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    GateTokens(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    TransposeLastTwo(Var),
    Reshape(Var),
    ConcatLast(Var, Var),
    SelectToken(Var, usize),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Append-only record of tensor operations.
///
/// Every operation pushes one node whose inputs are earlier nodes, so node
/// order is a topological order. [`Graph::backward`] walks it once in
/// reverse and adds the resulting adjoints into the `grad` slot of every
/// leaf created with `requires_grad`.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    flops: FlopCounter,
    stage: &'static str,
    sigmoid_fault: Option<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: FlopCounter::new(),
            stage: "matmul",
            sigmoid_fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present after a backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    /// Sets the label under which subsequent matmul MACs are counted and
    /// returns the previous label.
    pub fn set_stage(&mut self, stage: &'static str) -> &'static str {
        std::mem::replace(&mut self.stage, stage)
    }

    /// Scales the sigmoid backward rule by `factor`. Used to confirm that
    /// gradient checks catch a wrong derivative.
    #[doc(hidden)]
    pub fn inject_sigmoid_backward_fault(&mut self, factor: T) {
        self.sigmoid_fault = Some(factor);
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

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn check_nan(&self, op: &str, x: Var) -> Result<(), TensorError> {
        if self.value(x).data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::Numeric(format!("{op}: NaN input")));
        }
        Ok(())
    }

    /// `(m x k) . (k x n) -> (m x n)`; counts `m * k * n` MACs.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.dim_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        mm(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.flops.add(self.stage, (m * k * n) as u64);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Batched product `(B x m x k) . (B x k x n) -> (B x m x n)`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(self.dim_err("batch_matmul", a, b));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            mm(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.flops.add(self.stage, (batch * m * k * n) as u64);
        let value = Tensor::new(&[batch, m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::BatchMatMul(a, b), rg))
    }

    /// Applies `x . w` over the last axis of `x`, for any leading shape.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let ws = self.shape(w);
        if ws.len() != 2 || shape[shape.len() - 1] != ws[0] {
            return Err(self.dim_err("linear", x, w));
        }
        let out_dim = ws[1];
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, shape[shape.len() - 1]])?
        };
        let y = self.matmul(flat, w)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = out_dim;
        self.reshape(y, &out_shape)
    }

    /// `x . w + b` over the last axis.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.linear(x, w)?;
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("add", a, b));
        }
        let data = zip_with(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a bias vector of length `n` to every row of `x[..., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(self.dim_err("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w))
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("hadamard", a, b));
        }
        let data = zip_with(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    /// Multiplies every token of `x[B, L, E]` by its batch's gate `g[B, E]`.
    pub fn gate_tokens(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x);
        let sg = self.shape(gate);
        if sx.len() != 3 || sg.len() != 2 || sx[0] != sg[0] || sx[2] != sg[1] {
            return Err(self.dim_err("gate_tokens", x, gate));
        }
        let (batch, len, width) = (sx[0], sx[1], sx[2]);
        let (dx, dg) = (self.value(x).data(), self.value(gate).data());
        let mut out = Vec::with_capacity(dx.len());
        for b in 0..batch {
            let g = &dg[b * width..(b + 1) * width];
            for l in 0..len {
                let row = &dx[(b * len + l) * width..(b * len + l + 1) * width];
                out.extend(row.iter().zip(g).map(|(&v, &s)| v * s));
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.any_grad(&[x, gate]);
        Ok(self.push(value, Op::GateTokens(x, gate), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Scale(x, factor), rg))
    }

    /// Elementwise logistic function, evaluated without overflow and kept
    /// inside the open interval (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_nan("sigmoid", x)?;
        let value = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sigmoid(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_nan("softmax_rows", x)?;
        let n = self.value(x).last_dim();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    pub fn transpose_last_two(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Dimension {
                op: "transpose_last_two",
                left: shape,
                right: vec![],
            });
        }
        let r = shape.len();
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (blk_in, blk_out) in src.chunks(m * n).zip(out.chunks_mut(m * n)) {
            transpose(blk_in, m, n, blk_out);
        }
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::TransposeLastTwo(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshaped(shape).map_err(|_| TensorError::Dimension {
            op: "reshape",
            left: self.shape(x).to_vec(),
            right: shape.to_vec(),
        })?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Joins `a[..., d1]` and `b[..., d2]` into `[..., d1 + d2]`.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(self.dim_err("concat_last", a, b));
        }
        let (d1, d2) = (self.value(a).last_dim(), self.value(b).last_dim());
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = d1 + d2;
        let data = self
            .value(a)
            .data()
            .chunks(d1)
            .zip(self.value(b).data().chunks(d2))
            .flat_map(|(ra, rb)| ra.iter().chain(rb).copied())
            .collect();
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::ConcatLast(a, b), rg))
    }

    /// Extracts position `t` from every sequence of `x[B, L, E]` as `[B, E]`.
    pub fn select_token(&mut self, x: Var, t: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(TensorError::Dimension {
                op: "select_token",
                left: s,
                right: vec![t],
            });
        }
        let (batch, len, width) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * width);
        for b in 0..batch {
            let at = (b * len + t) * width;
            out.extend_from_slice(&src[at..at + width]);
        }
        let value = Tensor::new(&[batch, width], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SelectToken(x, t), rg))
    }

    /// Mean over the second-to-last axis: `[..., m, n] -> [..., n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::Dimension {
                op: "mean_rows",
                left: s,
                right: vec![],
            });
        }
        let r = s.len();
        let (m, n) = (s[r - 2], s[r - 1]);
        let inv = T::one() / T::of(m as f64);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() / m);
        for blk in src.chunks(m * n) {
            for j in 0..n {
                let total = sum_of((0..m).map(|i| blk[i * n + j]));
                out.push(total * inv);
            }
        }
        let mut out_shape = s[..r - 2].to_vec();
        out_shape.push(n);
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = sum_of(self.value(x).data().iter().copied());
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(x), rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.is_empty() {
            return Err(TensorError::Dimension {
                op: "cross_entropy",
                left: s,
                right: vec![labels.len()],
            });
        }
        self.check_nan("cross_entropy", logits)?;
        let (batch, classes) = (s[0], s[1]);
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(TensorError::Label { index, label, classes });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            total += log_sum_exp(row) - row[label];
            softmax_in_place(row);
        }
        let loss = total / T::of(batch as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(g) => {
                        for (a, d) in g.data_mut().iter_mut().zip(&dy) {
                            *a += *d;
                        }
                    }
                    None => node.grad = Some(Tensor::new(node.value.shape(), dy)?),
                }
                continue;
            }
            self.propagate(i, &dy, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.acc(adj, *a, |g| mm_nt_acc(dy, bv, m, n, k, g));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.acc(adj, *b, |g| mm_tn_acc(av, dy, m, k, n, g));
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.acc(adj, *a, |g| {
                        for t in 0..batch {
                            mm_nt_acc(
                                &dy[t * m * n..(t + 1) * m * n],
                                &bv[t * k * n..(t + 1) * k * n],
                                m,
                                n,
                                k,
                                &mut g[t * m * k..(t + 1) * m * k],
                            );
                        }
                    });
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.acc(adj, *b, |g| {
                        for t in 0..batch {
                            mm_tn_acc(
                                &av[t * m * k..(t + 1) * m * k],
                                &dy[t * m * n..(t + 1) * m * n],
                                m,
                                k,
                                n,
                                &mut g[t * k * n..(t + 1) * k * n],
                            );
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        self.acc(adj, *v, |g| add_into(g, dy));
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.requires_grad(*x) {
                    self.acc(adj, *x, |g| add_into(g, dy));
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).numel();
                    self.acc(adj, *bias, |g| {
                        for row in dy.chunks(n) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.acc(adj, *a, |g| {
                        for ((g, d), w) in g.iter_mut().zip(dy).zip(bv) {
                            *g += *d * *w;
                        }
                    });
                }
                if self.requires_grad(*b) {
                    self.acc(adj, *b, |g| {
                        for ((g, d), w) in g.iter_mut().zip(dy).zip(av) {
                            *g += *d * *w;
                        }
                    });
                }
            }
            Op::GateTokens(x, gate) => {
                let s = self.shape(*x);
                let (batch, len, width) = (s[0], s[1], s[2]);
                let (xv, gv) = (self.value(*x).data(), self.value(*gate).data());
                if self.requires_grad(*x) {
                    self.acc(adj, *x, |g| {
                        for b in 0..batch {
                            let gb = &gv[b * width..(b + 1) * width];
                            for l in 0..len {
                                let at = (b * len + l) * width;
                                for j in 0..width {
                                    g[at + j] += dy[at + j] * gb[j];
                                }
                            }
                        }
                    });
                }
                if self.requires_grad(*gate) {
                    self.acc(adj, *gate, |g| {
                        for b in 0..batch {
                            for l in 0..len {
                                let at = (b * len + l) * width;
                                for j in 0..width {
                                    g[b * width + j] += dy[at + j] * xv[at + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Scale(x, factor) => {
                let f = *factor;
                self.acc(adj, *x, |g| {
                    for (g, d) in g.iter_mut().zip(dy) {
                        *g += *d * f;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let fault = self.sigmoid_fault.unwrap_or(T::one());
                self.acc(adj, *x, |g| {
                    for ((g, d), s) in g.iter_mut().zip(dy).zip(y) {
                        *g += *d * *s * (T::one() - *s) * fault;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(adj, *x, |g| {
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        if *v > T::zero() {
                            *g += *d;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.last_dim();
                self.acc(adj, *x, |g| {
                    for ((g, d), s) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let dot = sum_of(d.iter().zip(s).map(|(a, b)| *a * *b));
                        for j in 0..n {
                            g[j] += s[j] * (d[j] - dot);
                        }
                    }
                });
            }
            Op::TransposeLastTwo(x) => {
                let s = self.shape(*x);
                let r = s.len();
                let (m, n) = (s[r - 2], s[r - 1]);
                self.acc(adj, *x, |g| {
                    // dy blocks are n x m
                    for (gb, db) in g.chunks_mut(m * n).zip(dy.chunks(m * n)) {
                        for i in 0..n {
                            for j in 0..m {
                                gb[j * n + i] += db[i * m + j];
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.acc(adj, *x, |g| add_into(g, dy));
            }
            Op::ConcatLast(a, b) => {
                let (d1, d2) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                if self.requires_grad(*a) {
                    self.acc(adj, *a, |g| {
                        for (gr, dr) in g.chunks_mut(d1).zip(dy.chunks(d1 + d2)) {
                            add_into(gr, &dr[..d1]);
                        }
                    });
                }
                if self.requires_grad(*b) {
                    self.acc(adj, *b, |g| {
                        for (gr, dr) in g.chunks_mut(d2).zip(dy.chunks(d1 + d2)) {
                            add_into(gr, &dr[d1..]);
                        }
                    });
                }
            }
            Op::SelectToken(x, t) => {
                let s = self.shape(*x);
                let (len, width) = (s[1], s[2]);
                self.acc(adj, *x, |g| {
                    for (b, dr) in dy.chunks(width).enumerate() {
                        let at = (b * len + t) * width;
                        add_into(&mut g[at..at + width], dr);
                    }
                });
            }
            Op::MeanRows(x) => {
                let s = self.shape(*x);
                let r = s.len();
                let (m, n) = (s[r - 2], s[r - 1]);
                let inv = T::one() / T::of(m as f64);
                self.acc(adj, *x, |g| {
                    for (gb, db) in g.chunks_mut(m * n).zip(dy.chunks(n)) {
                        for i in 0..m {
                            for j in 0..n {
                                gb[i * n + j] += db[j] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let d = dy[0];
                self.acc(adj, *x, |g| g.iter_mut().for_each(|v| *v += d));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.value(*logits).last_dim();
                let scale = dy[0] / T::of(labels.len() as f64);
                self.acc(adj, *logits, |g| {
                    for ((gr, pr), &label) in g.chunks_mut(classes).zip(probs.chunks(classes)).zip(labels) {
                        for j in 0..classes {
                            let target = if j == label { T::one() } else { T::zero() };
                            gr[j] += (pr[j] - target) * scale;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.requires_grad(v) {
            return;
        }
        let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); self.value(v).numel()]);
        f(slot);
    }
}

/// Logistic function in the stable two-branch form, clamped to the open
/// interval (0, 1).
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(hi)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
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
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + sum_of(row.iter().map(|&v| (v - max).exp())).ln()
}

fn zip_with<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn transpose<T: Scalar>(src: &[T], m: usize, n: usize, dst: &mut [T]) {
    for i in 0..m {
        for j in 0..n {
            dst[j * m + i] = src[i * n + j];
        }
    }
}

/// `out = a . b` for `a: m x k`, `b: k x n`.
fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * w;
            }
        }
    }
}

/// `out += a . b^T` for `a: m x n`, `b: k x n`.
fn mm_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            let dot = sum_of(ar.iter().zip(br).map(|(x, y)| *x * *y));
            out[i * k + p] += dot;
        }
    }
}

/// `out += a^T . b` for `a: m x k`, `b: m x n`.
fn mm_tn_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            for (o, &w) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += s * w;
            }
        }
    }
}

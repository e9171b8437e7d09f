//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A forward pass appends nodes to the tape in execution order, so the node
//! vector is already topologically sorted. `backward` walks it once in reverse.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{self, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    /// Handle for the `i`-th recorded node; for graph inspection.
    pub fn from_index(i: usize) -> Var {
        Var(i)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RepeatRow(Var),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::Softmax(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::RepeatRow(..) => "repeat_row",
            Op::Reshape(..) => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, _)
            | Op::RepeatRow(a)
            | Op::Reshape(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-forward instrumentation: token counts seen by each transformer stack
/// and, when requested, every attention weight matrix.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub encoder_tokens: Vec<usize>,
    pub decoder_tokens: Vec<usize>,
    pub capture_attention: bool,
    pub attention: Vec<Tensor<f64>>,
}

#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(String, Var)>,
    frozen: bool,
    consumed: bool,
    trace: Option<Trace>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [m, n] => (*m, *n),
        _ => {
            let last = *shape.last().unwrap_or(&1);
            (shape.iter().product::<usize>() / last.max(1), last)
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            frozen: false,
            consumed: false,
            trace: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn enable_trace(&mut self, capture_attention: bool) {
        self.trace = Some(Trace {
            capture_attention,
            ..Trace::default()
        });
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn trace_mut(&mut self) -> Option<&mut Trace> {
        self.trace.as_mut()
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.trace.take()
    }

    /// While frozen, [`Tape::param`] records constants instead of trainable leaves.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t.data().to_vec(),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that follows the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t, t.requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    /// Named trainable leaf; its gradient is reported by [`Tape::param_grads`].
    pub fn param(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Var {
        let v = self.push_leaf(t, !self.frozen);
        if !self.frozen {
            self.params.push((name.into(), v));
        }
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::from_vec(&n.shape, n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].value.len() != self.nodes[b.0].value.len() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // -- forward ops --------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = tensor::matmul(self.value(a), self.value(b), m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b)))
    }

    /// a[m×k] · b[n×k]ᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        tensor::matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = tensor::transpose(self.value(a), m, n);
        self.push(out, vec![n, m], Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Mul(a, b)))
    }

    /// Adds a length-n bias to every row of an m×n matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(bias).len() != n {
            return Err(Error::Shape {
                op: "add_row_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for r in 0..m {
            add_into(&mut out[r * n..(r + 1) * n], b);
        }
        Ok(self.push(out, self.shape(x).to_vec(), Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).to_vec();
        tensor::softmax_rows_in_place(&mut out, m, n);
        self.push(out, self.shape(a).to_vec(), Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (m, d) = self.dims(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let ln = tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta), m, d, eps);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: ln.xhat,
            inv_std: ln.inv_std,
        };
        Ok(self.push(ln.out, self.shape(x).to_vec(), op))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| tensor::gelu(x)).collect();
        self.push(out, self.shape(a).to_vec(), Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        self.push(vec![s], vec![1], Op::Mean(a))
    }

    /// Column means of an m×n matrix, as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let v = self.value(a);
        let inv = T::one() / T::from_f64(m as f64);
        let mut out = vec![T::zero(); n];
        for r in 0..m {
            add_into(&mut out, &v[r * n..(r + 1) * n]);
        }
        out.iter_mut().for_each(|x| *x = *x * inv);
        self.push(out, vec![1, n], Op::MeanRows(a))
    }

    /// Selects rows by index (repeats allowed); backward scatters.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![bad],
            });
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&v[i * n..(i + 1) * n]);
        }
        Ok(self.push(out, vec![idx.len(), n], Op::GatherRows(a, idx.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, n2) = self.dims(p);
            if n2 != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += m;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(out, vec![rows, n], Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, len],
            });
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&v[r * n + start..r * n + start + len]);
        }
        Ok(self.push(out, vec![m, len], Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(out, vec![m, total], Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks `times` copies of a single row (shape `[n]` or `[1, n]`).
    pub fn repeat_row(&mut self, a: Var, times: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m != 1 || times == 0 {
            return Err(Error::Shape {
                op: "repeat_row",
                lhs: self.shape(a).to_vec(),
                rhs: vec![times],
            });
        }
        let out = self.value(a).repeat(times);
        Ok(self.push(out, vec![times, n], Op::RepeatRow(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(a).to_vec();
        Ok(self.push(out, shape.to_vec(), Op::Reshape(a)))
    }

    /// Mean over rows of −log softmax(logits)[target].
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(logits);
        if targets.len() != m || targets.iter().any(|&t| t >= c) {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: targets.to_vec(),
            });
        }
        let mut probs = self.value(logits).to_vec();
        tensor::softmax_rows_in_place(&mut probs, m, c);
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            // log-sum-exp form keeps the loss finite when a probability underflows
            let row = &self.value(logits)[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            loss = loss + (lse - row[t]);
        }
        loss = loss / T::from_f64(m as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(vec![loss], vec![1], op))
    }

    // -- reverse pass -------------------------------------------------------

    /// Populates gradients for every node that depends on a trainable leaf.
    /// A tape supports one backward pass; record a fresh forward to go again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed by a previous backward"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Backward("loss must be a scalar"));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(buf);
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let bv = self.value(*b);
                let av = self.value(*a);
                self.accumulate(grads, *a, |ga| tensor::matmul_nt_acc(g, bv, ga, m, n, k));
                self.accumulate(grads, *b, |gb| tensor::matmul_tn_acc(av, g, gb, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let bv = self.value(*b);
                let av = self.value(*a);
                self.accumulate(grads, *a, |ga| tensor::matmul_acc(g, bv, ga, m, n, k));
                self.accumulate(grads, *b, |gb| tensor::matmul_tn_acc(g, av, gb, m, n, k));
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let gt = tensor::transpose(g, n, m);
                self.accumulate(grads, *a, |ga| add_into(ga, &gt));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d = *d - s)
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * x;
                    }
                });
            }
            Op::AddRowBias(x, bias) => {
                let (m, n) = self.dims(*x);
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                self.accumulate(grads, *bias, |gb| {
                    for r in 0..m {
                        add_into(gb, &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi * *s)
                });
            }
            Op::Softmax(a) => {
                let (m, n) = self.dims(*a);
                let y = &node.value;
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] = ga[r * n + j] + yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, d) = self.dims(*x);
                let gv = self.value(*gamma);
                self.accumulate(grads, *gamma, |gg| {
                    for r in 0..m {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for r in 0..m {
                        add_into(gb, &g[r * d..(r + 1) * d]);
                    }
                });
                let dn = T::from_f64(d as f64);
                self.accumulate(grads, *x, |gx| {
                    let mut gh = vec![T::zero(); d];
                    for r in 0..m {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            gh[j] = g[r * d + j] * gv[j];
                        }
                        let s1: T = gh.iter().copied().sum();
                        let s2: T = gh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        let k = inv_std[r] / dn;
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + k * (dn * gh[j] - s1 - xh[j] * s2);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * tensor::gelu_grad(x);
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|d| *d = *d + g[0]));
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|d| *d = *d + g[0] / n));
            }
            Op::MeanRows(a) => {
                let (m, n) = self.dims(*a);
                let inv = T::one() / T::from_f64(m as f64);
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        for j in 0..n {
                            ga[r * n + j] = ga[r * n + j] + g[j] * inv;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = self.dims(*a).1;
                self.accumulate(grads, *a, |ga| {
                    for (o, &i) in idx.iter().enumerate() {
                        add_into(&mut ga[i * n..(i + 1) * n], &g[o * n..(o + 1) * n]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let len = node.shape[1];
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        add_into(
                            &mut ga[r * n + start..r * n + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.shape[1];
                let m = node.shape[0];
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    self.accumulate(grads, p, |gp| {
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::RepeatRow(a) => {
                let n = self.value(*a).len();
                let times = node.shape[0];
                self.accumulate(grads, *a, |ga| {
                    for r in 0..times {
                        add_into(ga, &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, c) = self.dims(*logits);
                let scale = g[0] / T::from_f64(m as f64);
                self.accumulate(grads, *logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * c + j] = gl[r * c + j] + scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copies the gradient of `v` into `t`'s gradient buffer (accumulating).
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }

    /// Gradients of named parameters, merged by name when a parameter was bound twice.
    pub fn param_grads(&self) -> HashMap<String, Vec<T>> {
        let mut out: HashMap<String, Vec<T>> = HashMap::new();
        for (name, v) in &self.params {
            let Some(g) = self.grad(*v) else { continue };
            match out.get_mut(name) {
                Some(buf) => add_into(buf, g),
                None => {
                    out.insert(name.clone(), g.to_vec());
                }
            }
        }
        out
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

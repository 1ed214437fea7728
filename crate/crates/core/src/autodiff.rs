//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a straight-line computation over flat tensors. Each
//! recorded node keeps its forward value; [`Tape::backward`] walks the nodes in
//! reverse creation order and accumulates vector-Jacobian products into every
//! node that depends on a tracked leaf. Only the handful of operations needed
//! by the recurrent flow model are supported.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor has {values} values but shape {shape:?} requires {expected}")]
    BadTensor {
        shape: Vec<usize>,
        values: usize,
        expected: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this tape; call reset_grads() before running it again")]
    AlreadyBackpropagated,
    #[error("index {index} out of range for length {len} in {op}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("masked log-softmax has no unmasked entry (dead end)")]
    AllMasked,
}

/// Dense row-major tensor with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(AutodiffError::BadTensor {
                shape,
                values: values.len(),
                expected,
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
        }
    }

    pub fn vector(values: Vec<T>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Start tracking: allocates a zeroed gradient buffer.
    pub fn track(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.values.len()]);
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Adds `delta` into the gradient accumulator, tracking the tensor if needed.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        assert_eq!(delta.len(), self.values.len(), "gradient length");
        self.track();
        let g = self.grad.as_mut().expect("tracked");
        for (a, b) in g.iter_mut().zip(delta) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatVec { w: usize, x: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Concat(usize, usize),
    Row { table: usize, index: usize, width: usize },
    Slice { src: usize, start: usize },
    MaskedLogSoftmax { src: usize, mask: Vec<bool> },
    Index { src: usize, index: usize },
    Sum(usize),
    Square(usize),
    Scale(usize, T),
    AddConst(usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backpropagated: bool,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), AutodiffError> {
    if a != b {
        return Err(AutodiffError::ShapeMismatch {
            op,
            expected: a.to_vec(),
            got: b.to_vec(),
        });
    }
    Ok(())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Log-softmax restricted to the unmasked entries; masked entries are `-inf`.
pub fn masked_log_softmax<T: Scalar>(logits: &[T], mask: &[bool]) -> Result<Vec<T>, AutodiffError> {
    if logits.len() != mask.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "masked_log_softmax",
            expected: vec![logits.len()],
            got: vec![mask.len()],
        });
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(None, |acc: Option<T>, l| Some(acc.map_or(l, |a| a.max(l))))
        .ok_or(AutodiffError::AllMasked)?;
    let sum: T = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_norm = max + sum.ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - log_norm } else { T::neg_infinity() })
        .collect())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    /// Gradient of the last backward pass with respect to `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Tracked leaf: gradients flow into it.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(Op::Leaf, t.shape.clone(), t.values.clone(), true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t.shape, t.values, false)
    }

    fn req(&self, a: Var) -> bool {
        self.node(a).requires_grad
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, AutodiffError> {
        let (ws, xs) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matvec",
                expected: ws,
                got: xs,
            });
        }
        let (rows, cols) = (ws[0], ws[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let out: Vec<T> = wv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect();
        let r = self.req(w) || self.req(x);
        Ok(self.push(Op::MatVec { w: w.0, x: x.0, cols }, vec![rows], out, r))
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, AutodiffError> {
        same_shape(op_name, self.shape(a), self.shape(b))?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let r = self.req(a) || self.req(b);
        Ok(self.push(op, shape, out, r))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let r = self.req(a);
        self.push(op, shape, out, r)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::AddConst(a.0))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                expected: sa.to_vec(),
                got: sb.to_vec(),
            });
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let n = out.len();
        let r = self.req(a) || self.req(b);
        Ok(self.push(Op::Concat(a.0, b.0), vec![n], out, r))
    }

    /// Row `index` of a 2-D table (embedding lookup).
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "row",
                expected: vec![0, 0],
                got: s,
            });
        }
        if index >= s[0] {
            return Err(AutodiffError::OutOfRange {
                op: "row",
                index,
                len: s[0],
            });
        }
        let width = s[1];
        let out = self.value(table)[index * width..(index + 1) * width].to_vec();
        let r = self.req(table);
        Ok(self.push(Op::Row { table: table.0, index, width }, vec![width], out, r))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let n = self.value(src).len();
        if self.shape(src).len() != 1 || start + len > n {
            return Err(AutodiffError::OutOfRange {
                op: "slice",
                index: start + len,
                len: n,
            });
        }
        let out = self.value(src)[start..start + len].to_vec();
        let r = self.req(src);
        Ok(self.push(Op::Slice { src: src.0, start }, vec![len], out, r))
    }

    pub fn masked_log_softmax(&mut self, src: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let out = masked_log_softmax(self.value(src), mask)?;
        let shape = self.shape(src).to_vec();
        let r = self.req(src);
        Ok(self.push(
            Op::MaskedLogSoftmax {
                src: src.0,
                mask: mask.to_vec(),
            },
            shape,
            out,
            r,
        ))
    }

    /// Element `index` as a scalar node.
    pub fn index(&mut self, src: Var, index: usize) -> Result<Var, AutodiffError> {
        let n = self.value(src).len();
        if index >= n {
            return Err(AutodiffError::OutOfRange { op: "index", index, len: n });
        }
        let v = self.value(src)[index];
        let r = self.req(src);
        Ok(self.push(Op::Index { src: src.0, index }, Vec::new(), vec![v], r))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).iter().copied().sum();
        let r = self.req(a);
        self.push(Op::Sum(a.0), Vec::new(), vec![s], r)
    }

    /// Clears accumulated gradients so that [`Tape::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backpropagated = false;
    }

    /// Propagates d(loss)/d(node) to every node that depends on a tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backpropagated {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        if self.node(loss).value.len() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        self.backpropagated = true;
        if !self.req(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, target: usize) -> Option<&mut Vec<T>> {
        if !self.nodes[target].requires_grad {
            return None;
        }
        let n = self.nodes[target].value.len();
        Some(self.grads[target].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Inputs always precede `i`, so the borrow of `nodes[i]` never aliases a target gradient.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatVec { w, x, cols } => {
                if self.nodes[w].requires_grad {
                    let xv = self.nodes[x].value.clone();
                    let dw = self.acc(w).expect("tracked");
                    for (row, &gi) in dw.chunks_exact_mut(cols).zip(g) {
                        if gi != T::zero() {
                            for (d, &xj) in row.iter_mut().zip(&xv) {
                                *d += gi * xj;
                            }
                        }
                    }
                }
                if self.nodes[x].requires_grad {
                    let wv = std::mem::take(&mut self.nodes[w].value);
                    let dx = self.acc(x).expect("tracked");
                    for (row, &gi) in wv.chunks_exact(cols).zip(g) {
                        for (d, &wij) in dx.iter_mut().zip(row) {
                            *d += gi * wij;
                        }
                    }
                    self.nodes[w].value = wv;
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    if let Some(d) = self.acc(t) {
                        d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(a) {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
                if let Some(d) = self.acc(b) {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                if let Some(d) = self.acc(a) {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(&bv) {
                        *d += gi * y;
                    }
                }
                if let Some(d) = self.acc(b) {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(&av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[i].value.clone();
                if let Some(d) = self.acc(a) {
                    for ((d, &gi), &s) in d.iter_mut().zip(g).zip(&out) {
                        *d += gi * s * (T::one() - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let out = self.nodes[i].value.clone();
                if let Some(d) = self.acc(a) {
                    for ((d, &gi), &t) in d.iter_mut().zip(g).zip(&out) {
                        *d += gi * (T::one() - t * t);
                    }
                }
            }
            Op::Square(a) => {
                let x = self.nodes[a].value.clone();
                let two = T::one() + T::one();
                if let Some(d) = self.acc(a) {
                    for ((d, &gi), &xv) in d.iter_mut().zip(g).zip(&x) {
                        *d += two * xv * gi;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.acc(a) {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * c);
                }
            }
            Op::AddConst(a) => {
                if let Some(d) = self.acc(a) {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::Concat(a, b) => {
                let na = self.nodes[a].value.len();
                if let Some(d) = self.acc(a) {
                    d.iter_mut().zip(&g[..na]).for_each(|(d, &gi)| *d += gi);
                }
                if let Some(d) = self.acc(b) {
                    d.iter_mut().zip(&g[na..]).for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::Row { table, index, width } => {
                if let Some(d) = self.acc(table) {
                    d[index * width..(index + 1) * width]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::Slice { src, start } => {
                if let Some(d) = self.acc(src) {
                    d[start..start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::MaskedLogSoftmax { src, mask } => {
                let out = self.nodes[i].value.clone();
                let total: T = g
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|(&gi, _)| gi)
                    .sum();
                if let Some(d) = self.acc(src) {
                    for (((d, &gi), &m), &lp) in d.iter_mut().zip(g).zip(&mask).zip(&out) {
                        if m {
                            *d += gi - lp.exp() * total;
                        }
                    }
                }
            }
            Op::Index { src, index } => {
                if let Some(d) = self.acc(src) {
                    d[index] += g[0];
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.acc(a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

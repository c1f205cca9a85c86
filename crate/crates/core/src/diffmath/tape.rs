//! Define-by-run tape of tensor primitives with reverse-mode gradients.
//!
//! Every primitive appends one node holding its forward value. Nodes are
//! appended in evaluation order, so the node index is a topological order
//! and [`Tape::backward`] is a single reverse sweep.

use super::tensor::{numel, Scalar, Tensor};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Placeholder for a slot that has not been bound.
    pub(crate) const NONE: Var = Var(usize::MAX);

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ClampMin(Var, f64),
    AddScalar(Var),
    MulScalar(Var, f64),
    Sum(Var),
    Max(Var, usize),
    SumRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    ConcatCols(Var, Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Pad2d(Var),
    Conv2d(Var, Var, Var),
    MaxPool2d(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Sum(..) => "sum",
            Op::Max(..) => "max",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::Slice(..) => "slice",
            Op::Concat(..) => "concat",
            Op::ConcatCols(..) => "concat_cols",
            Op::Gather(..) => "gather",
            Op::Reshape(..) => "reshape",
            Op::Pad2d(..) => "pad2d",
            Op::Conv2d(..) => "conv2d",
            Op::MaxPool2d(..) => "maxpool2d",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One tape per example; dropped after backward.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_or_scalar(a: &[usize], b: &[usize]) -> bool {
    a == b || numel(b) == 1
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    /// Non-finite checking follows `debug_assertions`.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are validated")
    }

    /// Name of the primitive that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op) -> Result<Var, DiffError> {
        debug_assert_eq!(value.len(), numel(&shape));
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let id = self.nodes.len();
        if self.check_finite && value.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite { node: id, op: op.name() });
        }
        self.nodes.push(Node { value, shape, op, requires_grad });
        Ok(Var(id))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::AddCol(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Neg(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::ClampMin(a, _)
            | Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Sum(a)
            | Op::Max(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::LogSumExpRows(a)
            | Op::Slice(a, _)
            | Op::Gather(a, _)
            | Op::Reshape(a)
            | Op::Pad2d(a)
            | Op::MaxPool2d(a, _) => vec![*a],
            Op::Concat(vs) => vs.clone(),
            Op::Conv2d(a, b, c) => vec![*a, *b, *c],
        }
    }

    // ---- leaves ----------------------------------------------------------

    /// Constant input; gradients are not tracked through it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { value: t.into_data(), shape, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; gradients are tracked.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { value: t.into_data(), shape, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var, DiffError> {
        Ok(self.constant(Tensor::new(shape, data)?))
    }

    // ---- linear algebra ----------------------------------------------------

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), DiffError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(DiffError::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(DiffError::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o = *o + x * y;
                }
            }
        }
        self.push(out, vec![m, n], Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims2("matmul_t", a)?;
        let (n, k2) = self.dims2("matmul_t", b)?;
        if k != k2 {
            return Err(DiffError::shape("matmul_t", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).fold(T::zero(), |s, (&x, &y)| s + x * y);
            }
        }
        self.push(out, vec![m, n], Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("transpose", a)?;
        let av = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(out, vec![n, m], Op::Transpose(a))
    }

    // ---- elementwise binary ------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !same_or_scalar(&sa, &sb) {
            return Err(DiffError::shape(name, format!("{sa:?} vs {sb:?}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<T> = if bv.len() == 1 && av.len() != 1 {
            av.iter().map(|&x| f(x, bv[0])).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        self.push(out, sa, op)
    }

    /// Elementwise sum; `b` may be a one-element scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.value(b).iter().any(|&y| y == T::zero()) {
            return Err(DiffError::Domain { op: "div", detail: "division by zero".into() });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `m[i][j] + v[j]` for `m: r×c`, `v` of length `c`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("add_row", m)?;
        if numel(self.shape(v)) != c {
            return Err(DiffError::shape("add_row", format!("{r}x{c} + {:?}", self.shape(v))));
        }
        let (mv, vv) = (self.value(m), self.value(v));
        let out = mv.iter().enumerate().map(|(k, &x)| x + vv[k % c]).collect();
        self.push(out, vec![r, c], Op::AddRow(m, v))
    }

    /// `m[i][j] + v[i]` for `m: r×c`, `v` of length `r`.
    pub fn add_col(&mut self, m: Var, v: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("add_col", m)?;
        if numel(self.shape(v)) != r {
            return Err(DiffError::shape("add_col", format!("{r}x{c} + {:?}", self.shape(v))));
        }
        let (mv, vv) = (self.value(m), self.value(v));
        let out = mv.iter().enumerate().map(|(k, &x)| x + vv[k / c]).collect();
        self.push(out, vec![r, c], Op::AddCol(m, v))
    }

    // ---- elementwise unary -------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op) -> Result<Var, DiffError> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, op)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        if let Some(x) = self.value(a).iter().find(|&&x| !(x > T::zero())) {
            return Err(DiffError::Domain { op: "log", detail: format!("log of {x:?}") });
        }
        self.unary(a, T::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, DiffError> {
        let f = T::of(floor);
        self.unary(a, |x| x.max(f), Op::ClampMin(a, floor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let c = T::of(c);
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let k = T::of(c);
        self.unary(a, |x| x * k, Op::MulScalar(a, c))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(a))
    }

    /// Maximum over all entries; the gradient goes to the first argmax.
    pub fn max(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a);
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        let m = v[best];
        self.push(vec![m], vec![1], Op::Max(a, best))
    }

    /// Row sums of a matrix, shape `r×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("sum_rows", a)?;
        let out = self.value(a).chunks(c).map(|row| row.iter().copied().sum()).collect();
        self.push(out, vec![r, 1], Op::SumRows(a))
    }

    /// Column sums of a matrix, shape `1×c`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, DiffError> {
        let (_, c) = self.dims2("sum_cols", a)?;
        let mut out = vec![T::zero(); c];
        for row in self.value(a).chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        self.push(out, vec![1, c], Op::SumCols(a))
    }

    /// Stable `log Σ_j exp(a[i][j])` per row, shape `r×1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("logsumexp_rows", a)?;
        let out = self
            .value(a)
            .chunks(c)
            .map(|row| {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                if m == T::neg_infinity() {
                    return m;
                }
                m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
            })
            .collect();
        self.push(out, vec![r, 1], Op::LogSumExpRows(a))
    }

    // ---- structure ---------------------------------------------------------

    /// Contiguous slice of the flattened tensor starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, shape: Vec<usize>) -> Result<Var, DiffError> {
        let len = numel(&shape);
        if len == 0 || start + len > self.value(a).len() {
            return Err(DiffError::shape(
                "slice",
                format!("[{start}, {}) of {:?}", start + len, self.shape(a)),
            ));
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push(out, shape, Op::Slice(a, start))
    }

    /// Row `i` of a matrix as a `1×c` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("row", a)?;
        if i >= r {
            return Err(DiffError::shape("row", format!("row {i} of {r}x{c}")));
        }
        self.slice(a, i * c, vec![1, c])
    }

    /// Flat concatenation; with equal-width rows this stacks matrices vertically.
    pub fn concat(&mut self, parts: &[Var], shape: Vec<usize>) -> Result<Var, DiffError> {
        let total: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        if parts.is_empty() || total != numel(&shape) {
            return Err(DiffError::shape("concat", format!("{total} values into {shape:?}")));
        }
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(out, shape, Op::Concat(parts.to_vec()))
    }

    /// `[a ∥ b]` for `a: r×c1`, `b: r×c2`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c1) = self.dims2("concat_cols", a)?;
        let (r2, c2) = self.dims2("concat_cols", b)?;
        if r != r2 {
            return Err(DiffError::shape("concat_cols", format!("{r} rows vs {r2} rows")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            out.extend_from_slice(&av[i * c1..(i + 1) * c1]);
            out.extend_from_slice(&bv[i * c2..(i + 1) * c2]);
        }
        self.push(out, vec![r, c1 + c2], Op::ConcatCols(a, b))
    }

    /// Rows `ids` of `table`, shape `len(ids)×c`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("gather", table)?;
        if ids.is_empty() {
            return Err(DiffError::shape("gather", "no ids".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= r) {
            return Err(DiffError::shape("gather", format!("id {bad} out of {r} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        self.push(out, vec![ids.len(), c], Op::Gather(table, ids.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, DiffError> {
        if numel(&shape) != self.value(a).len() || shape.contains(&0) {
            return Err(DiffError::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        self.push(out, shape, Op::Reshape(a))
    }

    /// Zero-pads a matrix at the bottom and right to `rows×cols`.
    pub fn pad2d(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims2("pad2d", a)?;
        if r > rows || c > cols {
            return Err(DiffError::shape("pad2d", format!("{r}x{c} into {rows}x{cols}")));
        }
        let av = self.value(a);
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..r {
            out[i * cols..i * cols + c].copy_from_slice(&av[i * c..(i + 1) * c]);
        }
        self.push(out, vec![rows, cols], Op::Pad2d(a))
    }

    // ---- convolution -------------------------------------------------------

    /// Same-padded 2-D cross-correlation.
    ///
    /// `input: c_in×h×w`, `filters: c_out×c_in×f×f` with `f` odd, `bias: c_out`.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var, DiffError> {
        let (ci, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(DiffError::shape("conv2d", format!("input {s:?}"))),
        };
        let (co, ci2, f) = match self.shape(filters) {
            [o, c, f1, f2] if f1 == f2 => (*o, *c, *f1),
            s => return Err(DiffError::shape("conv2d", format!("filters {s:?}"))),
        };
        if ci != ci2 || numel(self.shape(bias)) != co {
            return Err(DiffError::shape(
                "conv2d",
                format!("input channels {ci}, filter channels {ci2}, bias {:?}", self.shape(bias)),
            ));
        }
        if f % 2 == 0 {
            return Err(DiffError::shape("conv2d", format!("filter size {f} is even")));
        }
        let pad = f / 2;
        if f > h + 2 * pad || f > w + 2 * pad {
            return Err(DiffError::shape("conv2d", format!("{f}x{f} filter on {h}x{w}")));
        }
        let (xv, wv, bv) = (self.value(input), self.value(filters), self.value(bias));
        let mut out = vec![T::zero(); co * h * w];
        for o in 0..co {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|x| *x = bv[o]);
            for c in 0..ci {
                let src = &xv[c * h * w..(c + 1) * h * w];
                for dy in 0..f {
                    for dx in 0..f {
                        let k = wv[((o * ci + c) * f + dy) * f + dx];
                        if k == T::zero() {
                            continue;
                        }
                        // output (y, x) reads input (y + dy - pad, x + dx - pad)
                        let y0 = pad.saturating_sub(dy);
                        let y1 = (h + pad).saturating_sub(dy).min(h);
                        let x0 = pad.saturating_sub(dx);
                        let x1 = (w + pad).saturating_sub(dx).min(w);
                        for y in y0..y1 {
                            let sy = y + dy - pad;
                            let srow = &src[sy * w..(sy + 1) * w];
                            let orow = &mut plane[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                orow[x] = orow[x] + k * srow[x + dx - pad];
                            }
                        }
                    }
                }
            }
        }
        self.push(out, vec![co, h, w], Op::Conv2d(input, filters, bias))
    }

    /// 2×2 max pooling with stride 2; odd edges form partial windows.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var, DiffError> {
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(DiffError::shape("maxpool2d", format!("input {s:?}"))),
        };
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let xv = self.value(input);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut arg = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = usize::MAX;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for x in 2 * ox..(2 * ox + 2).min(w) {
                            let idx = (ch * h + y) * w + x;
                            if best == usize::MAX || xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    arg.push(best);
                }
            }
        }
        self.push(out, vec![c, oh, ow], Op::MaxPool2d(input, arg))
    }

    // ---- composites ----------------------------------------------------------

    /// `Σ a ∘ b`, a one-element result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>, DiffError> {
        if self.value(out).len() != 1 {
            return Err(DiffError::shape("backward", format!("output {:?}", self.shape(out))));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![T::one()]);
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFinite { node: id, op: node.op.name() });
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = G · Bᵀ
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] =
                                ga[i * k + p] + gr.iter().zip(br).fold(T::zero(), |s, (&x, &y)| s + x * y);
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            for (o, &gy) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *o = *o + x * gy;
                            }
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (o, &x) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *o = *o + gij * x;
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (o, &x) in gb[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *o = *o + gij * x;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                acc(*a, &mut |ga| {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o = *o + x;
                    }
                });
                let bn = self.value(*b).len();
                acc(*b, &mut |gb| {
                    if bn == 1 && g.len() != 1 {
                        gb[0] = gb[0] + sign * g.iter().copied().sum();
                    } else {
                        for (o, &x) in gb.iter_mut().zip(g) {
                            *o = *o + sign * x;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bscalar = bv.len() == 1 && av.len() != 1;
                acc(*a, &mut |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        let bb = if bscalar { bv[0] } else { bv[i] };
                        *o = *o + g[i] * bb;
                    }
                });
                acc(*b, &mut |gb| {
                    if bscalar {
                        gb[0] = gb[0] + g.iter().zip(av).fold(T::zero(), |s, (&x, &y)| s + x * y);
                    } else {
                        for (i, o) in gb.iter_mut().enumerate() {
                            *o = *o + g[i] * av[i];
                        }
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bscalar = bv.len() == 1 && av.len() != 1;
                acc(*a, &mut |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        let bb = if bscalar { bv[0] } else { bv[i] };
                        *o = *o + g[i] / bb;
                    }
                });
                // d(a/b)/db = -a/b² = -y/b
                acc(*b, &mut |gb| {
                    if bscalar {
                        gb[0] = gb[0] - g.iter().zip(y).fold(T::zero(), |s, (&x, &q)| s + x * q) / bv[0];
                    } else {
                        for (i, o) in gb.iter_mut().enumerate() {
                            *o = *o - g[i] * y[i] / bv[i];
                        }
                    }
                });
            }
            Op::AddRow(m, v) => {
                let c = self.shape(*m)[1];
                acc(*m, &mut |gm| {
                    for (o, &x) in gm.iter_mut().zip(g) {
                        *o = *o + x;
                    }
                });
                acc(*v, &mut |gv| {
                    for (k, &x) in g.iter().enumerate() {
                        gv[k % c] = gv[k % c] + x;
                    }
                });
            }
            Op::AddCol(m, v) => {
                let c = self.shape(*m)[1];
                acc(*m, &mut |gm| {
                    for (o, &x) in gm.iter_mut().zip(g) {
                        *o = *o + x;
                    }
                });
                acc(*v, &mut |gv| {
                    for (k, &x) in g.iter().enumerate() {
                        gv[k / c] = gv[k / c] + x;
                    }
                });
            }
            Op::Neg(a) => acc(*a, &mut |ga| {
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o = *o - x;
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for i in 0..ga.len() {
                    ga[i] = ga[i] + g[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let av = self.value(*a);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] / av[i];
                    }
                })
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for i in 0..ga.len() {
                    ga[i] = ga[i] + g[i] * y[i] * (T::one() - y[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for i in 0..ga.len() {
                    ga[i] = ga[i] + g[i] * (T::one() - y[i] * y[i]);
                }
            }),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] > T::zero() {
                            ga[i] = ga[i] + g[i];
                        }
                    }
                })
            }
            Op::ClampMin(a, floor) => {
                let (av, f) = (self.value(*a), T::of(*floor));
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] > f {
                            ga[i] = ga[i] + g[i];
                        }
                    }
                })
            }
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| {
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o = *o + x;
                }
            }),
            Op::MulScalar(a, c) => {
                let k = T::of(*c);
                acc(*a, &mut |ga| {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o = *o + k * x;
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for o in ga.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::Max(a, idx) => acc(*a, &mut |ga| ga[*idx] = ga[*idx] + g[0]),
            Op::SumRows(a) => {
                let c = self.shape(*a)[1];
                acc(*a, &mut |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o = *o + g[k / c];
                    }
                })
            }
            Op::SumCols(a) => {
                let c = self.shape(*a)[1];
                acc(*a, &mut |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o = *o + g[k % c];
                    }
                })
            }
            Op::LogSumExpRows(a) => {
                let c = self.shape(*a)[1];
                let av = self.value(*a);
                acc(*a, &mut |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        let r = k / c;
                        if y[r] == T::neg_infinity() {
                            continue;
                        }
                        *o = *o + g[r] * (av[k] - y[r]).exp();
                    }
                })
            }
            Op::Slice(a, start) => acc(*a, &mut |ga| {
                for (o, &x) in ga[*start..*start + g.len()].iter_mut().zip(g) {
                    *o = *o + x;
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        let seg = &g[off..off + n];
                        acc(p, &mut |gp| {
                            for (o, &x) in gp.iter_mut().zip(seg) {
                                *o = *o + x;
                            }
                        });
                    }
                    off += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let c1 = self.shape(*a)[1];
                let c2 = self.shape(*b)[1];
                let w = c1 + c2;
                acc(*a, &mut |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o = *o + g[(k / c1) * w + k % c1];
                    }
                });
                acc(*b, &mut |gb| {
                    for (k, o) in gb.iter_mut().enumerate() {
                        *o = *o + g[(k / c2) * w + c1 + k % c2];
                    }
                });
            }
            Op::Gather(table, ids) => {
                let c = self.shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &x) in gt[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *o = *o + x;
                        }
                    }
                })
            }
            Op::Pad2d(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let cols = node.shape[1];
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = ga[i * c + j] + g[i * cols + j];
                        }
                    }
                })
            }
            Op::Conv2d(input, filters, bias) => self.conv2d_backward(*input, *filters, *bias, g, &mut acc),
            Op::MaxPool2d(a, arg) => acc(*a, &mut |ga| {
                for (&src, &x) in arg.iter().zip(g) {
                    ga[src] = ga[src] + x;
                }
            }),
        }
    }

    fn conv2d_backward(
        &self,
        input: Var,
        filters: Var,
        bias: Var,
        g: &[T],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [T])),
    ) {
        let (ci, h, w) = (self.shape(input)[0], self.shape(input)[1], self.shape(input)[2]);
        let (co, f) = (self.shape(filters)[0], self.shape(filters)[2]);
        let pad = f / 2;
        let (xv, wv) = (self.value(input), self.value(filters));
        let plane = h * w;
        acc(bias, &mut |gb| {
            for o in 0..co {
                gb[o] = gb[o] + g[o * plane..(o + 1) * plane].iter().copied().sum();
            }
        });
        // Shared loop over (o, c, dy, dx) and the valid output window.
        let for_taps = |visit: &mut dyn FnMut(usize, usize, usize, usize, usize, usize, usize, usize)| {
            for o in 0..co {
                for c in 0..ci {
                    for dy in 0..f {
                        for dx in 0..f {
                            let y0 = pad.saturating_sub(dy);
                            let y1 = (h + pad).saturating_sub(dy).min(h);
                            let x0 = pad.saturating_sub(dx);
                            let x1 = (w + pad).saturating_sub(dx).min(w);
                            visit(o, c, dy, dx, y0, y1, x0, x1);
                        }
                    }
                }
            }
        };
        acc(filters, &mut |gw| {
            for_taps(&mut |o, c, dy, dx, y0, y1, x0, x1| {
                let mut s = T::zero();
                for y in y0..y1 {
                    let sy = y + dy - pad;
                    let grow = &g[o * plane + y * w..o * plane + (y + 1) * w];
                    let xrow = &xv[c * plane + sy * w..c * plane + (sy + 1) * w];
                    for x in x0..x1 {
                        s = s + grow[x] * xrow[x + dx - pad];
                    }
                }
                let k = ((o * ci + c) * f + dy) * f + dx;
                gw[k] = gw[k] + s;
            });
        });
        acc(input, &mut |gi| {
            for_taps(&mut |o, c, dy, dx, y0, y1, x0, x1| {
                let k = wv[((o * ci + c) * f + dy) * f + dx];
                if k == T::zero() {
                    return;
                }
                for y in y0..y1 {
                    let sy = y + dy - pad;
                    for x in x0..x1 {
                        let si = c * plane + sy * w + x + dx - pad;
                        gi[si] = gi[si] + k * g[o * plane + y * w + x];
                    }
                }
            });
        });
    }
}

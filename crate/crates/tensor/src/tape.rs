//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its inputs. Because a node can only reference nodes that already exist, the
//! tape is topologically ordered by construction and `backward` is a single
//! reverse sweep. The tape is cleared after each backward pass; handles from a
//! previous pass are rejected.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    generation: u64,
}

/// Kinds of recorded operations. Everything except `Leaf` has an adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Reshape,
    Softmax,
    LogSoftmax,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul,
    Scale,
    Sigmoid,
    Exp,
    Log,
    Relu,
    SmoothL1,
    WrapAngle,
    ClampMin,
    Minimum,
    Maximum,
    Im2Col,
    AddBias,
    AvgPool2d,
    MaxPool2d,
    GlobalAvgPool,
    Sum,
    Mean,
    Gather,
    Concat,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 29] = [
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::ScalarMul,
        OpKind::Scale,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Relu,
        OpKind::SmoothL1,
        OpKind::WrapAngle,
        OpKind::ClampMin,
        OpKind::Minimum,
        OpKind::Maximum,
        OpKind::Im2Col,
        OpKind::AddBias,
        OpKind::AvgPool2d,
        OpKind::MaxPool2d,
        OpKind::GlobalAvgPool,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Gather,
        OpKind::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Relu => "relu",
            OpKind::SmoothL1 => "smooth_l1",
            OpKind::WrapAngle => "wrap_angle",
            OpKind::ClampMin => "clamp_min",
            OpKind::Minimum => "minimum",
            OpKind::Maximum => "maximum",
            OpKind::Im2Col => "im2col",
            OpKind::AddBias => "add_bias",
            OpKind::AvgPool2d => "avg_pool2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Gather => "gather",
            OpKind::Concat => "concat",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        std::iter::once(OpKind::Leaf)
            .chain(Self::DIFFERENTIABLE)
            .find(|k| k.name() == name)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Spatial padding for `conv2d` (stride is always 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves `H×W`.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Exp,
    Log,
    Relu,
    SmoothL1,
    WrapAngle,
}

#[derive(Debug, Clone, Copy)]
struct PatchGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl PatchGeometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (column-matrix offset, input offset) pair that lies inside the image.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        let cols = self.cols();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oy in 0..self.out_h {
                        let iy = oy + ki;
                        if iy < self.pad || iy - self.pad >= self.height {
                            continue;
                        }
                        let iy = iy - self.pad;
                        for ox in 0..self.out_w {
                            let ix = ox + kj;
                            if ix < self.pad || ix - self.pad >= self.width {
                                continue;
                            }
                            let ix = ix - self.pad;
                            f(
                                row * cols + oy * self.out_w + ox,
                                (c * self.height + iy) * self.width + ix,
                            );
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Reshape { x: usize },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    ScalarMul { s: usize, x: usize },
    Scale { x: usize, factor: f64 },
    Unary { x: usize, kind: Unary },
    ClampMin { x: usize, floor: f64 },
    Minimum { a: usize, b: usize },
    Maximum { a: usize, b: usize },
    Im2Col { x: usize, geom: PatchGeometry },
    AddBias { x: usize, bias: usize },
    AvgPool2d { x: usize, factor: usize },
    /// `argmax[o]` is the flat input index selected for output `o`.
    MaxPool2d { x: usize, argmax: Vec<usize> },
    GlobalAvgPool { x: usize },
    Sum { x: usize },
    Mean { x: usize },
    Gather { x: usize, indices: Vec<usize> },
    Concat { parts: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Div { .. } => OpKind::Div,
            Op::ScalarMul { .. } => OpKind::ScalarMul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Unary { kind, .. } => match kind {
                Unary::Sigmoid => OpKind::Sigmoid,
                Unary::Exp => OpKind::Exp,
                Unary::Log => OpKind::Log,
                Unary::Relu => OpKind::Relu,
                Unary::SmoothL1 => OpKind::SmoothL1,
                Unary::WrapAngle => OpKind::WrapAngle,
            },
            Op::ClampMin { .. } => OpKind::ClampMin,
            Op::Minimum { .. } => OpKind::Minimum,
            Op::Maximum { .. } => OpKind::Maximum,
            Op::Im2Col { .. } => OpKind::Im2Col,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::AvgPool2d { .. } => OpKind::AvgPool2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Gather { .. } => OpKind::Gather,
            Op::Concat { .. } => OpKind::Concat,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`] for every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    generation: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` was a tracked leaf.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_deref())
    }
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil()
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn softmax_slices(x: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..len).map(|k| (x[at(k)] - max).exp()).sum();
            if log {
                let lse = denom.ln();
                for k in 0..len {
                    out[at(k)] = x[at(k)] - max - lse;
                }
            } else {
                for k in 0..len {
                    out[at(k)] = (x[at(k)] - max).exp() / denom;
                }
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            generation: next_generation(),
            fault: None,
        }
    }

    /// Test hook: scales the adjoint of every `kind` node by 1.5 so that the
    /// gradient suite can demonstrate it notices a broken rule.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and invalidates outstanding handles.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = next_generation();
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(
            v.generation, self.generation,
            "variable belongs to another tape or a cleared pass"
        );
        v.index
    }

    fn node(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let tracked = inputs.iter().any(|&i| self.nodes[i].value.requires_grad());
        let mut value = value;
        if value.requires_grad() != tracked {
            value = value.with_requires_grad(tracked);
        }
        self.nodes.push(Node { value, op });
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    /// Records a leaf; gradient tracking follows `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        tensor.clear_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.node(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).shape()
    }

    /// Value of a single-element variable.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.node(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad()
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (sa, sb) = (self.node(a).shape(), self.node(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.node(a).data(), self.node(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x);
        let s = self.node(x).shape();
        if s.len() != 2 {
            return Err(TensorError::dim("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let value = Tensor::new(&[c, r], transpose_raw(self.node(x).data(), r, c))?;
        Ok(self.push(value, Op::Transpose { x: ix }, &[ix]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x);
        let src = self.node(x);
        if shape.iter().product::<usize>() != src.numel() {
            return Err(TensorError::dim("reshape", src.shape(), shape));
        }
        let value = src.reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x: ix }, &[ix]))
    }

    // ---- normalisation --------------------------------------------------

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let ix = self.idx(x);
        let src = self.node(x);
        if axis >= src.rank() {
            return Err(TensorError::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                src.shape()
            )));
        }
        let out = softmax_slices(src.data(), src.shape(), axis, log);
        let value = Tensor::new(src.shape(), out)?;
        let op = if log {
            Op::LogSoftmax { x: ix, axis }
        } else {
            Op::Softmax { x: ix, axis }
        };
        Ok(self.push(value, op, &[ix]))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (ta, tb) = (self.node(a), self.node(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(name, ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), out)?;
        Ok(self.push(value, op(ia, ib), &[ia, ib]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(z) = self.node(b).data().iter().find(|v| **v == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: format!("division by {z}"),
            });
        }
        self.binary("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, |a, b| Op::Minimum { a, b })
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, |a, b| Op::Maximum { a, b })
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        let (is, ix) = (self.idx(s), self.idx(x));
        let (ts, tx) = (self.node(s), self.node(x));
        if ts.numel() != 1 {
            return Err(TensorError::dim("scalar_mul", ts.shape(), &[1]));
        }
        let k = ts.data()[0];
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|v| k * v).collect())?;
        Ok(self.push(value, Op::ScalarMul { s: is, x: ix }, &[is, ix]))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|v| factor * v).collect())?;
        Ok(self.push(value, Op::Scale { x: ix, factor }, &[ix]))
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        if kind == Unary::Log {
            if let Some(bad) = tx.data().iter().find(|v| !(**v > 0.0)) {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Unary::SmoothL1 => smooth_l1,
            Unary::WrapAngle => wrap_angle,
        };
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|&v| f(v)).collect())?;
        Ok(self.push(value, Op::Unary { x: ix, kind }, &[ix]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    /// Natural log; any non-positive element is a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    /// Elementwise Huber function with transition at `|x| = 1`.
    pub fn smooth_l1(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::SmoothL1)
    }

    /// Elementwise wrap into `(-π, π]`; the derivative is 1 away from the seams.
    pub fn wrap_angle(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::WrapAngle)
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|v| v.max(floor)).collect())?;
        Ok(self.push(value, Op::ClampMin { x: ix, floor }, &[ix]))
    }

    // ---- spatial --------------------------------------------------------

    /// Unrolls `k×k` patches of a `C×H×W` input into a `(C·k·k) × (H'·W')` matrix.
    pub fn im2col(&mut self, x: Var, kernel: usize, padding: Padding) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let s = tx.shape();
        if s.len() != 3 {
            return Err(TensorError::dim("im2col", s, &[0, 0, 0]));
        }
        if kernel != 1 && kernel != 3 {
            return Err(TensorError::Config(format!(
                "unsupported kernel size {kernel}; expected 1 or 3"
            )));
        }
        let pad = match padding {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        };
        let (c, h, w) = (s[0], s[1], s[2]);
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(TensorError::dim("im2col", s, &[kernel, kernel]));
        }
        let geom = PatchGeometry {
            channels: c,
            height: h,
            width: w,
            kernel,
            pad,
            out_h: h + 2 * pad - kernel + 1,
            out_w: w + 2 * pad - kernel + 1,
        };
        let mut cols = vec![0.0; geom.rows() * geom.cols()];
        let src = tx.data();
        geom.for_each(|dst, from| cols[dst] = src[from]);
        let value = Tensor::new(&[geom.rows(), geom.cols()], cols)?;
        Ok(self.push(value, Op::Im2Col { x: ix, geom }, &[ix]))
    }

    /// Stride-1 cross-correlation of `input[C_in×H×W]` with `kernel[C_out×C_in×k×k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] != sk[3] {
            return Err(TensorError::dim("conv2d", &si, &sk));
        }
        let k = sk[2];
        let cols = self.im2col(input, k, padding)?;
        let (out_h, out_w) = match padding {
            Padding::Same => (si[1], si[2]),
            Padding::Valid => (si[1] + 1 - k, si[2] + 1 - k),
        };
        let wmat = self.reshape(kernel, &[sk[0], sk[1] * k * k])?;
        let out = self.matmul(wmat, cols)?;
        self.reshape(out, &[sk[0], out_h, out_w])
    }

    /// Adds `bias[C]` along the leading axis of `x[C×…]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x), self.idx(bias));
        let (tx, tb) = (self.node(x), self.node(bias));
        if tx.rank() < 1 || tb.shape() != [tx.shape()[0]] {
            return Err(TensorError::dim("add_bias", tx.shape(), tb.shape()));
        }
        let per = tx.numel() / tx.shape()[0];
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i / per])
            .collect();
        let value = Tensor::new(tx.shape(), out)?;
        Ok(self.push(value, Op::AddBias { x: ix, bias: ib }, &[ix, ib]))
    }

    /// Non-overlapping `factor×factor` mean pooling of a `C×H×W` map.
    pub fn avg_pool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let s = tx.shape();
        if s.len() != 3 || factor == 0 || s[1] % factor != 0 || s[2] % factor != 0 {
            return Err(TensorError::dim("avg_pool2d", s, &[factor, factor]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; c * oh * ow];
        let src = tx.data();
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * oh + y / factor) * ow + xx / factor] += src[(ch * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        let value = Tensor::new(&[c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool2d { x: ix, factor }, &[ix]))
    }

    /// Non-overlapping `factor×factor` max pooling; ties go to the first
    /// element in row-major window order.
    pub fn max_pool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let s = tx.shape();
        if s.len() != 3 || factor == 0 || s[1] % factor != 0 || s[2] % factor != 0 {
            return Err(TensorError::dim("max_pool2d", s, &[factor, factor]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / factor, w / factor);
        let src = tx.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (ch * h + oy * factor) * w + ox * factor;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let i = (ch * h + oy * factor + dy) * w + ox * factor + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { x: ix, argmax }, &[ix]))
    }

    /// Per-channel spatial mean: `C×H×W → C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x);
        let tx = self.node(x);
        let s = tx.shape();
        if s.len() != 3 {
            return Err(TensorError::dim("global_avg_pool", s, &[0, 0, 0]));
        }
        let (c, n) = (s[0], s[1] * s[2]);
        let out = tx
            .data()
            .chunks(n)
            .map(|ch| ch.iter().sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(&[c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x: ix }, &[ix]))
    }

    // ---- reductions and indexing ----------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x);
        let total = self.node(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum { x: ix }, &[ix]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x);
        let t = self.node(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean { x: ix }, &[ix]))
    }

    /// Selects elements by flat (row-major) index into a 1-D tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let ix = self.idx(x);
        let t = self.node(x);
        if indices.is_empty() {
            return Err(TensorError::Contract("gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.numel()) {
            return Err(TensorError::Contract(format!(
                "gather index {bad} out of range for shape {:?}",
                t.shape()
            )));
        }
        let out = indices.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::new(&[indices.len()], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                x: ix,
                indices: indices.to_vec(),
            },
            &[ix],
        ))
    }

    /// Flattens and concatenates the inputs into one 1-D tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat of nothing".into()));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let out: Vec<f64> = idx
            .iter()
            .flat_map(|&i| self.nodes[i].value.data().iter().copied())
            .collect();
        let n = out.len();
        let value = Tensor::new(&[n], out)?;
        Ok(self.push(value, Op::Concat { parts: idx.clone() }, &idx))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Propagates `∂loss/∂·` to every tracked leaf and clears the tape.
    ///
    /// Leaves that require gradients but are not reachable from `loss`
    /// receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss);
        if self.nodes[root].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            if !node.value.requires_grad() {
                continue;
            }
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.adjoint(i, &g, &mut grads);
        }

        let generation = self.generation;
        let mut out = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                out[i] = Some(
                    grads[i]
                        .take()
                        .unwrap_or_else(|| vec![0.0; node.value.numel()]),
                );
            }
        }
        self.clear();
        Ok(Gradients {
            generation,
            grads: out,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, contrib: Vec<f64>) {
        if !self.nodes[target].value.requires_grad() {
            return;
        }
        match &mut grads[target] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn tracked(&self, i: usize) -> bool {
        self.nodes[i].value.requires_grad()
    }

    fn adjoint(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.tracked(*a) {
                    let bt = transpose_raw(val(*b), k, n);
                    self.accumulate(grads, *a, matmul_raw(g, &bt, m, n, k));
                }
                if self.tracked(*b) {
                    let at = transpose_raw(val(*a), m, k);
                    self.accumulate(grads, *b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose { x } => {
                let s = self.nodes[*x].value.shape();
                // g has the transposed shape [cols, rows].
                self.accumulate(grads, *x, transpose_raw(g, s[1], s[0]));
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for s in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + s;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for s in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + s;
                        let total: f64 = (0..len).map(|k| g[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = g[at(k)] - y[at(k)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, b)| g * b).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(g, a)| g * a).collect());
            }
            Op::Div { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, b)| g / b).collect());
                let db = g
                    .iter()
                    .zip(va.iter().zip(vb))
                    .map(|(g, (a, b))| -g * a / (b * b))
                    .collect();
                self.accumulate(grads, *b, db);
            }
            Op::ScalarMul { s, x } => {
                let k = val(*s)[0];
                let vx = val(*x);
                let ds: f64 = g.iter().zip(vx).map(|(g, x)| g * x).sum();
                self.accumulate(grads, *s, vec![ds]);
                self.accumulate(grads, *x, g.iter().map(|g| g * k).collect());
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, g.iter().map(|g| g * factor).collect());
            }
            Op::Unary { x, kind } => {
                let vx = val(*x);
                let dx = g
                    .iter()
                    .zip(vx.iter().zip(y))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Exp => y,
                            Unary::Log => 1.0 / x,
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::SmoothL1 => {
                                if x.abs() < 1.0 {
                                    x
                                } else {
                                    x.signum()
                                }
                            }
                            Unary::WrapAngle => 1.0,
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::ClampMin { x, floor } => {
                let vx = val(*x);
                let dx = g
                    .iter()
                    .zip(vx)
                    .map(|(g, x)| if *x > *floor { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Minimum { a, b } | Op::Maximum { a, b } => {
                let take_min = matches!(node.op, Op::Minimum { .. });
                let (va, vb) = (val(*a), val(*b));
                let picks_a: Vec<bool> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| if take_min { x <= y } else { x >= y })
                    .collect();
                let da = g
                    .iter()
                    .zip(&picks_a)
                    .map(|(g, &p)| if p { *g } else { 0.0 })
                    .collect();
                let db = g
                    .iter()
                    .zip(&picks_a)
                    .map(|(g, &p)| if p { 0.0 } else { *g })
                    .collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Im2Col { x, geom } => {
                let mut dx = vec![0.0; self.nodes[*x].value.numel()];
                geom.for_each(|col, from| dx[from] += g[col]);
                self.accumulate(grads, *x, dx);
            }
            Op::AddBias { x, bias } => {
                let c = self.nodes[*bias].value.numel();
                let per = g.len() / c;
                let db = g.chunks(per).map(|ch| ch.iter().sum()).collect();
                self.accumulate(grads, *x, g.to_vec());
                self.accumulate(grads, *bias, db);
            }
            Op::AvgPool2d { x, factor } => {
                let s = self.nodes[*x].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / factor, w / factor);
                let norm = 1.0 / (factor * factor) as f64;
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            dx[(ch * h + yy) * w + xx] =
                                g[(ch * oh + yy / factor) * ow + xx / factor] * norm;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![0.0; self.nodes[*x].value.numel()];
                for (&i, gi) in argmax.iter().zip(g) {
                    dx[i] += gi;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let s = self.nodes[*x].value.shape();
                let n = s[1] * s[2];
                let dx = g
                    .iter()
                    .flat_map(|gc| std::iter::repeat_n(gc / n as f64, n))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sum { x } => {
                let n = self.nodes[*x].value.numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].value.numel();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Gather { x, indices } => {
                let mut dx = vec![0.0; self.nodes[*x].value.numel()];
                for (gi, &src) in g.iter().zip(indices) {
                    dx[src] += gi;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.numel();
                    self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_products() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

        let eye = tape.constant(Tensor::eye(2));
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(a).data());

        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let any = tape.constant(t(&[3, 4], &[1.5; 12]));
        let c = tape.matmul(z, any).unwrap();
        assert_eq!(tape.shape(c), &[2, 4]);
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(TensorError::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::from_vec(vec![0.0, 3f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

        let x = tape.constant(Tensor::from_vec(vec![-7.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);

        assert!(tape.softmax(x, 1).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1e3, -1e3, 999.0, 0.0, 1e3, 1e3]));
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(3) {
            assert!(row.iter().all(|v| v.is_finite()));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.item(s).unwrap(), 0.5);

        let x = tape.constant(Tensor::from_vec(vec![1.0, -2.0, 3.5]));
        let zeros = tape.constant(Tensor::zeros(&[3]));
        let y = tape.add(x, zeros).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        for v in [1.7, -0.3, 0.0, 12.0] {
            let x = tape.constant(Tensor::scalar(v));
            let e = tape.exp(x).unwrap();
            let l = tape.log(e).unwrap();
            assert!((tape.item(l).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(TensorError::Domain { .. })));
        let y = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(x, y), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.2) - (3.2 - 2.0 * PI)).abs() < 1e-15);
        assert!((wrap_angle(7.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
    }

    #[test]
    fn conv2d_examples() {
        let mut tape = Tape::new();
        // All-ones 3×3 kernel over a constant-one 3×3 map with valid padding.
        let x = tape.constant(Tensor::ones(&[1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, Padding::Valid).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);

        // Identity channel mixing with k = 1.
        let x = tape.constant(t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let k = tape.constant(Tensor::eye(2).reshaped(&[2, 2, 1, 1]).unwrap());
        let y = tape.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let k5 = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(matches!(
            tape.conv2d(x, k5, Padding::Same),
            Err(TensorError::Config(_))
        ));
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5]);

        let c = tape.constant(Tensor::full(&[3, 4, 5], 1.25));
        let p = tape.global_avg_pool(c).unwrap();
        assert_eq!(tape.value(p).data(), &[1.25; 3]);

        let x = tape.constant(t(&[1, 2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let p = tape.avg_pool2d(x, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[3.5, 5.5]);
        assert!(tape.avg_pool2d(x, 3).is_err());
    }

    #[test]
    fn backward_of_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![3.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x), Some(&[6.0][..]));
        assert!(tape.is_empty());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // f(x) = sum(x*x + 3x) used twice versus an explicit single-use rewrite.
        let x0 = Tensor::from_vec(vec![0.5, -1.25, 2.0]).with_requires_grad(true);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let tx = tape.scale(x, 3.0).unwrap();
        let s = tape.add(sq, tx).unwrap();
        let l = tape.sum(s).unwrap();
        let reused = tape.backward(l).unwrap().get(x).unwrap().to_vec();

        let mut tape = Tape::new();
        let a = tape.leaf(x0.clone());
        let b = tape.leaf(x0.clone());
        let c = tape.leaf(x0.clone());
        let sq = tape.mul(a, b).unwrap();
        let tx = tape.scale(c, 3.0).unwrap();
        let s = tape.add(sq, tx).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        let split: Vec<f64> = (0..3)
            .map(|i| g.get(a).unwrap()[i] + g.get(b).unwrap()[i] + g.get(c).unwrap()[i])
            .collect();
        assert_eq!(reused, split);
    }

    #[test]
    fn unreached_leaves_get_zero_and_stale_handles_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]).with_requires_grad(true));
        let unused = tape.leaf(Tensor::scalar(4.0).with_requires_grad(true));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(unused), Some(&[0.0][..]));
        let other = Tape::new();
        assert!(std::panic::catch_unwind(|| other.value(x).numel()).is_err());
    }

    #[test]
    fn softmax_nll_gradient_is_probability_minus_onehot() {
        let logits = Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.1]).with_requires_grad(true);
        let mut tape = Tape::new();
        let x = tape.leaf(logits);
        let lp = tape.log_softmax(x, 0).unwrap();
        let pick = tape.gather(lp, &[2]).unwrap();
        let nll = tape.scale(pick, -1.0).unwrap();
        let p = softmax_slices(tape.value(x).data(), &[4], 0, false);
        let g = tape.backward(nll).unwrap();
        for (i, (gi, pi)) in g.get(x).unwrap().iter().zip(&p).enumerate() {
            let expected = pi - if i == 2 { 1.0 } else { 0.0 };
            assert!((gi - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::DIFFERENTIABLE {
            assert_eq!(OpKind::from_name(k.name()), Some(k));
        }
        assert_eq!(OpKind::from_name("nope"), None);
    }
}

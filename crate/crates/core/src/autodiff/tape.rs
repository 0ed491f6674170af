use std::fmt;

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every operation the tape knows how to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    MatMul,
    Conv2d,
    ConvTranspose2d,
    Relu,
    Exp,
    Log,
    Square,
    Sigmoid,
    Softplus,
    Sum,
    SumAxis,
    Mean,
    Broadcast,
    Concat,
    Slice,
    LogSumExp,
    Reshape,
    PairwiseSub,
    InstanceNorm,
}

impl OpKind {
    pub const ALL: [OpKind; 24] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Offset,
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::Relu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Square,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::Sum,
        OpKind::SumAxis,
        OpKind::Mean,
        OpKind::Broadcast,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::LogSumExp,
        OpKind::Reshape,
        OpKind::PairwiseSub,
        OpKind::InstanceNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Offset => "offset",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Sum => "sum",
            OpKind::SumAxis => "sum_axis",
            OpKind::Mean => "mean",
            OpKind::Broadcast => "broadcast",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::LogSumExp => "logsumexp",
            OpKind::Reshape => "reshape",
            OpKind::PairwiseSub => "pairwise_sub",
            OpKind::InstanceNorm => "instance_norm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Spatial hyperparameters shared by both convolution kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    Broadcast(Var),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
    },
    LogSumExp(Var, usize),
    Reshape(Var),
    PairwiseSub(Var, Var),
    InstanceNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(..) => OpKind::Offset,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Relu(..) => OpKind::Relu,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Square(..) => OpKind::Square,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Sum(..) => OpKind::Sum,
            Op::SumAxis(..) => OpKind::SumAxis,
            Op::Mean(..) => OpKind::Mean,
            Op::Broadcast(..) => OpKind::Broadcast,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::LogSumExp(..) => OpKind::LogSumExp,
            Op::Reshape(..) => OpKind::Reshape,
            Op::PairwiseSub(..) => OpKind::PairwiseSub,
            Op::InstanceNorm { .. } => OpKind::InstanceNorm,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::PairwiseSub(a, b) => vec![*a, *b],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::ConvTranspose2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::Mean(a)
            | Op::Broadcast(a)
            | Op::LogSumExp(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::Slice { input, .. } | Op::InstanceNorm { input, .. } => vec![*input],
            Op::Concat(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run gradient tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep is a valid topological traversal. A tape
/// is meant to be rebuilt for every forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of `kind` (upstream gradient scaled by 1.5).
    /// Only used to prove that the gradient checker catches broken rules.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Active/inactive state of every rectifier input on the tape, in order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    ///
    /// `None` for nodes that do not require a gradient; zeros for nodes that
    /// require one but do not reach the root.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Some(Tensor::new(shape, g.clone()).expect("grad length")),
            None => Some(Tensor::zeros(shape)),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---------------------------------------------------------------------
    // elementwise binary ops with trailing broadcast
    // ---------------------------------------------------------------------

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(sa.to_vec());
        }
        if is_trailing(sb, sa) || self.value(b).is_scalar() && !sb.iter().any(|&d| d > 1) {
            return Ok(sa.to_vec());
        }
        if is_trailing(sa, sb) || self.value(a).is_scalar() && !sa.iter().any(|&d| d > 1) {
            return Ok(sb.to_vec());
        }
        Err(Error::shape(op, sa, sb))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(name, a, b)?;
        let da = self.data(a);
        let db = self.data(b);
        let n: usize = shape.iter().product();
        let (la, lb) = (da.len(), db.len());
        let out: Vec<f64> = if la == n && lb == n {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(da[i % la], db[i % lb])).collect()
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x * c);
        self.push_op(value, Op::Scale(a, c))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x + c);
        self.push_op(value, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    // ---------------------------------------------------------------------
    // unary
    // ---------------------------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        self.push_op(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::exp);
        self.push_op(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.data(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        let value = self.map(a, f64::ln);
        Ok(self.push_op(value, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x * x);
        self.push_op(value, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.push_op(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.map(a, softplus);
        self.push_op(value, Op::Softplus(a))
    }

    // ---------------------------------------------------------------------
    // reductions and shape ops
    // ---------------------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis("sum_axis", &shape, axis)?;
        let d = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &d[(o * len + k) * inner..(o * len + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(y, x)| *y += x);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(value, Op::SumAxis(a, axis)))
    }

    /// Overflow-safe `log Σ exp` over `axis`, removing it from the shape.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis("logsumexp", &shape, axis)?;
        if len == 0 {
            return Err(Error::domain("logsumexp", "empty reduction axis"));
        }
        let d = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| d[(o * len + k) * inner + i];
                let max = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(Error::domain(
                        "logsumexp",
                        format!("non-finite maximum {max}"),
                    ));
                }
                let s: f64 = (0..len).map(|k| (at(k) - max).exp()).sum();
                out[o * inner + i] = max + s.ln();
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(value, Op::LogSumExp(a, axis)))
    }

    /// Tiles `a` to `shape`; `a` must be a scalar or a trailing suffix of `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if !(is_trailing(sa, shape) || self.value(a).is_scalar()) {
            return Err(Error::shape("broadcast", sa, shape));
        }
        let d = self.data(a);
        let n: usize = shape.iter().product();
        let la = d.len();
        let value = Tensor::new(shape.to_vec(), (0..n).map(|i| d[i % la]).collect())?;
        Ok(self.push_op(value, Op::Broadcast(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push_op(value, Op::Reshape(a)))
    }

    /// Concatenates along the last axis. All leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".to_string()))?;
        let lead = self.shape(first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::shape("slice", &shape, &[start, end]))?;
        if start > end || end > width {
            return Err(Error::shape("slice", &shape, &[start, end]));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let d = self.data(a);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&d[r * width + start..r * width + end]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = end - start;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(value, Op::Slice { input: a, start }))
    }

    /// `out[n, m, d] = a[n, d] - b[m, d]`.
    pub fn pairwise_sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("pairwise_sub", sa, sb));
        }
        let (n, m, dim) = (sa[0], sb[0], sa[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * m * dim);
        for i in 0..n {
            let ra = &da[i * dim..(i + 1) * dim];
            for j in 0..m {
                let rb = &db[j * dim..(j + 1) * dim];
                out.extend(ra.iter().zip(rb).map(|(x, y)| x - y));
            }
        }
        let value = Tensor::new(vec![n, m, dim], out)?;
        Ok(self.push_op(value, Op::PairwiseSub(a, b)))
    }

    // ---------------------------------------------------------------------
    // linear algebra and convolution
    // ---------------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(a),
            false,
            self.data(b),
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b)))
    }

    /// Direct 2-D convolution. `input` is `[N, C, H, W]`, `weight` is
    /// `[O, C, KH, KW]`, optional `bias` is `[O]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || geom.stride == 0 {
            return Err(Error::shape("conv2d", &si, &sw));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * geom.padding < kh || w + 2 * geom.padding < kw {
            return Err(Error::shape("conv2d", &si, &sw));
        }
        check_bias(self, "conv2d", bias, o)?;
        let ho = (h + 2 * geom.padding - kh) / geom.stride + 1;
        let wo = (w + 2 * geom.padding - kw) / geom.stride + 1;
        let (x, wt) = (self.data(input), self.data(weight));
        let mut out = vec![0.0; n * o * ho * wo];
        let g = Conv {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho,
            wo,
            geom,
        };
        g.for_each(|xi, wi, oi| out[oi] += x[xi] * wt[wi]);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.data(b), n, o, ho * wo);
        }
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Transposed 2-D convolution (the adjoint of [`conv2d`](Self::conv2d)).
    /// `input` is `[N, C, H, W]`, `weight` is `[C, O, KH, KW]`; output extent
    /// is `(H - 1) * stride - 2 * padding + KH`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[0] || geom.stride == 0 {
            return Err(Error::shape("conv_transpose2d", &si, &sw));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, kh, kw) = (sw[1], sw[2], sw[3]);
        let full_h = (h - 1) * geom.stride + kh;
        let full_w = (w - 1) * geom.stride + kw;
        if full_h <= 2 * geom.padding || full_w <= 2 * geom.padding {
            return Err(Error::shape("conv_transpose2d", &si, &sw));
        }
        check_bias(self, "conv_transpose2d", bias, o)?;
        let ho = full_h - 2 * geom.padding;
        let wo = full_w - 2 * geom.padding;
        let (x, wt) = (self.data(input), self.data(weight));
        let mut out = vec![0.0; n * o * ho * wo];
        // Same index relation as conv2d with the roles of input and output swapped.
        let g = Conv {
            n,
            c: o,
            h: ho,
            w: wo,
            o: c,
            kh,
            kw,
            ho: h,
            wo: w,
            geom,
        };
        g.for_each(|yi, wi, xi| out[yi] += x[xi] * wt[wi]);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.data(b), n, o, ho * wo);
        }
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.push_op(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Per-(sample, channel) plane normalization without affine parameters.
    pub fn instance_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || shape[2] * shape[3] == 0 {
            return Err(Error::shape("instance_norm", &shape, &[0, 0, 1, 1]));
        }
        let plane = shape[2] * shape[3];
        let d = self.data(a);
        let planes = d.len() / plane;
        let mut out = vec![0.0; d.len()];
        let mut inv_std = Vec::with_capacity(planes);
        for p in 0..planes {
            let src = &d[p * plane..(p + 1) * plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / plane as f64;
            let denom = var + eps;
            let inv = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            inv_std.push(inv);
            for (y, x) in out[p * plane..(p + 1) * plane].iter_mut().zip(src) {
                *y = (x - mean) * inv;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::InstanceNorm { input: a, inv_std }))
    }

    // ---------------------------------------------------------------------
    // backward
    // ---------------------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients are readable via [`grad`](Self::grad).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_reduced(*a, g, grads, |_| 1.0);
                self.acc_reduced(*b, g, grads, |_| 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_reduced(*a, g, grads, |_| 1.0);
                self.acc_reduced(*b, g, grads, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let (la, lb) = (da.len(), db.len());
                self.acc_reduced(*a, g, grads, |k| db[k % lb]);
                self.acc_reduced(*b, g, grads, |k| da[k % la]);
            }
            Op::Scale(a, c) => self.acc_map(*a, grads, |k| g[k] * c),
            Op::Offset(a) | Op::Reshape(a) => self.acc_map(*a, grads, |k| g[k]),
            Op::Relu(a) => {
                let d = self.data(*a);
                self.acc_map(*a, grads, |k| if d[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Exp(a) => self.acc_map(*a, grads, |k| g[k] * out[k]),
            Op::Log(a) => {
                let d = self.data(*a);
                self.acc_map(*a, grads, |k| g[k] / d[k]);
            }
            Op::Square(a) => {
                let d = self.data(*a);
                self.acc_map(*a, grads, |k| 2.0 * d[k] * g[k]);
            }
            Op::Sigmoid(a) => self.acc_map(*a, grads, |k| g[k] * out[k] * (1.0 - out[k])),
            Op::Softplus(a) => {
                let d = self.data(*a);
                self.acc_map(*a, grads, |k| g[k] * sigmoid(d[k]));
            }
            Op::Sum(a) => self.acc_map(*a, grads, |_| g[0]),
            Op::Mean(a) => {
                let n = self.data(*a).len() as f64;
                self.acc_map(*a, grads, |_| g[0] / n);
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = split_axis("sum_axis", self.shape(*a), *axis).unwrap();
                self.acc_map(*a, grads, |k| {
                    let o = k / (len * inner);
                    g[o * inner + k % inner]
                });
                let _ = outer;
            }
            Op::LogSumExp(a, axis) => {
                let (_, len, inner) = split_axis("logsumexp", self.shape(*a), *axis).unwrap();
                let d = self.data(*a);
                self.acc_map(*a, grads, |k| {
                    let j = (k / (len * inner)) * inner + k % inner;
                    g[j] * (d[k] - out[j]).exp()
                });
            }
            Op::Broadcast(a) => self.acc_reduced(*a, g, grads, |_| 1.0),
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = out.len() / total.max(1);
                let mut col = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.requires_grad(p) {
                        self.acc_map(p, grads, |k| g[(k / w) * total + col + k % w]);
                    }
                    col += w;
                }
                let _ = rows;
            }
            Op::Slice { input, start } => {
                let width = *self.shape(*input).last().unwrap();
                let w = *node.value.shape().last().unwrap();
                let start = *start;
                self.acc_map(*input, grads, |k| {
                    let (r, c) = (k / width, k % width);
                    if c >= start && c < start + w {
                        g[r * w + c - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::PairwiseSub(a, b) => {
                let (n, m, dim) = {
                    let s = node.value.shape();
                    (s[0], s[1], s[2])
                };
                if self.requires_grad(*a) {
                    let ga = grad_slot(grads, *a, n * dim);
                    for i in 0..n {
                        for j in 0..m {
                            let src = &g[(i * m + j) * dim..(i * m + j + 1) * dim];
                            ga[i * dim..(i + 1) * dim]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(y, x)| *y += x);
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = grad_slot(grads, *b, m * dim);
                    for i in 0..n {
                        for j in 0..m {
                            let src = &g[(i * m + j) * dim..(i * m + j + 1) * dim];
                            gb[j * dim..(j + 1) * dim]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(y, x)| *y -= x);
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let bd = self.data(*b);
                    let ga = grad_slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, bd, true, ga, 1.0);
                }
                if self.requires_grad(*b) {
                    let ad = self.data(*a);
                    let gb = grad_slot(grads, *b, k * n);
                    gemm(k, m, n, ad, true, g, false, gb, 1.0);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (si, sw) = (self.shape(*input), self.shape(*weight));
                let so = node.value.shape();
                let conv = Conv {
                    n: si[0],
                    c: si[1],
                    h: si[2],
                    w: si[3],
                    o: sw[0],
                    kh: sw[2],
                    kw: sw[3],
                    ho: so[2],
                    wo: so[3],
                    geom: *geom,
                };
                if self.requires_grad(*input) {
                    let wt = self.data(*weight);
                    let gx = grad_slot(grads, *input, si.iter().product());
                    conv.for_each(|xi, wi, oi| gx[xi] += g[oi] * wt[wi]);
                }
                if self.requires_grad(*weight) {
                    let x = self.data(*input);
                    let gw = grad_slot(grads, *weight, sw.iter().product());
                    conv.for_each(|xi, wi, oi| gw[wi] += g[oi] * x[xi]);
                }
                if let Some(b) = bias {
                    self.acc_channel_bias(*b, g, so, grads);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (si, sw) = (self.shape(*input), self.shape(*weight));
                let so = node.value.shape();
                let conv = Conv {
                    n: si[0],
                    c: sw[1],
                    h: so[2],
                    w: so[3],
                    o: si[1],
                    kh: sw[2],
                    kw: sw[3],
                    ho: si[2],
                    wo: si[3],
                    geom: *geom,
                };
                if self.requires_grad(*input) {
                    let wt = self.data(*weight);
                    let gx = grad_slot(grads, *input, si.iter().product());
                    conv.for_each(|yi, wi, xi| gx[xi] += g[yi] * wt[wi]);
                }
                if self.requires_grad(*weight) {
                    let x = self.data(*input);
                    let gw = grad_slot(grads, *weight, sw.iter().product());
                    conv.for_each(|yi, wi, xi| gw[wi] += g[yi] * x[xi]);
                }
                if let Some(b) = bias {
                    self.acc_channel_bias(*b, g, so, grads);
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                let mut gx = vec![0.0; out.len()];
                for (p, &inv) in inv_std.iter().enumerate() {
                    let r = p * plane..(p + 1) * plane;
                    let (gp, yp) = (&g[r.clone()], &out[r.clone()]);
                    let mean_g = gp.iter().sum::<f64>() / plane as f64;
                    let mean_gy = gp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
                    for ((dst, &gi), &yi) in gx[r].iter_mut().zip(gp).zip(yp) {
                        *dst = inv * (gi - mean_g - yi * mean_gy);
                    }
                }
                self.acc_map(*input, grads, |k| gx[k]);
            }
        }
    }

    /// `grad[a] += d(k)` for every element `k` of `a`.
    fn acc_map(&self, a: Var, grads: &mut [Option<Vec<f64>>], d: impl Fn(usize) -> f64) {
        if !self.requires_grad(a) {
            return;
        }
        let n = self.value(a).numel();
        let slot = grad_slot(grads, a, n);
        slot.iter_mut().enumerate().for_each(|(k, v)| *v += d(k));
    }

    /// Accumulates `g[k] * factor(k)` into `a`, summing over broadcast copies.
    fn acc_reduced(
        &self,
        a: Var,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        factor: impl Fn(usize) -> f64,
    ) {
        if !self.requires_grad(a) {
            return;
        }
        let la = self.value(a).numel();
        let slot = grad_slot(grads, a, la);
        if la == g.len() {
            slot.iter_mut()
                .zip(g)
                .enumerate()
                .for_each(|(k, (v, gk))| *v += gk * factor(k));
        } else {
            for (k, gk) in g.iter().enumerate() {
                slot[k % la] += gk * factor(k);
            }
        }
    }

    fn acc_channel_bias(
        &self,
        b: Var,
        g: &[f64],
        out_shape: &[usize],
        grads: &mut [Option<Vec<f64>>],
    ) {
        if !self.requires_grad(b) {
            return;
        }
        let (n, o) = (out_shape[0], out_shape[1]);
        let plane = out_shape[2] * out_shape[3];
        let gb = grad_slot(grads, b, o);
        for s in 0..n {
            for ch in 0..o {
                let base = (s * o + ch) * plane;
                gb[ch] += g[base..base + plane].iter().sum::<f64>();
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn is_trailing(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn check_bias(tape: &Tape, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = tape.shape(b);
        if s != [channels] {
            return Err(Error::shape(op, s, &[channels]));
        }
    }
    Ok(())
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, o: usize, plane: usize) {
    for s in 0..n {
        for (ch, b) in bias.iter().enumerate().take(o) {
            let base = (s * o + ch) * plane;
            out[base..base + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Index relation of a strided, zero-padded convolution from an
/// `[n, c, h, w]` image to an `[n, o, ho, wo]` response through an
/// `[o, c, kh, kw]` kernel.
struct Conv {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Conv {
    /// Calls `f(image_index, kernel_index, response_index)` for every
    /// multiply in the convolution.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ConvGeom { stride, padding } = self.geom;
        for s in 0..self.n {
            for oc in 0..self.o {
                for oy in 0..self.ho {
                    for ox in 0..self.wo {
                        let oi = ((s * self.o + oc) * self.ho + oy) * self.wo + ox;
                        for ic in 0..self.c {
                            for ky in 0..self.kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                for kx in 0..self.kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= self.w as isize {
                                        continue;
                                    }
                                    let xi = ((s * self.c + ic) * self.h + iy as usize) * self.w
                                        + ix as usize;
                                    let wi = ((oc * self.c + ic) * self.kh + ky) * self.kw + kx;
                                    f(xi, wi, oi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

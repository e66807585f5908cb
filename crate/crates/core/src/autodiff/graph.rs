//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly on construction; [`Graph::backward`] walks the tape once in
//! reverse. Running backward a second time on the same graph is an error.

use std::cell::{Cell, Ref, RefCell};

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    MatMul(Var, Var),
    Sum(Var),
    SumAxis(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Bilinear(Box<BilinearSaved>),
    Conv3x3(Box<ConvSaved>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Softplus(..) => "softplus",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::Bilinear(..) => "bilinear_gather",
            Op::Conv3x3(..) => "conv2d",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softplus(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sum(a)
            | Op::SumAxis(a)
            | Op::Slice(a, _, _)
            | Op::Reshape(a)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
            Op::Bilinear(s) => vec![s.features, s.coords],
            Op::Conv3x3(s) => vec![s.input, s.weight],
        }
    }
}

#[derive(Debug)]
struct BilinearSaved {
    features: Var,
    coords: Var,
    frames: Vec<usize>,
    /// Per point: base node (row, col), fractional offsets, and whether each
    /// axis was clamped (zero coordinate gradient along a clamped axis).
    taps: Vec<Tap>,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    valid: bool,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    fr: f64,
    fc: f64,
    clamp_r: bool,
    clamp_c: bool,
}

#[derive(Debug)]
struct ConvSaved {
    input: Var,
    weight: Var,
    stride: usize,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    cols: Tensor,
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(1024)), consumed: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|p| nodes[p.0].requires_grad)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, requires_grad });
        Var(nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value, requires_grad: true });
        Var(nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value, requires_grad: false });
        Var(nodes.len() - 1)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(op, value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(&self.value(b));
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(&self.value(b));
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).mul(&self.value(b));
        self.push(Op::Mul(a, b), value)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_with(&self.value(b), |x, y| x / y);
        self.push(Op::Div(a, b), value)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = Tensor::matmul_t(&self.value(a), false, &self.value(b), false);
        self.push(Op::MatMul(a, b), value)
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Var {
        let value = self.value(a).sum_axis_keep(axis);
        self.push(Op::SumAxis(a), value)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            Tensor::concat(&vals, axis)
        };
        self.push(Op::Concat(parts.to_vec(), axis), value)
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_axis(1, start, end);
        self.push(Op::Slice(a, start, end), value)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshape(shape);
        self.push(Op::Reshape(a), value)
    }

    /// Rows of the leading axis; the backward pass scatter-adds.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).gather_rows(idx);
        self.push(Op::GatherRows(a, idx.to_vec()), value)
    }

    /// Bilinear lookup into a stack of feature maps.
    ///
    /// `features` is `[K, H, W, C]`; `coords` is `[P, 2]` holding continuous
    /// `(x, y)` pixel positions in this map's resolution with pixel centers at
    /// half-integers; `frames[p]` selects the map for point `p`. Positions up
    /// to half a pixel outside the map are clamped to the border; farther
    /// points return zeros and are reported `false` in the validity vector.
    pub fn bilinear(&self, features: Var, coords: Var, frames: &[usize]) -> (Var, Vec<bool>) {
        let (value, taps) = {
            let f = self.value(features);
            let c = self.value(coords);
            let fs = f.shape();
            assert_eq!(fs.len(), 4, "bilinear features must be [K, H, W, C]");
            assert_eq!(c.shape(), &[frames.len(), 2], "bilinear coords must be [P, 2]");
            let (k, h, w, ch) = (fs[0], fs[1], fs[2], fs[3]);
            let mut out = vec![0.0; frames.len() * ch];
            let mut taps = Vec::with_capacity(frames.len());
            for (p, &frame) in frames.iter().enumerate() {
                assert!(frame < k, "frame index {frame} out of range {k}");
                let (x, y) = (c.data()[2 * p], c.data()[2 * p + 1]);
                assert!(!x.is_nan() && !y.is_nan(), "NaN pixel coordinate at point {p}");
                let tap = make_tap(x, y, w, h);
                if tap.valid {
                    let base = frame * h * w;
                    let row = &mut out[p * ch..(p + 1) * ch];
                    for (r, c_, wgt) in tap.corners() {
                        let src = &f.data()[(base + r * w + c_) * ch..(base + r * w + c_ + 1) * ch];
                        for (o, s) in row.iter_mut().zip(src) {
                            *o += wgt * s;
                        }
                    }
                }
                taps.push(tap);
            }
            (Tensor::matrix(frames.len(), ch, out), taps)
        };
        let valid = taps.iter().map(|t| t.valid).collect();
        let saved = BilinearSaved { features, coords, frames: frames.to_vec(), taps };
        (self.push(Op::Bilinear(Box::new(saved)), value), valid)
    }

    /// 3x3 convolution with zero padding 1 over channels-last `[B, H, W, Cin]`.
    ///
    /// `weight` is `[9 * Cin, Cout]` with row index `(ky * 3 + kx) * Cin + ci`.
    /// Output extent is `H / stride` by `W / stride` (integer division).
    pub fn conv3x3(&self, input: Var, weight: Var, stride: usize) -> Var {
        assert!(stride >= 1);
        let (value, saved) = {
            let x = self.value(input);
            let w = self.value(weight);
            let s = x.shape();
            assert_eq!(s.len(), 4, "conv input must be [B, H, W, C]");
            let in_shape = [s[0], s[1], s[2], s[3]];
            assert_eq!(w.shape()[0], 9 * s[3], "conv weight rows must be 9 * Cin");
            let (ho, wo) = (s[1] / stride, s[2] / stride);
            let cols = im2col(&x, stride, ho, wo);
            let out = Tensor::matmul_t(&cols, false, &w, false);
            let cout = w.shape()[1];
            let value = out.reshape(&[s[0], ho, wo, cout]);
            (value, ConvSaved { input, weight, stride, in_shape, out_hw: (ho, wo), cols })
        };
        self.push(Op::Conv3x3(Box::new(saved)), value)
    }

    /// Reverse pass from a scalar root. The graph may only be differentiated once.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(Error::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape();
        if numel(root_shape) != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        if !nodes[root.0].value.is_finite() {
            check_forward_finite(&nodes[..=root.0])?;
        }

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_shape, 1.0));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Bilinear(s) = &node.op {
                // Scatter straight into the feature-map gradient instead of a fresh full-size buffer.
                if nodes[s.features.0].requires_grad {
                    let shape = nodes[s.features.0].value.shape();
                    let acc = grads[s.features.0].get_or_insert_with(|| Tensor::zeros(shape));
                    bilinear_scatter(&nodes, s, &g, acc);
                }
                if nodes[s.coords.0].requires_grad {
                    let dc = bilinear_coord_grad(&nodes, s, &g);
                    if !dc.is_finite() {
                        check_forward_finite(&nodes[..=root.0])?;
                        return Err(Error::NonFinite { op: node.op.name(), phase: "backward" });
                    }
                    match &mut grads[s.coords.0] {
                        Some(acc) => acc.add_assign(&dc),
                        slot @ None => *slot = Some(dc),
                    }
                }
                continue;
            }
            // Intermediate gradients are dropped as soon as they are propagated.
            let contributions = backward_op(&nodes, node, &g);
            drop(g);
            for (parent, contrib) in contributions {
                if !nodes[parent.0].requires_grad {
                    continue;
                }
                if !contrib.is_finite() {
                    check_forward_finite(&nodes[..=root.0])?;
                    return Err(Error::NonFinite { op: node.op.name(), phase: "backward" });
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn check_forward_finite(nodes: &[Node]) -> Result<()> {
    let mut finite = vec![true; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        if !node.value.is_finite() {
            finite[i] = false;
            if node.op.parents().iter().all(|p| finite[p.0]) {
                return Err(Error::NonFinite { op: node.op.name(), phase: "forward" });
            }
        }
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tap {
    fn corners(&self) -> [(usize, usize, f64); 4] {
        let (fr, fc) = (self.fr, self.fc);
        [
            (self.r0, self.c0, (1.0 - fr) * (1.0 - fc)),
            (self.r0, self.c1, (1.0 - fr) * fc),
            (self.r1, self.c0, fr * (1.0 - fc)),
            (self.r1, self.c1, fr * fc),
        ]
    }
}

fn axis_tap(pos: f64, extent: usize) -> (usize, usize, f64, bool) {
    // Node k sits at continuous position k + 0.5.
    let u = pos - 0.5;
    let max = (extent - 1) as f64;
    let (u, clamped) = if u < 0.0 {
        (0.0, true)
    } else if u > max {
        (max, true)
    } else {
        (u, false)
    };
    if extent == 1 {
        return (0, 0, 0.0, clamped);
    }
    let i0 = (u.floor() as usize).min(extent - 2);
    (i0, i0 + 1, u - i0 as f64, clamped)
}

fn make_tap(x: f64, y: f64, w: usize, h: usize) -> Tap {
    let inside = x >= -0.5 && x <= w as f64 + 0.5 && y >= -0.5 && y <= h as f64 + 0.5;
    let (c0, c1, fc, clamp_c) = axis_tap(x.clamp(-1.0, w as f64 + 1.0), w);
    let (r0, r1, fr, clamp_r) = axis_tap(y.clamp(-1.0, h as f64 + 1.0), h);
    Tap { valid: inside, r0, r1, c0, c1, fr, fc, clamp_r, clamp_c }
}

fn im2col(x: &Tensor, stride: usize, ho: usize, wo: usize) -> Tensor {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let rows = b * ho * wo;
    let mut cols = vec![0.0; rows * 9 * c];
    let xd = x.data();
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * 9 * c;
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
    }
    Tensor::matrix(rows, 9 * c, cols)
}

fn col2im(dcols: &Tensor, in_shape: [usize; 4], stride: usize, ho: usize, wo: usize) -> Tensor {
    let [b, h, w, c] = in_shape;
    let mut dx = vec![0.0; b * h * w * c];
    let dd = dcols.data();
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * 9 * c;
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for j in 0..c {
                            dx[dst + j] += dd[src + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx)
}

fn backward_op(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
    let val = |v: &Var| &nodes[v.0].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => {
            vec![(*a, g.sum_to_shape(val(a).shape())), (*b, g.sum_to_shape(val(b).shape()))]
        }
        Op::Sub(a, b) => vec![
            (*a, g.sum_to_shape(val(a).shape())),
            (*b, g.sum_to_shape(val(b).shape()).scale(-1.0)),
        ],
        Op::Mul(a, b) => {
            let mut out = Vec::with_capacity(2);
            if nodes[a.0].requires_grad {
                out.push((*a, g.mul(val(b)).into_sum_to_shape(val(a).shape())));
            }
            if nodes[b.0].requires_grad {
                out.push((*b, g.mul(val(a)).into_sum_to_shape(val(b).shape())));
            }
            out
        }
        Op::Div(a, b) => {
            let mut out = Vec::with_capacity(2);
            if nodes[a.0].requires_grad {
                out.push((*a, g.zip_with(val(b), |gi, bi| gi / bi).into_sum_to_shape(val(a).shape())));
            }
            if nodes[b.0].requires_grad {
                // d(a/b)/db = -y / b
                let gy = g.mul(y);
                let gb = gy.zip_with(val(b), |v, bi| -v / bi);
                out.push((*b, gb.into_sum_to_shape(val(b).shape())));
            }
            out
        }
        Op::Scale(a, c) => vec![(*a, g.scale(*c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Relu(a) => vec![(*a, g.zip_with(val(a), |gi, x| if x > 0.0 { gi } else { 0.0 }))],
        Op::Sigmoid(a) => vec![(*a, g.zip_with(y, |gi, s| gi * s * (1.0 - s)))],
        Op::Exp(a) => vec![(*a, g.mul(y))],
        Op::Ln(a) => vec![(*a, g.zip_with(val(a), |gi, x| gi / x))],
        Op::Softplus(a) => vec![(*a, g.zip_with(val(a), |gi, x| gi * sigmoid(x)))],
        Op::Sin(a) => vec![(*a, g.zip_with(val(a), |gi, x| gi * x.cos()))],
        Op::Cos(a) => vec![(*a, g.zip_with(val(a), |gi, x| -gi * x.sin()))],
        Op::MatMul(a, b) => {
            let mut out = Vec::with_capacity(2);
            if nodes[a.0].requires_grad {
                out.push((*a, Tensor::matmul_t(g, false, val(b), true)));
            }
            if nodes[b.0].requires_grad {
                out.push((*b, Tensor::matmul_t(val(a), true, g, false)));
            }
            out
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(a).shape(), g.item()))],
        Op::SumAxis(a) => {
            vec![(*a, g.broadcast_to(val(a).shape()))]
        }
        Op::Concat(parts, axis) => {
            let mut start = 0;
            parts
                .iter()
                .map(|p| {
                    let n = val(p).shape()[*axis];
                    let piece = g.slice_axis(*axis, start, start + n);
                    start += n;
                    (*p, piece)
                })
                .collect()
        }
        Op::Slice(a, start, end) => {
            let s = val(a).shape();
            let (rows, cols) = (s[0], s[1]);
            let w = end - start;
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                out[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            vec![(*a, Tensor::matrix(rows, cols, out))]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshape(val(a).shape()))],
        Op::GatherRows(a, idx) => {
            let shape = val(a).shape();
            let inner: usize = shape[1..].iter().product();
            let mut out = Tensor::zeros(shape);
            let od = out.data_mut();
            for (k, &i) in idx.iter().enumerate() {
                let src = &g.data()[k * inner..(k + 1) * inner];
                for (o, s) in od[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                    *o += s;
                }
            }
            vec![(*a, out)]
        }
        Op::Bilinear(s) => bilinear_backward(nodes, s, g),
        Op::Conv3x3(s) => {
            let (ho, wo) = s.out_hw;
            let w = val(&s.weight);
            let cout = w.shape()[1];
            let g2 = g.clone().reshape(&[s.in_shape[0] * ho * wo, cout]);
            let mut out = Vec::with_capacity(2);
            if nodes[s.weight.0].requires_grad {
                out.push((s.weight, Tensor::matmul_t(&s.cols, true, &g2, false)));
            }
            if nodes[s.input.0].requires_grad {
                let dcols = Tensor::matmul_t(&g2, false, w, true);
                out.push((s.input, col2im(&dcols, s.in_shape, s.stride, ho, wo)));
            }
            out
        }
    }
}

fn bilinear_backward(nodes: &[Node], s: &BilinearSaved, g: &Tensor) -> Vec<(Var, Tensor)> {
    let mut out = Vec::with_capacity(2);
    if nodes[s.features.0].requires_grad {
        let mut df = Tensor::zeros(nodes[s.features.0].value.shape());
        bilinear_scatter(nodes, s, g, &mut df);
        out.push((s.features, df));
    }
    if nodes[s.coords.0].requires_grad {
        out.push((s.coords, bilinear_coord_grad(nodes, s, g)));
    }
    out
}

fn bilinear_scatter(nodes: &[Node], s: &BilinearSaved, g: &Tensor, df: &mut Tensor) {
    let fs = nodes[s.features.0].value.shape();
    let (h, w, ch) = (fs[1], fs[2], fs[3]);
    let dd = df.data_mut();
    for (p, (&frame, tap)) in s.frames.iter().zip(&s.taps).enumerate() {
        if !tap.valid {
            continue;
        }
        let gp = &g.data()[p * ch..(p + 1) * ch];
        let base = frame * h * w;
        for (r, c, wgt) in tap.corners() {
            let dst = &mut dd[(base + r * w + c) * ch..(base + r * w + c + 1) * ch];
            for (d, gi) in dst.iter_mut().zip(gp) {
                *d += wgt * gi;
            }
        }
    }
}

fn bilinear_coord_grad(nodes: &[Node], s: &BilinearSaved, g: &Tensor) -> Tensor {
    let f = &nodes[s.features.0].value;
    let fs = f.shape();
    let (h, w, ch) = (fs[1], fs[2], fs[3]);
    let mut dc = vec![0.0; s.frames.len() * 2];
    for (p, (&frame, tap)) in s.frames.iter().zip(&s.taps).enumerate() {
        if !tap.valid {
            continue;
        }
        let gp = &g.data()[p * ch..(p + 1) * ch];
        let base = frame * h * w;
        let node = |r: usize, c: usize| &f.data()[(base + r * w + c) * ch..(base + r * w + c + 1) * ch];
        let (f00, f01, f10, f11) =
            (node(tap.r0, tap.c0), node(tap.r0, tap.c1), node(tap.r1, tap.c0), node(tap.r1, tap.c1));
        let (fr, fc) = (tap.fr, tap.fc);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for j in 0..ch {
            let dx = (1.0 - fr) * (f01[j] - f00[j]) + fr * (f11[j] - f10[j]);
            let dy = (1.0 - fc) * (f10[j] - f00[j]) + fc * (f11[j] - f01[j]);
            gx += gp[j] * dx;
            gy += gp[j] * dy;
        }
        if !tap.clamp_c && w > 1 {
            dc[2 * p] = gx;
        }
        if !tap.clamp_r && h > 1 {
            dc[2 * p + 1] = gy;
        }
    }
    Tensor::matrix(s.frames.len(), 2, dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_gives_ones() {
        let g = Graph::new();
        let x = g.param(Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.1));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn second_backward_is_rejected() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        let y = g.exp(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn nan_is_reported_with_op_name() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(-1.0));
        let y = g.ln(x);
        let s = g.sum(y);
        match g.backward(s) {
            Err(Error::NonFinite { op, phase }) => {
                assert_eq!(op, "ln");
                assert_eq!(phase, "forward");
            }
            other => panic!("expected NonFinite, got {:?}", other.err()),
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(5.0));
        let y = g.mul(c, x);
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().item(), 2.0);
    }

    #[test]
    fn bilinear_exact_at_nodes_and_linear_between() {
        let g = Graph::new();
        // One 2x2 map with 2 channels.
        let f = g.constant(Tensor::new(vec![1, 2, 2, 2], vec![1., 10., 2., 20., 3., 30., 4., 40.]));
        let coords = g.constant(Tensor::matrix(3, 2, vec![0.5, 0.5, 1.5, 1.5, 1.0, 0.5]));
        let (v, valid) = g.bilinear(f, coords, &[0, 0, 0]);
        assert!(valid.iter().all(|&b| b));
        let out = g.value(v);
        assert_eq!(out.row_slice(0), &[1., 10.]);
        assert_eq!(out.row_slice(1), &[4., 40.]);
        assert_eq!(out.row_slice(2), &[1.5, 15.]);
    }

    #[test]
    fn bilinear_out_of_view() {
        let g = Graph::new();
        let f = g.constant(Tensor::ones(&[1, 4, 4, 1]));
        let coords = g.constant(Tensor::matrix(3, 2, vec![-0.4, 2.0, 4.45, 2.0, -0.6, 2.0]));
        let (v, valid) = g.bilinear(f, coords, &[0, 0, 0]);
        assert_eq!(valid, vec![true, true, false]);
        assert_eq!(g.value(v).data(), &[1.0, 1.0, 0.0]);
    }
}

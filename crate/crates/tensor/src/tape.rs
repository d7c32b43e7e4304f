//! Define-by-run tape. Every op appends a node holding its forward value and
//! whatever it needs for the backward rule; `backward` replays the nodes in
//! reverse creation order, which is a valid reverse topological order because
//! a node's inputs always exist before it does.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv3d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose3d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub needs_grad: bool,
    pub requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is single-threaded; build one per forward pass and drop it after
/// `backward`.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar root with respect to the `requires_grad` leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Trainable leaf: gradients flow to it.
    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Detached leaf: never appears in the gradient map.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op_inputs(&op).iter().any(|i| nodes[i.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape();
        if nodes[root.0].value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    out.grads.insert(
                        Var(id),
                        Tensor::from_parts(node.value.shape().to_vec(), g),
                    );
                }
                continue;
            }
            for (input, gin) in backward_rule(&nodes, node, &g) {
                if !nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&gin) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(gin),
                }
            }
        }
        Ok(out)
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
            vec![*a, *b]
        }
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Relu(a)
        | Op::Gelu(a)
        | Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Pow(a, _)
        | Op::Clamp(a, _, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumAxis(a, _)
        | Op::Transpose(a)
        | Op::Softmax(a, _)
        | Op::Reshape(a) => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Conv3d { x, w, .. } | Op::ConvTranspose3d { x, w, .. } => vec![*x, *w],
        Op::Concat(parts, _) => parts.clone(),
        Op::Narrow { x, .. } => vec![*x],
    }
}

/// Sum a broadcast gradient back down to `src_shape`.
fn unbroadcast(g: &[f64], src_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if src_shape == out_shape {
        return g.to_vec();
    }
    let n: usize = src_shape.iter().product();
    let mut acc = vec![0.0; n];
    for (gi, &si) in g.iter().zip(&kernels::broadcast_index(src_shape, out_shape)) {
        acc[si] += gi;
    }
    acc
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_K: f64 = 0.044_715;

fn backward_rule(nodes: &[Node], node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: &Var| -> &Tensor { &nodes[v.0].value };
    let out = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => {
            let (sa, sb) = (val(a).shape(), val(b).shape());
            vec![
                (*a, unbroadcast(g, sa, out.shape())),
                (*b, unbroadcast(g, sb, out.shape())),
            ]
        }
        Op::Sub(a, b) => {
            let (sa, sb) = (val(a).shape(), val(b).shape());
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            vec![
                (*a, unbroadcast(g, sa, out.shape())),
                (*b, unbroadcast(&neg, sb, out.shape())),
            ]
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let ia = kernels::broadcast_index(ta.shape(), out.shape());
            let ib = kernels::broadcast_index(tb.shape(), out.shape());
            let (da, db) = (ta.data(), tb.data());
            let is_div = matches!(node.op, Op::Div(..));
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                let (x, y) = (da[ia[i]], db[ib[i]]);
                if is_div {
                    ga[i] = g[i] / y;
                    gb[i] = -g[i] * x / (y * y);
                } else {
                    ga[i] = g[i] * y;
                    gb[i] = g[i] * x;
                }
            }
            vec![
                (*a, unbroadcast(&ga, ta.shape(), out.shape())),
                (*b, unbroadcast(&gb, tb.shape(), out.shape())),
            ]
        }
        Op::Neg(a) => vec![(*a, g.iter().map(|v| -v).collect())],
        Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
        Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, g.to_vec())],
        Op::Relu(a) => {
            let x = val(a).data();
            vec![(
                *a,
                g.iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Gelu(a) => {
            let x = val(a).data();
            let d: Vec<f64> = g
                .iter()
                .zip(x)
                .map(|(gv, &xv)| {
                    let u = GELU_C * (xv + GELU_K * xv * xv * xv);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_K * xv * xv);
                    gv * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du)
                })
                .collect();
            vec![(*a, d)]
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            vec![(
                *a,
                g.iter().zip(y).map(|(gv, &s)| gv * s * (1.0 - s)).collect(),
            )]
        }
        Op::Exp(a) => {
            let y = out.data();
            vec![(*a, g.iter().zip(y).map(|(gv, &e)| gv * e).collect())]
        }
        Op::Log(a) => {
            let x = val(a).data();
            vec![(*a, g.iter().zip(x).map(|(gv, &xv)| gv / xv).collect())]
        }
        Op::Pow(a, e) => {
            let x = val(a).data();
            vec![(
                *a,
                g.iter()
                    .zip(x)
                    .map(|(gv, &xv)| gv * e * xv.powf(e - 1.0))
                    .collect(),
            )]
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(a).data();
            vec![(
                *a,
                g.iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv >= *lo && xv <= *hi { *gv } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Sum(a) => vec![(*a, vec![g[0]; val(a).len()])],
        Op::Mean(a) => {
            let n = val(a).len();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
        Op::SumAxis(a, axis) => {
            let (outer, len, inner) = axis_split(val(a).shape(), *axis);
            let mut d = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    let dst = &mut d[(o * len + l) * inner..][..inner];
                    dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*a, d)]
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut res = Vec::with_capacity(2);
            if nodes[a.0].needs_grad {
                res.push((*a, kernels::gemm_nt(g, tb.data(), m, n, k)));
            }
            if nodes[b.0].needs_grad {
                res.push((*b, kernels::gemm_tn(ta.data(), g, m, k, n)));
            }
            res
        }
        Op::Transpose(a) => {
            let s = out.shape();
            vec![(*a, kernels::transpose(g, s[0], s[1]))]
        }
        Op::Softmax(a, axis) => {
            let y = out.data();
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0;
                    for l in 0..len {
                        let idx = base + l * inner;
                        dot += g[idx] * y[idx];
                    }
                    for l in 0..len {
                        let idx = base + l * inner;
                        d[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![(*a, d)]
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let dim = *val(gain).shape().last().unwrap_or(&1);
            let rows = xhat.len() / dim;
            let gv = val(gain).data();
            let mut dx = vec![0.0; xhat.len()];
            let mut dgain = vec![0.0; dim];
            let mut dbias = vec![0.0; dim];
            for r in 0..rows {
                let gr = &g[r * dim..(r + 1) * dim];
                let xr = &xhat[r * dim..(r + 1) * dim];
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for j in 0..dim {
                    let dxh = gr[j] * gv[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xr[j];
                    dgain[j] += gr[j] * xr[j];
                    dbias[j] += gr[j];
                }
                let scale = inv_std[r] / dim as f64;
                for j in 0..dim {
                    let dxh = gr[j] * gv[j];
                    dx[r * dim + j] =
                        scale * (dim as f64 * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                }
            }
            vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
        }
        Op::Conv3d { x, w, geom, cols } => {
            let cout = val(w).shape()[0];
            let rows = geom.rows();
            let ov = geom.out_voxels();
            let mut res = Vec::with_capacity(2);
            if nodes[x.0].needs_grad {
                let dcols = kernels::gemm_tn(val(w).data(), g, cout, rows, ov);
                res.push((*x, kernels::col2im(&dcols, geom)));
            }
            if nodes[w.0].needs_grad {
                res.push((*w, kernels::gemm_nt(g, cols, cout, ov, rows)));
            }
            res
        }
        Op::ConvTranspose3d { x, w, geom } => {
            // geom describes the forward conv whose adjoint this is: its
            // "input" is our output and its "output" is our input.
            let cin = val(w).shape()[0];
            let rows = geom.rows();
            let iv = geom.out_voxels();
            let dcols = kernels::im2col(g, geom);
            let mut res = Vec::with_capacity(2);
            if nodes[x.0].needs_grad {
                res.push((*x, kernels::gemm_nn(val(w).data(), &dcols, cin, rows, iv)));
            }
            if nodes[w.0].needs_grad {
                res.push((*w, kernels::gemm_nt(val(x).data(), &dcols, cin, iv, rows)));
            }
            res
        }
        Op::Concat(parts, axis) => {
            let (outer, _, inner) = axis_split(out.shape(), *axis);
            let total_len = out.shape()[*axis];
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for p in parts {
                let len = val(p).shape()[*axis];
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[(o * total_len + offset) * inner..][..len * inner];
                    d[o * len * inner..][..len * inner].copy_from_slice(src);
                }
                offset += len;
                res.push((*p, d));
            }
            res
        }
        Op::Narrow { x, axis, start } => {
            let src_shape = val(x).shape();
            let (outer, total_len, inner) = axis_split(src_shape, *axis);
            let len = out.shape()[*axis];
            let mut d = vec![0.0; outer * total_len * inner];
            for o in 0..outer {
                let src = &g[o * len * inner..][..len * inner];
                d[(o * total_len + start) * inner..][..len * inner].copy_from_slice(src);
            }
            vec![(*x, d)]
        }
    }
}

//! Forward definitions of the differentiable primitives.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::tape::{axis_split, Op, Tape, Var, GELU_C, GELU_K};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tape {
    fn binary(&self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| TensorError::mismatch(name, ta.shape(), tb.shape()))?;
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = kernels::broadcast_index(ta.shape(), &shape);
            let ib = kernels::broadcast_index(tb.shape(), &shape);
            ia.iter()
                .zip(&ib)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect()
        };
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
            Binary::Div => Op::Div(a, b),
        };
        Ok(self.push(Tensor::from_parts(shape, data), op))
    }

    /// Broadcasting elementwise sum.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let tb = self.value(b);
        if tb.data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                msg: "division by zero".into(),
            });
        }
        self.binary(a, b, Binary::Div)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), |x| {
            0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("non-positive input {v}"),
            });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    /// Elementwise `x^e`. Non-integer exponents need a non-negative base.
    pub fn pow(&self, a: Var, e: f64) -> Result<Var> {
        if e.fract() != 0.0 && self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(TensorError::Domain {
                op: "pow",
                msg: format!("negative base with fractional exponent {e}"),
            });
        }
        Ok(self.unary(a, Op::Pow(a, e), |x| x.powf(e)))
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(0.0, |acc, v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().fold(0.0, |acc, v| acc + v);
        self.push(Tensor::scalar(s / t.len() as f64), Op::Mean(a))
    }

    /// Sum over one axis, dropping it.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::invalid(
                "sum_axis",
                format!("axis {axis} out of range for shape {:?}", t.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = t.data();
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                for (dv, &sv) in dst.iter_mut().zip(&d[(o * len + l) * inner..][..inner]) {
                    *dv += sv;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis(a, axis)))
    }

    /// Mean over one axis, dropping it.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let n = self
            .value(a)
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| TensorError::invalid("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let c = kernels::gemm_nn(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], c), Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(TensorError::invalid(
                "transpose",
                format!("expected rank 2, got {:?}", t.shape()),
            ));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = kernels::transpose(t.data(), r, c);
        Ok(self.push(Tensor::from_parts(vec![c, r], d), Op::Transpose(a)))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", t.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let x = t.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(x[base + l * inner]);
                }
                let mut z = 0.0;
                for l in 0..len {
                    let e = (x[base + l * inner] - mx).exp();
                    y[base + l * inner] = e;
                    z += e;
                }
                for l in 0..len {
                    y[base + l * inner] /= z;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(t.shape().to_vec(), y),
            Op::Softmax(a, axis),
        ))
    }

    /// Normalise each last-axis row to zero mean / unit variance, then apply `gain` and `bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let dim = *tx.shape().last().ok_or_else(|| {
            TensorError::invalid("layer_norm", "input must have at least one axis")
        })?;
        if tg.shape() != [dim] {
            return Err(TensorError::mismatch("layer_norm", tx.shape(), tg.shape()));
        }
        if tb.shape() != [dim] {
            return Err(TensorError::mismatch("layer_norm", tx.shape(), tb.shape()));
        }
        let rows = tx.len() / dim;
        let xd = tx.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * dim..(r + 1) * dim];
            let mean = row.iter().fold(0.0, |a, v| a + v) / dim as f64;
            let var = row.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean)) / dim as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..dim {
                let h = (row[j] - mean) * inv;
                xhat[r * dim + j] = h;
                y[r * dim + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(tx.shape().to_vec(), y),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Direct 3D cross-correlation of `x[C_in, D, H, W]` with `kernels[C_out, C_in, k, k, k]`.
    pub fn conv3d(&self, x: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(kernels));
        if tx.rank() != 4 || tw.rank() != 5 {
            return Err(TensorError::mismatch("conv3d", tx.shape(), tw.shape()));
        }
        let (cout, cin, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if tw.shape()[3] != k || tw.shape()[4] != k {
            return Err(TensorError::invalid("conv3d", "kernel must be cubic"));
        }
        if k % 2 == 0 {
            return Err(TensorError::invalid(
                "conv3d",
                format!("kernel side must be odd, got {k}"),
            ));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv3d", "stride must be at least 1"));
        }
        if tx.shape()[0] != cin {
            return Err(TensorError::invalid(
                "conv3d",
                format!("input has {} channels, kernel expects {cin}", tx.shape()[0]),
            ));
        }
        let input = [tx.shape()[1], tx.shape()[2], tx.shape()[3]];
        let mut output = [0; 3];
        for i in 0..3 {
            let span = input[i] + 2 * padding;
            if span < k {
                return Err(TensorError::invalid(
                    "conv3d",
                    format!("kernel {k} larger than padded input extent {span}"),
                ));
            }
            output[i] = (span - k) / stride + 1;
        }
        let geom = ConvGeom {
            channels: cin,
            input,
            output,
            kernel: k,
            stride,
            padding,
        };
        let cols = kernels::im2col(tx.data(), &geom);
        let y = kernels::gemm_nn(tw.data(), &cols, cout, geom.rows(), geom.out_voxels());
        let shape = vec![cout, output[0], output[1], output[2]];
        Ok(self.push(
            Tensor::from_parts(shape, y),
            Op::Conv3d {
                x,
                w: kernels,
                geom,
                cols,
            },
        ))
    }

    /// Transposed 3D convolution (no padding): the adjoint of `conv3d` with
    /// the same kernel tensor. `kernels` is `[C_in, C_out, k, k, k]`; each
    /// output extent is `(n - 1)·stride + k`.
    pub fn conv_transpose3d(&self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(kernels));
        if tx.rank() != 4 || tw.rank() != 5 {
            return Err(TensorError::mismatch("conv_transpose3d", tx.shape(), tw.shape()));
        }
        let (cin, cout, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if tw.shape()[3] != k || tw.shape()[4] != k {
            return Err(TensorError::invalid("conv_transpose3d", "kernel must be cubic"));
        }
        if stride == 0 {
            return Err(TensorError::invalid(
                "conv_transpose3d",
                "stride must be at least 1",
            ));
        }
        if tx.shape()[0] != cin {
            return Err(TensorError::invalid(
                "conv_transpose3d",
                format!("input has {} channels, kernel expects {cin}", tx.shape()[0]),
            ));
        }
        let small = [tx.shape()[1], tx.shape()[2], tx.shape()[3]];
        let big = small.map(|n| (n - 1) * stride + k);
        let geom = ConvGeom {
            channels: cout,
            input: big,
            output: small,
            kernel: k,
            stride,
            padding: 0,
        };
        let cols = kernels::gemm_tn(tw.data(), tx.data(), cin, geom.rows(), geom.out_voxels());
        let y = kernels::col2im(&cols, &geom);
        let shape = vec![cout, big[0], big[1], big[2]];
        Ok(self.push(
            Tensor::from_parts(shape, y),
            Op::ConvTranspose3d {
                x,
                w: kernels,
                geom,
            },
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if numel(shape) != t.len() || shape.contains(&0) {
            return Err(TensorError::mismatch("reshape", t.shape(), shape));
        }
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), t.data().to_vec()),
            Op::Reshape(a),
        ))
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(TensorError::invalid(
                "concat",
                format!("axis {axis} out of range for shape {:?}", first.shape()),
            ));
        }
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let mut total = 0;
        for v in &values {
            let compatible = v.rank() == first.rank()
                && v
                    .shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", first.shape(), v.shape()));
            }
            total += v.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..][..len * inner]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.to_vec(), axis),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!(
                    "range {start}..{} on axis {axis} of shape {:?}",
                    start + len,
                    t.shape()
                ),
            ));
        }
        let (outer, total, inner) = axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[(o * total + start) * inner..][..len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Narrow { x, axis, start },
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

use super::kernels::{self, gemm, sigmoid};
use super::recurrent::{gru_scan_backward, gru_scan_forward, GruTrace};
use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Square,
    LeakyRelu(f64),
    ClampMin(f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    AddBias(Var, Var),
    Softmax(Var),
    Conv1d { x: Var, kernel: Var, bias: Var },
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Narrow { src: Var, start: usize },
    SelectStep { src: Var, step: usize },
    PairwiseAdd(Var, Var),
    Sum(Var),
    Mean(Var),
    SumPerBatch(Var),
    GruScan(Box<GruScanOp>),
}

#[derive(Debug, Clone)]
struct GruScanOp {
    proj: [Var; 3],
    recurrent: [Var; 3],
    trace: GruTrace,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in topological order and runs one
/// reverse pass over them.
///
/// Nodes can only refer to earlier nodes, so insertion order is already a
/// valid topological order. After [`Tape::backward`] the tape is consumed:
/// gradients stay readable but no new operations may be recorded until
/// [`Tape::reset`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Drops every node and gradient so the tape can record a fresh pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    /// Records an input tensor. Leaves with `requires_grad` receive a
    /// gradient from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        assert!(!self.consumed, "cannot record on a consumed tape");
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Gradient of the last backward pass for a leaf that requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves a leaf gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        if self.consumed {
            return Err(TensorError::Consumed);
        }
        match vars.iter().find(|v| v.0 >= self.nodes.len()) {
            Some(v) => Err(TensorError::UnknownVar(v.0)),
            None => Ok(()),
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    // ---------------------------------------------------------------- binary

    fn binary(&mut self, name: &'static str, kind: Binary, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (va, vb) = (self.value(a), self.value(b));
        let shape = if va.shape() == vb.shape() || vb.is_scalar() {
            va.shape().to_vec()
        } else if va.is_scalar() {
            vb.shape().to_vec()
        } else {
            return Err(self.dim_err(name, a, b));
        };
        if kind == Binary::Div && vb.data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: name,
                detail: "division by zero".into(),
            });
        }
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
            Binary::Div => |x: f64, y: f64| x / y,
        };
        let data: Vec<f64> = match (va.len(), vb.len()) {
            (la, lb) if la == lb => va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            (_, 1) => {
                let y = vb.item();
                va.data().iter().map(|&x| f(x, y)).collect()
            }
            _ => {
                let x = va.item();
                vb.data().iter().map(|&y| f(x, y)).collect()
            }
        };
        self.push(name, Tensor::from_parts(shape, data), Op::Binary(kind, a, b), &[a, b])
    }

    /// Elementwise sum; shapes must match or one side must hold one element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", Binary::Div, a, b)
    }

    // ----------------------------------------------------------------- unary

    fn unary(&mut self, name: &'static str, kind: Unary, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let vx = self.value(x);
        if kind == Unary::Log {
            if let Some(bad) = vx.data().iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::Domain {
                    op: name,
                    detail: format!("log of non-positive value {bad}"),
                });
            }
        }
        if kind == Unary::Sqrt {
            if let Some(bad) = vx.data().iter().find(|&&v| v < 0.0) {
                return Err(TensorError::Domain {
                    op: name,
                    detail: format!("sqrt of negative value {bad}"),
                });
            }
        }
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Exp => Box::new(f64::exp),
            Unary::Log => Box::new(f64::ln),
            Unary::Sqrt => Box::new(f64::sqrt),
            Unary::Square => Box::new(|v| v * v),
            Unary::LeakyRelu(s) => Box::new(move |v| if v >= 0.0 { v } else { s * v }),
            Unary::ClampMin(lo) => Box::new(move |v: f64| v.max(lo)),
            Unary::Scale(c) => Box::new(move |v| c * v),
            Unary::AddScalar(c) => Box::new(move |v| v + c),
        };
        let data = vx.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push(name, out, Op::Unary(kind, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", Unary::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", Unary::Exp, x)
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", Unary::Log, x)
    }

    /// Square root. The derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", Unary::Sqrt, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", Unary::Square, x)
    }

    /// `x` where `x >= 0`, `slope * x` elsewhere.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", Unary::LeakyRelu(slope), x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", Unary::LeakyRelu(0.0), x)
    }

    /// `max(x, floor)`; the gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.unary("clamp_min", Unary::ClampMin(floor), x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary("scale", Unary::Scale(factor), x)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        self.unary("add_scalar", Unary::AddScalar(offset), x)
    }

    // ---------------------------------------------------------------- linear

    /// Matrix product of `[p, q]` and `[q, r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.dim_err("matmul", a, b));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(p, q, r, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push("matmul", Tensor::from_parts(vec![p, r], out), Op::MatMul(a, b), &[a, b])
    }

    /// Batched matrix product of `[B, p, q]` and `[B, q, r]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(self.dim_err("bmm", a, b));
        }
        let (bs, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * p * r];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                p,
                q,
                r,
                &da[i * p * q..(i + 1) * p * q],
                false,
                &db[i * q * r..(i + 1) * q * r],
                false,
                &mut out[i * p * r..(i + 1) * p * r],
                0.0,
            );
        }
        self.push("bmm", Tensor::from_parts(vec![bs, p, r], out), Op::BatchMatMul(a, b), &[a, b])
    }

    /// Adds a bias vector `[r]` to every row of `x[..., r]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(&[x, bias])?;
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(self.dim_err("add_bias", x, bias));
        }
        let r = sb[0];
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(r) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let out = Tensor::from_parts(sx.to_vec(), data);
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let vx = self.value(x);
        let width = *vx.shape().last().unwrap();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Temporal convolution of `x` (`[n, c_in]` or `[B, n, c_in]`) with a
    /// `[width, c_in, c_out]` kernel, zero padded to keep length `n`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        self.check(&[x, kernel, bias])?;
        let (sx, sk, sb) = (self.shape(x), self.shape(kernel), self.shape(bias));
        let (batch, len, ch_in) = match *sx {
            [n, c] => (1, n, c),
            [b, n, c] => (b, n, c),
            _ => return Err(self.dim_err("conv1d", x, kernel)),
        };
        if sk.len() != 3 || sk[1] != ch_in || sk[0] % 2 == 0 || sb != [sk[2]] {
            return Err(self.dim_err("conv1d", x, kernel));
        }
        let (width, ch_out) = (sk[0], sk[2]);
        let data = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            batch,
            len,
            ch_in,
            ch_out,
            width,
        );
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = ch_out;
        self.push(
            "conv1d",
            Tensor::from_parts(shape, data),
            Op::Conv1d { x, kernel, bias },
            &[x, kernel, bias],
        )
    }

    // ----------------------------------------------------------------- shape

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let vx = self.value(x);
        let (batch, r, c) = match *vx.shape() {
            [r, c] => (1, r, c),
            [b, r, c] => (b, r, c),
            _ => return Err(self.dim_err("transpose", x, x)),
        };
        let data = transpose_batched(vx.data(), batch, r, c);
        let mut shape = vx.shape().to_vec();
        let rank = shape.len();
        shape.swap(rank - 1, rank - 2);
        self.push("transpose", Tensor::from_parts(shape, data), Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(&[x])?;
        let out = self.value(x).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.check(parts)?;
        let first = *parts.first().ok_or(TensorError::Dimension {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(self.dim_err("concat", first, p));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| *self.shape(p).last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(&[x])?;
        let sx = self.shape(x).to_vec();
        let width = *sx.last().unwrap();
        if len == 0 || start + len > width {
            return Err(TensorError::Dimension {
                op: "narrow",
                left: sx,
                right: vec![start, len],
            });
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = sx;
        *shape.last_mut().unwrap() = len;
        self.push("narrow", Tensor::from_parts(shape, data), Op::Narrow { src: x, start }, &[x])
    }

    /// Row `step` of every sequence: `[B, n, F] -> [B, F]`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        self.check(&[x])?;
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || step >= sx[1] {
            return Err(TensorError::Dimension {
                op: "select_step",
                left: sx,
                right: vec![step],
            });
        }
        let (b, n, f) = (sx[0], sx[1], sx[2]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * n + step) * f;
            data.extend_from_slice(&src[off..off + f]);
        }
        self.push("select_step", Tensor::from_parts(vec![b, f], data), Op::SelectStep { src: x, step }, &[x])
    }

    /// `out[.., i, j] = a[.., i] + b[.., j]` for equally shaped `a`, `b`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.len() > 2 {
            return Err(self.dim_err("pairwise_add", a, b));
        }
        let nn = *sa.last().unwrap();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(da.len() * nn);
        for (ra, rb) in da.chunks(nn).zip(db.chunks(nn)) {
            for &x in ra {
                data.extend(rb.iter().map(|&y| x + y));
            }
        }
        let mut shape = sa.to_vec();
        shape.push(nn);
        self.push("pairwise_add", Tensor::from_parts(shape, data), Op::PairwiseAdd(a, b), &[a, b])
    }

    // ------------------------------------------------------------- recurrent

    /// Fused GRU recurrence from a zero state.
    ///
    /// `proj` holds the update, reset and candidate input projections (each
    /// `[B, n, d]`, biases included) and `recurrent` the matching `[d, d]`
    /// weights. Returns the last hidden state `[B, d]`.
    pub fn gru_scan(&mut self, proj: [Var; 3], recurrent: [Var; 3]) -> Result<Var> {
        self.check(&proj)?;
        self.check(&recurrent)?;
        let sp = self.shape(proj[0]).to_vec();
        let [batch, steps, d] = sp[..] else {
            return Err(self.dim_err("gru_scan", proj[0], recurrent[0]));
        };
        for i in 0..3 {
            if self.shape(proj[i]) != sp.as_slice() {
                return Err(self.dim_err("gru_scan", proj[0], proj[i]));
            }
            if self.shape(recurrent[i]) != [d, d] {
                return Err(self.dim_err("gru_scan", proj[i], recurrent[i]));
            }
        }
        let trace = gru_scan_forward(
            proj.map(|v| self.value(v).data()),
            recurrent.map(|v| self.value(v).data()),
            batch,
            steps,
            d,
        );
        let last = trace.states[steps * batch * d..].to_vec();
        let parents = [proj[0], proj[1], proj[2], recurrent[0], recurrent[1], recurrent[2]];
        let op = Op::GruScan(Box::new(GruScanOp { proj, recurrent, trace }));
        self.push("gru_scan", Tensor::from_parts(vec![batch, d], last), op, &parents)
    }

    // ------------------------------------------------------------- reduction

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let v = self.value(x);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    /// Sums everything but the leading axis: `[B, ...] -> [B]`.
    pub fn sum_per_batch(&mut self, x: Var) -> Result<Var> {
        self.check(&[x])?;
        let v = self.value(x);
        let b = v.shape()[0];
        let per = v.len() / b;
        let data = v.data().chunks(per).map(|c| c.iter().sum()).collect();
        self.push("sum_per_batch", Tensor::from_parts(vec![b], data), Op::SumPerBatch(x), &[x])
    }

    // -------------------------------------------------------------- backward

    /// Propagates `d loss / d leaf` to every leaf that requires a gradient.
    ///
    /// Contributions from shared operands accumulate additively. The tape is
    /// consumed afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::Consumed);
        }
        self.check(&[loss])?;
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        self.grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        self.consumed = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let wants = |v: &Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_buf(grads, nodes, $v)
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let len = out.len();
                let at = |d: &[f64], j: usize| if d.len() == len { d[j] } else { d[0] };
                let (ga, gb): (Box<dyn Fn(usize) -> f64>, Box<dyn Fn(usize) -> f64>) = match kind {
                    Binary::Add => (Box::new(|_| 1.0), Box::new(|_| 1.0)),
                    Binary::Sub => (Box::new(|_| 1.0), Box::new(|_| -1.0)),
                    Binary::Mul => (Box::new(move |j| at(vb, j)), Box::new(move |j| at(va, j))),
                    Binary::Div => (
                        Box::new(move |j| 1.0 / at(vb, j)),
                        Box::new(move |j| -at(va, j) / (at(vb, j) * at(vb, j))),
                    ),
                };
                if wants(a) {
                    let da = acc!(*a);
                    if da.len() == len {
                        for j in 0..len {
                            da[j] += g[j] * ga(j);
                        }
                    } else {
                        da[0] += (0..len).map(|j| g[j] * ga(j)).sum::<f64>();
                    }
                }
                if wants(b) {
                    let db = acc!(*b);
                    if db.len() == len {
                        for j in 0..len {
                            db[j] += g[j] * gb(j);
                        }
                    } else {
                        db[0] += (0..len).map(|j| g[j] * gb(j)).sum::<f64>();
                    }
                }
            }
            Op::Unary(kind, x) => {
                if !wants(x) {
                    return;
                }
                let vx = nodes[x.0].value.data();
                let y = out.data();
                let dx = acc!(*x);
                for j in 0..dx.len() {
                    let d = match *kind {
                        Unary::Sigmoid => y[j] * (1.0 - y[j]),
                        Unary::Tanh => 1.0 - y[j] * y[j],
                        Unary::Exp => y[j],
                        Unary::Log => 1.0 / vx[j],
                        Unary::Sqrt => {
                            if y[j] > 0.0 {
                                0.5 / y[j]
                            } else {
                                0.0
                            }
                        }
                        Unary::Square => 2.0 * vx[j],
                        Unary::LeakyRelu(s) => {
                            if vx[j] >= 0.0 {
                                1.0
                            } else {
                                s
                            }
                        }
                        Unary::ClampMin(lo) => {
                            if vx[j] > lo {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Scale(c) => c,
                        Unary::AddScalar(_) => 1.0,
                    };
                    dx[j] += g[j] * d;
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (p, q, r) = (sa[0], sa[1], sb[1]);
                if wants(a) {
                    gemm(p, r, q, g, false, nodes[b.0].value.data(), true, acc!(*a), 1.0);
                }
                if wants(b) {
                    gemm(q, p, r, nodes[a.0].value.data(), true, g, false, acc!(*b), 1.0);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (bs, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(a) {
                    let da = acc!(*a);
                    for k in 0..bs {
                        gemm(
                            p,
                            r,
                            q,
                            &g[k * p * r..(k + 1) * p * r],
                            false,
                            &vb[k * q * r..(k + 1) * q * r],
                            true,
                            &mut da[k * p * q..(k + 1) * p * q],
                            1.0,
                        );
                    }
                }
                if wants(b) {
                    let db = acc!(*b);
                    for k in 0..bs {
                        gemm(
                            q,
                            p,
                            r,
                            &va[k * p * q..(k + 1) * p * q],
                            true,
                            &g[k * p * r..(k + 1) * p * r],
                            false,
                            &mut db[k * q * r..(k + 1) * q * r],
                            1.0,
                        );
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if wants(x) {
                    for (d, gv) in acc!(*x).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if wants(bias) {
                    let db = acc!(*bias);
                    let r = db.len();
                    for row in g.chunks(r) {
                        for (d, gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if !wants(x) {
                    return;
                }
                let width = *out.shape().last().unwrap();
                let dx = acc!(*x);
                for ((yr, gr), dr) in out.data().chunks(width).zip(g.chunks(width)).zip(dx.chunks_mut(width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..width {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let sx = nodes[x.0].value.shape();
                let sk = nodes[kernel.0].value.shape();
                let (batch, len, ch_in) = match *sx {
                    [n, c] => (1, n, c),
                    [b, n, c] => (b, n, c),
                    _ => unreachable!(),
                };
                let (ch_out, width) = (sk[2], sk[0]);
                let mut dx = wants(x).then(|| vec![0.0; batch * len * ch_in]);
                let mut dk = wants(kernel).then(|| vec![0.0; nodes[kernel.0].value.len()]);
                let mut db = wants(bias).then(|| vec![0.0; ch_out]);
                kernels::conv1d_backward(
                    nodes[x.0].value.data(),
                    nodes[kernel.0].value.data(),
                    g,
                    batch,
                    len,
                    ch_in,
                    ch_out,
                    width,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, local) in [(*x, dx), (*kernel, dk), (*bias, db)] {
                    if let Some(local) = local {
                        for (d, l) in acc!(v).iter_mut().zip(local) {
                            *d += l;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if !wants(x) {
                    return;
                }
                let s = out.shape();
                let (batch, r, c) = match *s {
                    [r, c] => (1, r, c),
                    [b, r, c] => (b, r, c),
                    _ => unreachable!(),
                };
                let back = transpose_batched(g, batch, r, c);
                for (d, gv) in acc!(*x).iter_mut().zip(back) {
                    *d += gv;
                }
            }
            Op::Reshape(x) => {
                if wants(x) {
                    for (d, gv) in acc!(*x).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let rows = out.len() / total;
                let mut offset = 0;
                for p in parts {
                    let w = *nodes[p.0].value.shape().last().unwrap();
                    if wants(p) {
                        let dp = acc!(*p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (d, gv) in dp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Narrow { src, start } => {
                if !wants(src) {
                    return;
                }
                let width = *nodes[src.0].value.shape().last().unwrap();
                let len = *out.shape().last().unwrap();
                let ds = acc!(*src);
                for (dr, gr) in ds.chunks_mut(width).zip(g.chunks(len)) {
                    for (d, gv) in dr[*start..*start + len].iter_mut().zip(gr) {
                        *d += gv;
                    }
                }
            }
            Op::SelectStep { src, step } => {
                if !wants(src) {
                    return;
                }
                let s = nodes[src.0].value.shape();
                let (b, n, f) = (s[0], s[1], s[2]);
                let ds = acc!(*src);
                for i in 0..b {
                    let off = (i * n + step) * f;
                    for (d, gv) in ds[off..off + f].iter_mut().zip(&g[i * f..(i + 1) * f]) {
                        *d += gv;
                    }
                }
            }
            Op::PairwiseAdd(a, b) => {
                let nn = *nodes[a.0].value.shape().last().unwrap();
                let groups = nodes[a.0].value.len() / nn;
                if wants(a) {
                    let da = acc!(*a);
                    for gi in 0..groups {
                        for r in 0..nn {
                            let off = (gi * nn + r) * nn;
                            da[gi * nn + r] += g[off..off + nn].iter().sum::<f64>();
                        }
                    }
                }
                if wants(b) {
                    let db = acc!(*b);
                    for gi in 0..groups {
                        for r in 0..nn {
                            let off = (gi * nn + r) * nn;
                            for c in 0..nn {
                                db[gi * nn + c] += g[off + c];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(x) {
                    acc!(*x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if wants(x) {
                    let dx = acc!(*x);
                    let share = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += share);
                }
            }
            Op::GruScan(op) => {
                let weights = op.recurrent.map(|v| nodes[v.0].value.data());
                let grads_out = gru_scan_backward(&op.trace, weights, g);
                for (v, local) in op.proj.iter().zip(&grads_out.proj).chain(op.recurrent.iter().zip(&grads_out.recurrent)) {
                    if wants(v) {
                        for (d, l) in acc!(*v).iter_mut().zip(local) {
                            *d += l;
                        }
                    }
                }
            }
            Op::SumPerBatch(x) => {
                if wants(x) {
                    let dx = acc!(*x);
                    let per = dx.len() / g.len();
                    for (chunk, gv) in dx.chunks_mut(per).zip(g) {
                        chunk.iter_mut().for_each(|d| *d += gv);
                    }
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn transpose_batched(src: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..batch {
        let s = &src[b * r * c..(b + 1) * r * c];
        let o = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                o[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

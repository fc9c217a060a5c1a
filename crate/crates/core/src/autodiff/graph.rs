use super::functional::{axis_dims, log_softmax, norm_stats, sigmoid, softmax};
use super::tensor::{gemm, gemm_at, gemm_bt, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations understood by [`Graph::apply`].
///
/// Shape rules:
/// - `MatMul`: `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
/// - `Add`, `Sub`: equal shapes, or `[.., n] + [n]` broadcast over the leading axes.
/// - `Mul` (Hadamard): equal shapes.
/// - `Concat`: equal ranks and extents except along `axis`.
/// - `Slice`: `len` entries along `axis` starting at `start`.
/// - `Row(i)`: row `i` of a matrix, as a vector.
/// - `Stack`: equal-length vectors stacked as matrix rows.
/// - `Conv1d`: signal `[c]` with kernel `[channels, width]` gives `[c, channels]`;
///   same-length cross-correlation centred on tap `(width-1)/2`, zero outside the signal.
/// - `SumAxis(a)`: removes axis `a`.
/// - `Softmax{axis}`; `LogSoftmax` and `LayerNorm` act on the last axis.
/// - `CtcLoss`: logits `[frames, labels]` to the scalar CTC loss of `target`.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Row(usize),
    Stack,
    Conv1d,
    Transpose,
    Sum,
    SumAxis(usize),
    Softmax { axis: usize },
    LogSoftmax,
    LayerNorm,
    CtcLoss { target: Vec<usize>, blank: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "hadamard",
            Primitive::Scale(_) => "scale",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Row(_) => "row",
            Primitive::Stack => "stack",
            Primitive::Conv1d => "conv1d",
            Primitive::Transpose => "transpose",
            Primitive::Sum => "sum",
            Primitive::SumAxis(_) => "sum_axis",
            Primitive::Softmax { .. } => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::LayerNorm => "layer_norm",
            Primitive::CtcLoss { .. } => "ctc_loss",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Leaf => Some(0),
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Conv1d => Some(2),
            Primitive::LayerNorm => Some(3),
            Primitive::Concat { .. } | Primitive::Stack => None,
            _ => Some(1),
        }
    }
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    op: Primitive,
    /// Op-specific forward byproduct needed by backward.
    saved: Option<Tensor>,
}

/// Reverse-mode computation graph. Nodes are appended in evaluation order,
/// so the node list is always a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), Primitive::Leaf, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    pub fn op(&self, v: Var) -> &Primitive {
        &self.nodes[v.0].op
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, op: Primitive, saved: Option<Tensor>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            op,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on `inputs` and records the node for backward.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let name = kind.name();
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return shape_err(name, format!("expected {n} inputs, got {}", inputs.len()));
            }
        } else if inputs.is_empty() {
            return shape_err(name, "needs at least one input");
        }
        if kind == Primitive::Leaf {
            return shape_err(name, "use Graph::leaf");
        }
        let (value, saved) = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&kind, &vals)?
        };
        if !value.all_finite() {
            return Err(Error::Domain {
                op: name,
                detail: "non-finite output".into(),
            });
        }
        Ok(self.push(value, inputs.to_vec(), kind, saved))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.apply(Primitive::Row(i), &[a])
    }
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        self.apply(Primitive::Stack, rows)
    }
    pub fn conv1d(&mut self, signal: Var, kernel: Var) -> Result<Var> {
        self.apply(Primitive::Conv1d, &[signal, kernel])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Softmax { axis }, &[a])
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LogSoftmax, &[a])
    }
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.apply(Primitive::LayerNorm, &[x, gain, bias])
    }
    pub fn ctc_loss(&mut self, logits: Var, target: &[usize], blank: usize) -> Result<Var> {
        self.apply(
            Primitive::CtcLoss {
                target: target.to_vec(),
                blank,
            },
            &[logits],
        )
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.parents.is_empty() {
                let vals: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let pgrads = backward_rule(&node.op, &vals, &node.value, node.saved.as_ref(), &g);
                for (p, pg) in node.parents.iter().zip(pgrads) {
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.rank() >= 2 && b.rank() == 1 && a.shape().last() == b.shape().last()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let n = b.len();
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % n]))
            .collect()
    };
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn forward(kind: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Option<Tensor>)> {
    let name = kind.name();
    let out = match kind {
        Primitive::Leaf => unreachable!(),
        Primitive::MatMul => {
            let (a, b) = (x[0], x[1]);
            if a.rank() != 2 || !(b.rank() == 1 || b.rank() == 2) || a.shape()[1] != b.shape()[0] {
                return shape_err(name, format!("{:?} x {:?}", a.shape(), b.shape()));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            if b.rank() == 1 {
                Tensor::new(vec![m], gemm(a.data(), b.data(), m, k, 1))?
            } else {
                let n = b.shape()[1];
                Tensor::new(vec![m, n], gemm(a.data(), b.data(), m, k, n))?
            }
        }
        Primitive::Add | Primitive::Sub => {
            let (a, b) = (x[0], x[1]);
            if a.shape() != b.shape() && !is_row_broadcast(a, b) {
                return shape_err(name, format!("{:?} with {:?}", a.shape(), b.shape()));
            }
            if *kind == Primitive::Add {
                zip_map(a, b, |p, q| p + q)
            } else {
                zip_map(a, b, |p, q| p - q)
            }
        }
        Primitive::Mul => {
            same_shape(name, x[0], x[1])?;
            zip_map(x[0], x[1], |p, q| p * q)
        }
        Primitive::Scale(s) => x[0].map(|v| v * s),
        Primitive::Tanh => x[0].map(f64::tanh),
        Primitive::Sigmoid => x[0].map(sigmoid),
        Primitive::Exp => x[0].map(f64::exp),
        Primitive::Log => {
            if x[0].data().iter().any(|&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: name,
                    detail: "input must be strictly positive".into(),
                });
            }
            x[0].map(f64::ln)
        }
        Primitive::Concat { axis } => {
            let first = x[0];
            if *axis >= first.rank() {
                return shape_err(name, format!("axis {axis} on {:?}", first.shape()));
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = 0;
            for t in x {
                let ok = t.rank() == first.rank()
                    && t.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (p, q))| d == *axis || p == q);
                if !ok {
                    return shape_err(
                        name,
                        format!("{:?} with {:?} along axis {axis}", first.shape(), t.shape()),
                    );
                }
                shape[*axis] += t.shape()[*axis];
            }
            let (outer, _, inner) = axis_dims(first.shape(), *axis);
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for t in x {
                    let block = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::new(shape, data)?
        }
        Primitive::Slice { axis, start, len } => {
            let t = x[0];
            if *axis >= t.rank() || *len == 0 || start + len > t.shape()[*axis] {
                return shape_err(
                    name,
                    format!("[{start}, {start}+{len}) along axis {axis} of {:?}", t.shape()),
                );
            }
            let (outer, n, inner) = axis_dims(t.shape(), *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                data.extend_from_slice(&t.data()[base..base + len * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[*axis] = *len;
            Tensor::new(shape, data)?
        }
        Primitive::Row(i) => {
            let t = x[0];
            if t.rank() != 2 || *i >= t.shape()[0] {
                return shape_err(name, format!("row {i} of {:?}", t.shape()));
            }
            Tensor::vector(t.row(*i))
        }
        Primitive::Stack => {
            let n = x[0].len();
            if x.iter().any(|t| t.rank() != 1 || t.len() != n) {
                let shapes: Vec<_> = x.iter().map(|t| t.shape().to_vec()).collect();
                return shape_err(name, format!("rows must be equal-length vectors, got {shapes:?}"));
            }
            let mut data = Vec::with_capacity(x.len() * n);
            for t in x {
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![x.len(), n], data)?
        }
        Primitive::Conv1d => {
            let (sig, ker) = (x[0], x[1]);
            if sig.rank() != 1 || ker.rank() != 2 {
                return shape_err(name, format!("signal {:?}, kernel {:?}", sig.shape(), ker.shape()));
            }
            let (c, ch, w) = (sig.len(), ker.shape()[0], ker.shape()[1]);
            let half = (w - 1) / 2;
            let mut out = vec![0.0; c * ch];
            for t in 0..c {
                for k in 0..ch {
                    let mut acc = 0.0;
                    for j in 0..w {
                        let s = t as isize + j as isize - half as isize;
                        if s >= 0 && (s as usize) < c {
                            acc += ker.at(k, j) * sig.data()[s as usize];
                        }
                    }
                    out[t * ch + k] = acc;
                }
            }
            Tensor::new(vec![c, ch], out)?
        }
        Primitive::Transpose => x[0].transpose()?,
        Primitive::Sum => Tensor::scalar(x[0].sum()),
        Primitive::SumAxis(axis) => {
            let t = x[0];
            if *axis >= t.rank() {
                return shape_err(name, format!("axis {axis} on {:?}", t.shape()));
            }
            let (outer, n, inner) = axis_dims(t.shape(), *axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..n {
                    for j in 0..inner {
                        data[o * inner + j] += t.data()[o * n * inner + i * inner + j];
                    }
                }
            }
            let mut shape = t.shape().to_vec();
            shape.remove(*axis);
            Tensor::new(shape, data)?
        }
        Primitive::Softmax { axis } => {
            if *axis >= x[0].rank() {
                return shape_err(name, format!("axis {axis} on {:?}", x[0].shape()));
            }
            softmax(x[0], *axis)
        }
        Primitive::LogSoftmax => {
            if x[0].rank() == 0 {
                return shape_err(name, "needs at least rank 1");
            }
            log_softmax(x[0])
        }
        Primitive::LayerNorm => super::functional::layer_norm(x[0], x[1], x[2])?,
        Primitive::CtcLoss { target, blank } => {
            let (loss, grad) = crate::ctc::loss_and_logit_grad(x[0], target, *blank)?;
            return Ok((Tensor::scalar(loss), Some(grad)));
        }
    };
    Ok((out, None))
}

/// Reduces a broadcast gradient `[.., n]` back to `[n]`.
fn reduce_rows(g: &Tensor, n: usize) -> Tensor {
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::vector(&out)
}

fn backward_rule(op: &Primitive, x: &[&Tensor], y: &Tensor, saved: Option<&Tensor>, g: &Tensor) -> Vec<Tensor> {
    let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).expect("gradient shape");
    match op {
        Primitive::Leaf => Vec::new(),
        Primitive::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = if b.rank() == 1 { 1 } else { b.shape()[1] };
            // dA = G B^T, dB = A^T G
            let da = gemm_bt(g.data(), b.data(), m, n, k);
            let db = gemm_at(a.data(), g.data(), m, k, n);
            vec![like(a, da), like(b, db)]
        }
        Primitive::Add | Primitive::Sub => {
            let sign = if *op == Primitive::Add { 1.0 } else { -1.0 };
            let gb = if x[0].shape() == x[1].shape() {
                g.map(|v| sign * v)
            } else {
                reduce_rows(g, x[1].len()).map(|v| sign * v)
            };
            vec![g.clone(), gb]
        }
        Primitive::Mul => {
            let ga = g.data().iter().zip(x[1].data()).map(|(p, q)| p * q).collect();
            let gb = g.data().iter().zip(x[0].data()).map(|(p, q)| p * q).collect();
            vec![like(x[0], ga), like(x[1], gb)]
        }
        Primitive::Scale(s) => vec![g.map(|v| v * s)],
        Primitive::Tanh => vec![like(
            x[0],
            g.data().iter().zip(y.data()).map(|(d, t)| d * (1.0 - t * t)).collect(),
        )],
        Primitive::Sigmoid => vec![like(
            x[0],
            g.data().iter().zip(y.data()).map(|(d, s)| d * s * (1.0 - s)).collect(),
        )],
        Primitive::Exp => vec![like(x[0], g.data().iter().zip(y.data()).map(|(d, e)| d * e).collect())],
        Primitive::Log => vec![like(
            x[0],
            g.data().iter().zip(x[0].data()).map(|(d, v)| d / v).collect(),
        )],
        Primitive::Concat { axis } => {
            let (outer, _, inner) = axis_dims(y.shape(), *axis);
            let total = y.shape()[*axis] * inner;
            let mut offset = 0;
            x.iter()
                .map(|t| {
                    let block = t.shape()[*axis] * inner;
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = o * total + offset;
                        data.extend_from_slice(&g.data()[base..base + block]);
                    }
                    offset += block;
                    like(t, data)
                })
                .collect()
        }
        Primitive::Slice { axis, start, len } => {
            let t = x[0];
            let (outer, n, inner) = axis_dims(t.shape(), *axis);
            let mut data = vec![0.0; t.len()];
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                let src = o * len * inner;
                data[base..base + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![like(t, data)]
        }
        Primitive::Row(i) => {
            let t = x[0];
            let mut out = Tensor::zeros(t.shape());
            out.row_mut(*i).copy_from_slice(g.data());
            vec![out]
        }
        Primitive::Stack => (0..x.len()).map(|r| Tensor::vector(g.row(r))).collect(),
        Primitive::Conv1d => {
            let (sig, ker) = (x[0], x[1]);
            let (c, ch, w) = (sig.len(), ker.shape()[0], ker.shape()[1]);
            let half = (w - 1) / 2;
            let mut gs = vec![0.0; c];
            let mut gk = vec![0.0; ch * w];
            for t in 0..c {
                for k in 0..ch {
                    let gv = g.data()[t * ch + k];
                    for j in 0..w {
                        let s = t as isize + j as isize - half as isize;
                        if s >= 0 && (s as usize) < c {
                            gs[s as usize] += gv * ker.at(k, j);
                            gk[k * w + j] += gv * sig.data()[s as usize];
                        }
                    }
                }
            }
            vec![like(sig, gs), like(ker, gk)]
        }
        Primitive::Transpose => vec![g.transpose().expect("rank 2")],
        Primitive::Sum => {
            let d = g.item();
            vec![Tensor::full(x[0].shape(), d)]
        }
        Primitive::SumAxis(axis) => {
            let t = x[0];
            let (outer, n, inner) = axis_dims(t.shape(), *axis);
            let mut data = vec![0.0; t.len()];
            for o in 0..outer {
                for i in 0..n {
                    for j in 0..inner {
                        data[o * n * inner + i * inner + j] = g.data()[o * inner + j];
                    }
                }
            }
            vec![like(t, data)]
        }
        Primitive::Softmax { axis } => {
            let (outer, n, inner) = axis_dims(y.shape(), *axis);
            let mut data = vec![0.0; y.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| o * n * inner + i * inner + j;
                    let dot: f64 = (0..n).map(|i| g.data()[idx(i)] * y.data()[idx(i)]).sum();
                    for i in 0..n {
                        data[idx(i)] = y.data()[idx(i)] * (g.data()[idx(i)] - dot);
                    }
                }
            }
            vec![like(x[0], data)]
        }
        Primitive::LogSoftmax => {
            let n = *y.shape().last().expect("rank >= 1");
            let mut data = vec![0.0; y.len()];
            for ((out, gr), yr) in data.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                let total: f64 = gr.iter().sum();
                for i in 0..n {
                    out[i] = gr[i] - yr[i].exp() * total;
                }
            }
            vec![like(x[0], data)]
        }
        Primitive::LayerNorm => {
            let (inp, gain) = (x[0], x[1]);
            let n = gain.len();
            let nf = n as f64;
            let mut dx = vec![0.0; inp.len()];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for (r, row) in inp.data().chunks(n).enumerate() {
                let (mean, inv) = norm_stats(row);
                let gr = &g.data()[r * n..(r + 1) * n];
                let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                let dxhat: Vec<f64> = gr.iter().zip(gain.data()).map(|(a, b)| a * b).collect();
                let m1 = dxhat.iter().sum::<f64>() / nf;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                for k in 0..n {
                    dx[r * n + k] = inv * (dxhat[k] - m1 - xhat[k] * m2);
                    dgain[k] += gr[k] * xhat[k];
                    dbias[k] += gr[k];
                }
            }
            vec![like(inp, dx), Tensor::vector(&dgain), Tensor::vector(&dbias)]
        }
        Primitive::CtcLoss { .. } => {
            let d = g.item();
            vec![saved.expect("ctc saves its gradient").map(|v| v * d)]
        }
    }
}

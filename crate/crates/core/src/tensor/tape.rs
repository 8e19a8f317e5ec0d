//! Reverse-mode automatic differentiation over an append-only node list.
//!
//! Nodes are pushed in evaluation order, so every parent id is smaller than
//! its child's id and a reverse sweep over ids is a valid topological order.

use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each parent, in parent order.
    fn backward(&self, grad: &Tensor, parents: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    /// Output of an operation whose inputs need no gradient.
    Detached,
    MatMul,
    BatchMatMul,
    Transpose,
    Add,
    AddBias { axis: usize },
    Mul,
    ScaleRows,
    Scale(f64),
    Relu,
    Softmax { axis: usize },
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d(ConvGeometry),
    Reshape,
    SliceLast { start: usize },
    ConcatLast { widths: Vec<usize> },
    RepeatLeading { times: usize },
    MeanLeading,
    Sum,
    Custom(Box<dyn Backward>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detached => "detached",
            Op::MatMul => "matmul",
            Op::BatchMatMul => "bmm",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul => "mul",
            Op::ScaleRows => "scale_rows",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1d(_) => "conv1d",
            Op::Reshape => "reshape",
            Op::SliceLast { .. } => "slice_last",
            Op::ConcatLast { .. } => "concat_last",
            Op::RepeatLeading { .. } => "repeat_leading",
            Op::MeanLeading => "mean_leading",
            Op::Sum => "sum",
            Op::Custom(op) => op.name(),
        }
    }
}

struct Node {
    op: Op,
    parents: Vec<Var>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradient tape. A recording tape keeps what backward needs; an inference
/// tape keeps only values.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves that require them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Removes and returns a gradient, leaving `None` behind.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Node ids that received a gradient.
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| i)
    }
}

fn add_into(acc: &mut Option<Tensor>, g: Tensor) {
    match acc {
        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
        None => *acc = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true }
    }

    /// A tape that evaluates values only; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value: t,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: impl FnOnce() -> Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric("tape operation produced a non-finite value".into()));
        }
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let (op, parents) = if requires_grad {
            (op(), parents.to_vec())
        } else {
            (Op::Detached, Vec::new())
        };
        self.nodes.push(Node { op, parents, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = kernels::matmul_dims(av.shape(), bv.shape())?;
        let out = Tensor::from_parts(vec![m, n], kernels::gemm(av.data(), bv.data(), m, k, n));
        self.push(out, &[a, b], || Op::MatMul)
    }

    /// Batched matrix product over the leading axis.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (bs, m, k, n) = kernels::bmm_dims(av.shape(), bv.shape())?;
        let out = Tensor::from_parts(vec![bs, m, n], kernels::bmm(av.data(), bv.data(), bs, m, k, n));
        self.push(out, &[a, b], || Op::BatchMatMul)
    }

    /// Swaps the last two axes of a 2-D or 3-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (batch, m, n) = match xv.shape()[..] {
            [m, n] => (1, m, n),
            [b, m, n] => (b, m, n),
            _ => return shape_err(format!("transpose of rank-{} tensor", xv.ndim())),
        };
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let out = Tensor::from_parts(shape, kernels::transpose(xv.data(), batch, m, n));
        self.push(out, &[x], || Op::Transpose)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} + {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, &[a, b], || Op::Add)
    }

    /// Adds the vector `bias` along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if axis >= xv.ndim() || bv.shape() != [xv.shape()[axis]] {
            return shape_err(format!(
                "bias {:?} does not match axis {axis} of {:?}",
                bv.shape(),
                xv.shape()
            ));
        }
        let (outer, len, inner) = kernels::axis_strides(xv.shape(), axis);
        let mut data = xv.data().to_vec();
        for o in 0..outer {
            for (i, &b) in bv.data().iter().enumerate().take(len) {
                let start = (o * len + i) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += b);
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, &[x, bias], || Op::AddBias { axis })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("mul {:?} * {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, &[a, b], || Op::Mul)
    }

    /// `out[i][j] = w[i][j] * s[i]` for `w[n×d]`, `s[n]`; counted as `n·d` MACs.
    pub fn scale_rows(&mut self, w: Var, s: Var) -> Result<Var> {
        let (wv, sv) = (self.value(w), self.value(s));
        let [n, d] = wv.shape()[..] else {
            return shape_err(format!("scale_rows needs a matrix, got {:?}", wv.shape()));
        };
        if sv.shape() != [n] {
            return shape_err(format!("scale_rows scale {:?} for {n} rows", sv.shape()));
        }
        super::mac_counter::add((n * d) as u64);
        let data = wv
            .data()
            .chunks_exact(d)
            .zip(sv.data())
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let out = Tensor::from_parts(vec![n, d], data);
        self.push(out, &[w, s], || Op::ScaleRows)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, &[x], || Op::Scale(c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, &[x], || Op::Relu)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return shape_err(format!("softmax axis {axis} out of range for {:?}", xv.shape()));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), kernels::softmax(xv.data(), xv.shape(), axis));
        self.push(out, &[x], || Op::Softmax { axis })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = kernels::layer_norm_dims(xv.shape(), gv.shape(), bv.shape(), eps)?;
        let (y, xhat, inv_std) = kernels::layer_norm(xv.data(), gv.data(), bv.data(), d, eps);
        let out = Tensor::from_parts(xv.shape().to_vec(), y);
        self.push(out, &[x, gamma, beta], || Op::LayerNorm { xhat, inv_std })
    }

    /// Cross-correlation of `x[C×L]` or `x[B×C×L]` with `w[C_out×C×K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, c_in, len, batched) = match xv.shape()[..] {
            [c, l] => (1, c, l, false),
            [b, c, l] => (b, c, l, true),
            _ => return shape_err(format!("conv1d input rank {}", xv.ndim())),
        };
        let geom = ConvGeometry::new(batch, c_in, len, wv.shape(), stride, padding)?;
        let y = kernels::conv1d_forward(xv.data(), wv.data(), &geom);
        let shape = if batched {
            vec![batch, geom.c_out, geom.l_out]
        } else {
            vec![geom.c_out, geom.l_out]
        };
        self.push(Tensor::from_parts(shape, y), &[x, w], || Op::Conv1d(geom))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, &[x], || Op::Reshape)
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&1);
        if xv.ndim() == 0 || start >= end || end > d {
            return shape_err(format!("slice {start}..{end} of last axis {d}"));
        }
        let data = xv.data().chunks_exact(d).flat_map(|r| r[start..end].iter().copied()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        self.push(Tensor::from_parts(shape, data), &[x], || Op::SliceLast { start })
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat of zero tensors");
        };
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            match s.split_last() {
                Some((&w, l)) if l == lead.as_slice() => widths.push(w),
                _ => return shape_err(format!("concat part {s:?} does not match leading {lead:?}")),
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::from_parts(shape, data), parts, || Op::ConcatLast { widths })
    }

    /// Stacks `times` copies of `x` along a new leading axis.
    pub fn repeat_leading(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Usage("repeat count must be positive".into()));
        }
        let xv = self.value(x);
        let mut shape = vec![times];
        shape.extend_from_slice(xv.shape());
        let data = xv.data().repeat(times);
        self.push(Tensor::from_parts(shape, data), &[x], || Op::RepeatLeading { times })
    }

    /// Mean over the leading axis.
    pub fn mean_leading(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let Some((&t, rest)) = xv.shape().split_first() else {
            return shape_err("mean over the leading axis of a scalar");
        };
        let width: usize = rest.iter().product();
        let mut data = vec![0.0; width];
        for chunk in xv.data().chunks_exact(width) {
            data.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
        }
        data.iter_mut().for_each(|v| *v /= t as f64);
        let shape = if rest.is_empty() { Vec::new() } else { rest.to_vec() };
        self.push(Tensor::from_parts(shape, data), &[x], || Op::MeanLeading)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, &[x], || Op::Sum)
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, op: impl Backward + 'static) -> Result<Var> {
        self.push(value, parents, || Op::Custom(Box::new(op)))
    }

    /// Gradients of the scalar `loss` with respect to every leaf created with
    /// `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                leaf_grads[id] = Some(g);
                continue;
            }
            let parents: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let contributions = self.node_backward(node, &g, &parents);
            for (p, pg) in node.parents.iter().zip(contributions) {
                if let Some(pg) = pg {
                    if self.nodes[p.0].requires_grad {
                        add_into(&mut grads[p.0], pg);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor, parents: &[&Tensor]) -> Vec<Option<Tensor>> {
        let like = |t: &Tensor, data: Vec<f64>| Some(Tensor::from_parts(t.shape().to_vec(), data));
        match &node.op {
            Op::Leaf | Op::Detached => Vec::new(),
            Op::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                vec![
                    like(a, kernels::gemm_nt(g.data(), b.data(), m, n, k)),
                    like(b, kernels::gemm_tn(a.data(), g.data(), m, k, n)),
                ]
            }
            Op::BatchMatMul => {
                let (a, b) = (parents[0], parents[1]);
                let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
                let mut da = Vec::with_capacity(a.len());
                let mut db = Vec::with_capacity(b.len());
                for t in 0..bs {
                    let at = &a.data()[t * m * k..(t + 1) * m * k];
                    let bt = &b.data()[t * k * n..(t + 1) * k * n];
                    let gt = &g.data()[t * m * n..(t + 1) * m * n];
                    da.extend(kernels::gemm_nt(gt, bt, m, n, k));
                    db.extend(kernels::gemm_tn(at, gt, m, k, n));
                }
                vec![like(a, da), like(b, db)]
            }
            Op::Transpose => {
                let s = g.shape();
                let r = s.len();
                let batch = if r == 3 { s[0] } else { 1 };
                vec![like(parents[0], kernels::transpose(g.data(), batch, s[r - 2], s[r - 1]))]
            }
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::AddBias { axis } => {
                let (outer, len, inner) = kernels::axis_strides(g.shape(), *axis);
                let mut gb = vec![0.0; len];
                for o in 0..outer {
                    for (i, acc) in gb.iter_mut().enumerate() {
                        let start = (o * len + i) * inner;
                        *acc += g.data()[start..start + inner].iter().sum::<f64>();
                    }
                }
                vec![Some(g.clone()), like(parents[1], gb)]
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                let ga = g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect();
                vec![like(a, ga), like(b, gb)]
            }
            Op::ScaleRows => {
                let (w, s) = (parents[0], parents[1]);
                let d = w.shape()[1];
                let mut gw = Vec::with_capacity(w.len());
                let mut gs = Vec::with_capacity(s.len());
                for ((grow, wrow), &sv) in g.data().chunks_exact(d).zip(w.data().chunks_exact(d)).zip(s.data()) {
                    gw.extend(grow.iter().map(|x| x * sv));
                    gs.push(grow.iter().zip(wrow).map(|(x, y)| x * y).sum());
                }
                vec![like(w, gw), like(s, gs)]
            }
            Op::Scale(c) => vec![Some(g.map(|v| v * c))],
            Op::Relu => {
                let x = parents[0];
                let gx = g.data().iter().zip(x.data()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                vec![like(x, gx)]
            }
            Op::Softmax { axis } => {
                vec![like(g, kernels::softmax_backward(node.value.data(), g.data(), g.shape(), *axis))]
            }
            Op::LayerNorm { xhat, inv_std } => {
                let (x, gamma, beta) = (parents[0], parents[1], parents[2]);
                let d = gamma.len();
                let (dx, dg, db) = kernels::layer_norm_backward(xhat, inv_std, gamma.data(), g.data(), d);
                vec![like(x, dx), like(gamma, dg), like(beta, db)]
            }
            Op::Conv1d(geom) => {
                let (x, w) = (parents[0], parents[1]);
                let (dx, dw) = kernels::conv1d_backward(x.data(), w.data(), g.data(), geom);
                vec![like(x, dx), like(w, dw)]
            }
            Op::Reshape => vec![like(parents[0], g.data().to_vec())],
            Op::SliceLast { start } => {
                let x = parents[0];
                let d = *x.shape().last().unwrap();
                let w = *g.shape().last().unwrap();
                let mut gx = vec![0.0; x.len()];
                for (dst, src) in gx.chunks_exact_mut(d).zip(g.data().chunks_exact(w)) {
                    dst[*start..start + w].copy_from_slice(src);
                }
                vec![like(x, gx)]
            }
            Op::ConcatLast { widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut offset = r * total;
                    for (buf, &w) in out.iter_mut().zip(widths) {
                        buf.extend_from_slice(&g.data()[offset..offset + w]);
                        offset += w;
                    }
                }
                parents.iter().zip(out).map(|(p, data)| like(p, data)).collect()
            }
            Op::RepeatLeading { times } => {
                let x = parents[0];
                let mut gx = vec![0.0; x.len()];
                for chunk in g.data().chunks_exact(x.len()).take(*times) {
                    gx.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                vec![like(x, gx)]
            }
            Op::MeanLeading => {
                let x = parents[0];
                let t = x.shape()[0] as f64;
                let gx = g.data().iter().map(|v| v / t).collect::<Vec<_>>().repeat(x.shape()[0]);
                vec![like(x, gx)]
            }
            Op::Sum => {
                let x = parents[0];
                let gv = g.data()[0];
                vec![like(x, vec![gv; x.len()])]
            }
            Op::Custom(op) => op.backward(g, parents, &node.value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_with_self_gives_twice_x() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn parents_precede_children() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.param(Tensor::eye(2));
        let c = tape.matmul(a, b).unwrap();
        let d = tape.relu(c).unwrap();
        let e = tape.softmax(d, 1).unwrap();
        let f = tape.sum(e).unwrap();
        for id in 0..tape.len() {
            let v = Var(id);
            assert!(tape.parents(v).iter().all(|p| p.id() < id));
        }
        assert_eq!(tape.op_name(f), "sum");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![2.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![3.0]).unwrap());
        let p = tape.mul(w, c).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::inference();
        let w = tape.param(Tensor::vector(vec![2.0]).unwrap());
        let s = tape.sum(w).unwrap();
        assert!(!tape.requires_grad(s));
        assert_eq!(tape.backward(s).unwrap().ids().count(), 0);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.add(a, x).unwrap();
        let s = tape.sum(b).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 4.0]);
    }
}

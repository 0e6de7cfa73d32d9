//! Define-by-run tape. Each op validates shapes, computes its value eagerly,
//! and records enough to replay the chain rule backwards.
//!
//! Node ids are indices into the tape; creation order is a topological order,
//! so the backward pass is a single reverse sweep.

use crate::error::NdError;
use crate::kernels as k;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    SubRow,
    MulScalar,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Relu,
    Gelu,
    Recip,
    Scale(f64),
    // Payload consumed when the node is built; kept for graph dumps.
    #[allow(dead_code)]
    AddConst(f64),
    Matmul,
    Transpose,
    Reshape,
    ConcatCols,
    SliceCols { start: usize, len: usize },
    GatherRows { indices: Vec<usize> },
    SumAll,
    MeanAll,
    SumAxis1,
    MeanAxis0,
    LayerNorm { eps: f64 },
    Softmax,
    Conv1d { stride: usize, pad: usize },
    // out_pad fixes the forward length; the saved output already encodes it,
    // so the backward never reads it.
    ConvT1d {
        stride: usize,
        pad: usize,
        #[allow(dead_code)]
        out_pad: usize,
    },
    JawRotate { center: [f64; 3], weights: Vec<f64> },
    CeLogits { targets: Vec<usize> },
}

struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of one scalar loss w.r.t. every differentiable node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id` if the loss reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, with an explicit zero tensor when the loss did not
    /// depend on it.
    pub fn get_or_zeros(&self, id: NodeId, graph: &Graph) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(graph.value(id).shape()),
        }
    }
}

/// The tape. Build data/parameter leaves with [`Graph::input`] (differentiable)
/// or [`Graph::constant`] (frozen), apply ops, then call [`Graph::backward`]
/// on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// Non-differentiable leaf; backward never produces a gradient for it and
    /// never propagates through subgraphs that depend only on constants.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, false)
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite op output");
        self.nodes.push(Node {
            op,
            parents,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, parents, value, rg)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NdError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NdError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, a: NodeId) -> Result<(usize, usize), NdError> {
        self.value(a)
            .dims2()
            .ok_or_else(|| NdError::invalid(op, format!("expected 1-D or 2-D, got {:?}", self.value(a).shape())))
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        self.same_shape("add", a, b)?;
        let v = k::ew(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push_op(Op::Add, vec![a, b], v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        self.same_shape("sub", a, b)?;
        let v = k::ew(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push_op(Op::Sub, vec![a, b], v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        self.same_shape("mul", a, b)?;
        let v = k::ew(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push_op(Op::Mul, vec![a, b], v))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        self.same_shape("div", a, b)?;
        let v = k::ew(self.value(a), self.value(b), |x, y| x / y);
        if !v.is_finite() {
            return Err(NdError::NonFinite {
                context: "div output".into(),
            });
        }
        Ok(self.push_op(Op::Div, vec![a, b], v))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), |x| -x);
        Ok(self.push_op(Op::Neg, vec![a], v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), f64::exp);
        if !v.is_finite() {
            return Err(NdError::NonFinite {
                context: "exp output".into(),
            });
        }
        Ok(self.push_op(Op::Exp, vec![a], v))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        if self.value(a).data().iter().any(|v| *v <= 0.0) {
            return Err(NdError::invalid("ln", "requires strictly positive input"));
        }
        let v = k::map(self.value(a), f64::ln);
        Ok(self.push_op(Op::Ln, vec![a], v))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        if self.value(a).data().iter().any(|v| *v < 0.0) {
            return Err(NdError::invalid("sqrt", "requires non-negative input"));
        }
        let v = k::map(self.value(a), f64::sqrt);
        Ok(self.push_op(Op::Sqrt, vec![a], v))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), f64::tanh);
        Ok(self.push_op(Op::Tanh, vec![a], v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), |x| x.max(0.0));
        Ok(self.push_op(Op::Relu, vec![a], v))
    }

    /// Tanh-form gaussian error linear unit.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), k::gelu);
        Ok(self.push_op(Op::Gelu, vec![a], v))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), |x| 1.0 / x);
        if !v.is_finite() {
            return Err(NdError::NonFinite {
                context: "recip output".into(),
            });
        }
        Ok(self.push_op(Op::Recip, vec![a], v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, NdError> {
        let v = k::scale(self.value(a), c);
        Ok(self.push_op(Op::Scale(c), vec![a], v))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId, NdError> {
        let v = k::map(self.value(a), |x| x + c);
        Ok(self.push_op(Op::AddConst(c), vec![a], v))
    }

    // ── Broadcast ───────────────────────────────────────────────────────

    /// `[n, d] + [d]`, row vector added to each row.
    pub fn add_row(&mut self, x: NodeId, r: NodeId) -> Result<NodeId, NdError> {
        let (_, d) = self.dims2("add_row", x)?;
        if self.value(r).shape() != [d] {
            return Err(NdError::shape("add_row", self.value(x).shape(), self.value(r).shape()));
        }
        let v = k::add_row(self.value(x), self.value(r), 1.0);
        Ok(self.push_op(Op::AddRow, vec![x, r], v))
    }

    /// `[n, d] - [d]`.
    pub fn sub_row(&mut self, x: NodeId, r: NodeId) -> Result<NodeId, NdError> {
        let (_, d) = self.dims2("sub_row", x)?;
        if self.value(r).shape() != [d] {
            return Err(NdError::shape("sub_row", self.value(x).shape(), self.value(r).shape()));
        }
        let v = k::add_row(self.value(x), self.value(r), -1.0);
        Ok(self.push_op(Op::SubRow, vec![x, r], v))
    }

    /// Tensor times a shape-`[1]` node, broadcast over all elements.
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, NdError> {
        if self.value(s).numel() != 1 {
            return Err(NdError::invalid("mul_scalar_node", "scalar operand must have one element"));
        }
        let c = self.value(s).item();
        let v = k::scale(self.value(x), c);
        Ok(self.push_op(Op::MulScalar, vec![x, s], v))
    }

    // ── Matrix ──────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        let (_, ka) = self.dims2("matmul", a)?;
        let (kb, _) = self.dims2("matmul", b)?;
        if ka != kb {
            return Err(NdError::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let v = k::matmul(self.value(a), self.value(b));
        Ok(self.push_op(Op::Matmul, vec![a, b], v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        self.dims2("transpose", a)?;
        let v = k::transpose(self.value(a));
        Ok(self.push_op(Op::Transpose, vec![a], v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NdError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(NdError::shape("reshape", self.value(a).shape(), shape));
        }
        let v = Tensor::new_unchecked(shape.to_vec(), self.value(a).data().to_vec());
        Ok(self.push_op(Op::Reshape, vec![a], v))
    }

    /// Concatenates 2-D nodes along columns; all must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NdError> {
        if parts.is_empty() {
            return Err(NdError::invalid("concat_cols", "empty part list"));
        }
        let (n, _) = self.dims2("concat_cols", parts[0])?;
        for p in parts {
            let (np, _) = self.dims2("concat_cols", *p)?;
            if np != n {
                return Err(NdError::shape("concat_cols", self.value(parts[0]).shape(), self.value(*p).shape()));
            }
        }
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = k::concat_cols(&vals);
        Ok(self.push_op(Op::ConcatCols, parts.to_vec(), v))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NdError> {
        let (_, d) = self.dims2("slice_cols", x)?;
        if start + len > d || len == 0 {
            return Err(NdError::invalid(
                "slice_cols",
                format!("slice {start}..{} out of {d} columns", start + len),
            ));
        }
        let v = k::slice_cols(self.value(x), start, len);
        Ok(self.push_op(Op::SliceCols { start, len }, vec![x], v))
    }

    /// Selects rows by index; duplicates allowed, gradients scatter-add.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, NdError> {
        let (n, _) = self.dims2("gather_rows", x)?;
        if indices.is_empty() {
            return Err(NdError::invalid("gather_rows", "empty index list"));
        }
        if let Some(bad) = indices.iter().find(|i| **i >= n) {
            return Err(NdError::invalid("gather_rows", format!("row {bad} out of {n}")));
        }
        let v = k::gather_rows(self.value(x), indices);
        Ok(self.push_op(
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![x],
            v,
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.push_op(Op::SumAll, vec![a], v))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(NdError::invalid("mean_all", "empty tensor"));
        }
        let v = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n as f64);
        Ok(self.push_op(Op::MeanAll, vec![a], v))
    }

    /// Row sums: `[n, d] -> [n]`.
    pub fn sum_axis1(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        self.dims2("sum_axis1", a)?;
        let v = k::sum_axis1(self.value(a));
        Ok(self.push_op(Op::SumAxis1, vec![a], v))
    }

    /// Column means: `[n, d] -> [d]`.
    pub fn mean_axis0(&mut self, a: NodeId) -> Result<NodeId, NdError> {
        let (n, _) = self.dims2("mean_axis0", a)?;
        if n == 0 {
            return Err(NdError::invalid("mean_axis0", "empty tensor"));
        }
        let v = k::mean_axis0(self.value(a));
        Ok(self.push_op(Op::MeanAxis0, vec![a], v))
    }

    // ── Normalization and attention pieces ──────────────────────────────

    /// Per-row layer normalization with affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId, NdError> {
        let (_, d) = self.dims2("layer_norm", x)?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(NdError::shape("layer_norm", self.value(x).shape(), self.value(gamma).shape()));
        }
        let v = k::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps);
        Ok(self.push_op(Op::LayerNorm { eps }, vec![x, gamma, beta], v))
    }

    /// Softmax over the last axis of a 2-D node.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, NdError> {
        self.dims2("softmax", x)?;
        let v = k::softmax(self.value(x));
        Ok(self.push_op(Op::Softmax, vec![x], v))
    }

    /// Mean cross-entropy between rows of logits and integer targets.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId, NdError> {
        let (n, c) = self.dims2("cross_entropy_logits", logits)?;
        if targets.len() != n {
            return Err(NdError::invalid(
                "cross_entropy_logits",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|t| **t >= c) {
            return Err(NdError::invalid("cross_entropy_logits", format!("class {bad} out of {c}")));
        }
        let v = k::ce_logits(self.value(logits), targets);
        Ok(self.push_op(
            Op::CeLogits {
                targets: targets.to_vec(),
            },
            vec![logits],
            v,
        ))
    }

    // ── Temporal convolution ────────────────────────────────────────────

    /// `x: [T, Cin]`, `w: [K, Cin, Cout]`, zero-padded strided convolution
    /// over the first axis.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId, NdError> {
        let (t, cin) = self.dims2("conv1d", x)?;
        let ws = self.value(w).shape();
        if ws.len() != 3 || ws[1] != cin {
            return Err(NdError::shape("conv1d", self.value(x).shape(), ws));
        }
        if stride == 0 {
            return Err(NdError::invalid("conv1d", "stride must be positive"));
        }
        match k::conv1d_out_len(t, ws[0], stride, pad) {
            Some(l) if l > 0 => {}
            _ => {
                return Err(NdError::invalid(
                    "conv1d",
                    format!("input length {t} too short for kernel {} pad {pad}", ws[0]),
                ))
            }
        }
        let v = k::conv1d(self.value(x), self.value(w), stride, pad);
        Ok(self.push_op(Op::Conv1d { stride, pad }, vec![x, w], v))
    }

    /// Transposed counterpart of [`Graph::conv1d`]; upsamples the first axis.
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId, NdError> {
        let (t, cin) = self.dims2("conv_transpose1d", x)?;
        let ws = self.value(w).shape();
        if ws.len() != 3 || ws[1] != cin {
            return Err(NdError::shape("conv_transpose1d", self.value(x).shape(), ws));
        }
        if stride == 0 || out_pad >= stride.max(1) + 1 {
            return Err(NdError::invalid("conv_transpose1d", "invalid stride/output padding"));
        }
        if t == 0 || (t - 1) * stride + ws[0] + out_pad <= 2 * pad {
            return Err(NdError::invalid("conv_transpose1d", "output would be empty"));
        }
        let v = k::conv_t1d(self.value(x), self.value(w), stride, pad, out_pad);
        Ok(self.push_op(Op::ConvT1d { stride, pad, out_pad }, vec![x, w], v))
    }

    // ── Weighted pivot rotation ─────────────────────────────────────────

    /// Rotates `[n, 3]` points about a fixed pivot by an axis-angle node,
    /// blended per point by fixed weights in `[0, 1]`.
    pub fn jaw_rotate(
        &mut self,
        points: NodeId,
        theta: NodeId,
        center: [f64; 3],
        weights: &[f64],
    ) -> Result<NodeId, NdError> {
        let ps = self.value(points).shape();
        if ps.len() != 2 || ps[1] != 3 {
            return Err(NdError::invalid("jaw_rotate", format!("points must be [n, 3], got {ps:?}")));
        }
        if self.value(theta).numel() != 3 {
            return Err(NdError::invalid("jaw_rotate", "axis-angle must have 3 elements"));
        }
        if weights.len() != ps[0] {
            return Err(NdError::invalid(
                "jaw_rotate",
                format!("{} weights for {} points", weights.len(), ps[0]),
            ));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(NdError::invalid("jaw_rotate", "weights must lie in [0, 1]"));
        }
        let v = k::jaw_rotate(self.value(points), self.value(theta), center, weights);
        Ok(self.push_op(
            Op::JawRotate {
                center,
                weights: weights.to_vec(),
            },
            vec![points, theta],
            v,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients exist for every node the
    /// loss depends on; leaves the loss ignores read back as exact zeros via
    /// [`Gradients::get_or_zeros`].
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NdError> {
        if self.value(loss).numel() != 1 {
            return Err(NdError::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        if !self.value(loss).is_finite() {
            return Err(NdError::NonFinite {
                context: "loss value".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = grads[i].take().unwrap();
            let parent_grads = self.vjp(i, &g)?;
            grads[i] = Some(g);
            let parents = self.nodes[i].parents.clone();
            for (pid, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[pid.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let node = &self.nodes[i];
        let needs: Vec<bool> = node
            .parents
            .iter()
            .map(|p| self.nodes[p.0].requires_grad)
            .collect();
        let pv = |j: usize| &self.nodes[node.parents[j].0].value;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ],
            Op::Sub => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| k::map(g, |x| -x)),
            ],
            Op::Mul => vec![
                needs[0].then(|| k::ew(g, pv(1), |a, b| a * b)),
                needs[1].then(|| k::ew(g, pv(0), |a, b| a * b)),
            ],
            Op::Div => vec![
                needs[0].then(|| k::ew(g, pv(1), |a, b| a / b)),
                needs[1].then(|| {
                    let mut t = k::ew(pv(0), pv(1), |a, b| -a / (b * b));
                    for (x, gg) in t.data_mut().iter_mut().zip(g.data()) {
                        *x *= gg;
                    }
                    t
                }),
            ],
            Op::AddRow | Op::SubRow => {
                let sign = if matches!(node.op, Op::AddRow) { 1.0 } else { -1.0 };
                let d = pv(1).numel();
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| k::sum_axis0_scaled(g, d, sign)),
                ]
            }
            Op::MulScalar => {
                let c = pv(1).item();
                vec![
                    needs[0].then(|| k::scale(g, c)),
                    needs[1].then(|| {
                        Tensor::scalar(g.data().iter().zip(pv(0).data()).map(|(a, b)| a * b).sum())
                    }),
                ]
            }
            Op::Neg => vec![needs[0].then(|| k::map(g, |x| -x))],
            Op::Exp => vec![needs[0].then(|| k::ew(g, &node.value, |a, y| a * y))],
            Op::Ln => vec![needs[0].then(|| k::ew(g, pv(0), |a, x| a / x))],
            Op::Sqrt => vec![needs[0].then(|| k::ew(g, &node.value, |a, y| a / (2.0 * y)))],
            Op::Tanh => vec![needs[0].then(|| k::ew(g, &node.value, |a, y| a * (1.0 - y * y)))],
            Op::Relu => vec![needs[0].then(|| k::ew(g, pv(0), |a, x| if x > 0.0 { a } else { 0.0 }))],
            Op::Gelu => vec![needs[0].then(|| k::ew(g, pv(0), |a, x| a * k::gelu_dx(x)))],
            Op::Recip => vec![needs[0].then(|| k::ew(g, &node.value, |a, y| -a * y * y))],
            Op::Scale(c) => vec![needs[0].then(|| k::scale(g, *c))],
            Op::AddConst(_) => vec![needs[0].then(|| g.clone())],
            Op::Matmul => vec![
                needs[0].then(|| k::matmul_nt(g, pv(1))),
                needs[1].then(|| k::matmul_tn(pv(0), g)),
            ],
            Op::Transpose => vec![needs[0].then(|| k::transpose(g))],
            Op::Reshape => vec![needs[0].then(|| {
                Tensor::new_unchecked(pv(0).shape().to_vec(), g.data().to_vec())
            })],
            Op::ConcatCols => {
                let mut out = Vec::with_capacity(node.parents.len());
                let mut at = 0;
                for (j, need) in needs.iter().enumerate() {
                    let (_, d) = pv(j).dims2().unwrap();
                    out.push(need.then(|| k::slice_cols(g, at, d)));
                    at += d;
                }
                out
            }
            Op::SliceCols { start, len } => vec![needs[0].then(|| {
                let (n, d) = pv(0).dims2().unwrap();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    dx[i * d + start..i * d + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                Tensor::new_unchecked(pv(0).shape().to_vec(), dx)
            })],
            Op::GatherRows { indices } => vec![needs[0].then(|| {
                let (n, d) = pv(0).dims2().unwrap();
                let mut dx = vec![0.0; n * d];
                for (i, &r) in indices.iter().enumerate() {
                    for j in 0..d {
                        dx[r * d + j] += g.data()[i * d + j];
                    }
                }
                Tensor::new_unchecked(pv(0).shape().to_vec(), dx)
            })],
            Op::SumAll => vec![needs[0].then(|| Tensor::filled(pv(0).shape(), g.item()))],
            Op::MeanAll => vec![needs[0].then(|| {
                Tensor::filled(pv(0).shape(), g.item() / pv(0).numel() as f64)
            })],
            Op::SumAxis1 => vec![needs[0].then(|| {
                let (n, d) = pv(0).dims2().unwrap();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = g.data()[i];
                    }
                }
                Tensor::new_unchecked(pv(0).shape().to_vec(), dx)
            })],
            Op::MeanAxis0 => vec![needs[0].then(|| {
                let (n, d) = pv(0).dims2().unwrap();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = g.data()[j] / n as f64;
                    }
                }
                Tensor::new_unchecked(pv(0).shape().to_vec(), dx)
            })],
            Op::LayerNorm { eps } => {
                let [dx, dgamma, dbeta] =
                    k::vjp_layer_norm(pv(0), pv(1), *eps, g, [needs[0], needs[1], needs[2]]);
                vec![dx, dgamma, dbeta]
            }
            Op::Softmax => vec![needs[0].then(|| k::vjp_softmax(&node.value, g))],
            Op::CeLogits { targets } => vec![needs[0].then(|| k::vjp_ce_logits(pv(0), targets, g))],
            Op::Conv1d { stride, pad } => {
                let [dx, dw] = k::vjp_conv1d(pv(0), pv(1), *stride, *pad, g, [needs[0], needs[1]]);
                vec![dx, dw]
            }
            Op::ConvT1d { stride, pad, .. } => {
                let [dx, dw] = k::vjp_conv_t1d(pv(0), pv(1), *stride, *pad, g, [needs[0], needs[1]]);
                vec![dx, dw]
            }
            Op::JawRotate { center, weights } => {
                let [dp, dth] =
                    k::vjp_jaw_rotate(pv(0), pv(1), *center, weights, g, [needs[0], needs[1]]);
                vec![dp, dth]
            }
        };
        Ok(out)
    }
}

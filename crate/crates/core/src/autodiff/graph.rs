use serde::{Deserialize, Serialize};

use super::tensor::{matmul_raw, Tensor};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Strength of the gradient reversal applied in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    coefficient: f64,
}

impl GrlConfig {
    pub fn new(coefficient: f64) -> Result<Self> {
        if !(coefficient >= 0.0) || !coefficient.is_finite() {
            return Err(AutodiffError::Domain {
                op: "grl",
                detail: format!("coefficient must be a finite nonnegative real, got {coefficient}"),
            });
        }
        Ok(Self { coefficient })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

/// Every operation the engine can record.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `(m×k) · (k×n)`.
    Matmul,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Elementwise quotient.
    Div,
    /// `(m×n) + (n)` with the vector added to every row.
    AddRow,
    ScalarMul(f64),
    AddScalar(f64),
    Neg,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    /// `x^p` for `x ≥ 0`.
    Powf(f64),
    Abs,
    /// Standard normal CDF.
    NormalCdf,
    /// `max(x, lo)`.
    ClampMin(f64),
    /// `min(x, hi)`.
    ClampMax(f64),
    Sum,
    Mean,
    /// `(m×n) → (1×n)`.
    ColumnSum,
    RowSoftmax,
    /// Stacks any number of matrices with equal column counts.
    ConcatRows,
    SliceRows { start: usize, end: usize },
    SliceCols { start: usize, end: usize },
    Reshape(Vec<usize>),
    Transpose,
    /// Identity forward, `-coefficient * upstream` backward.
    Grl(GrlConfig),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::AddRow => "add_row",
            OpKind::ScalarMul(_) => "scalar_mul",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Neg => "neg",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Powf(_) => "powf",
            OpKind::Abs => "abs",
            OpKind::NormalCdf => "normal_cdf",
            OpKind::ClampMin(_) => "clamp_min",
            OpKind::ClampMax(_) => "clamp_max",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::ColumnSum => "column_sum",
            OpKind::RowSoftmax => "row_softmax",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Grl(_) => "grl",
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Option<OpKind>,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

/// Append-only computation graph.
///
/// Nodes only reference earlier nodes, so insertion order is a topological
/// order and the graph is acyclic by construction.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(AutodiffError::RankMismatch {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
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

    fn push(&mut self, value: Tensor, op: Option<OpKind>, parents: Vec<NodeId>, rg: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            parents,
            requires_grad: rg,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, None, Vec::new(), true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, None, Vec::new(), false)
    }

    /// A constant copy of `id`'s current value; gradients stop here.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity_ok = match kind {
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::AddRow => {
                inputs.len() == 2
            }
            OpKind::ConcatRows => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(AutodiffError::Arity {
                op: kind.name(),
                got: inputs.len(),
            });
        }
        let value = self.forward_value(&kind, inputs)?;
        let rg = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, Some(kind), inputs.to_vec(), rg))
    }

    fn forward_value(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<Tensor> {
        let a = &self.nodes[inputs[0].0].value;
        let b = inputs.get(1).map(|i| &self.nodes[i.0].value);
        let out = match kind {
            OpKind::Matmul => {
                let b = b.expect("arity checked");
                require_rank2("matmul", a)?;
                require_rank2("matmul", b)?;
                if a.cols() != b.rows() {
                    return Err(mismatch("matmul", a, b));
                }
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))?
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let b = b.expect("arity checked");
                if a.shape() != b.shape() {
                    return Err(mismatch(kind.name(), a, b));
                }
                match kind {
                    OpKind::Add => a.zip_map(b, |x, y| x + y),
                    OpKind::Sub => a.zip_map(b, |x, y| x - y),
                    OpKind::Mul => a.zip_map(b, |x, y| x * y),
                    _ => {
                        if b.data().iter().any(|&y| y == 0.0) {
                            return Err(AutodiffError::Domain {
                                op: "div",
                                detail: "division by zero".into(),
                            });
                        }
                        a.zip_map(b, |x, y| x / y)
                    }
                }
            }
            OpKind::AddRow => {
                let b = b.expect("arity checked");
                require_rank2("add_row", a)?;
                if b.len() != a.cols() || (b.rank() == 2 && b.rows() != 1) || b.rank() > 2 {
                    return Err(mismatch("add_row", a, b));
                }
                let c = a.cols();
                let mut out = a.clone();
                for row in out.data_mut().chunks_mut(c) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                out
            }
            OpKind::ScalarMul(c) => a.map(|x| c * x),
            OpKind::AddScalar(c) => a.map(|x| x + c),
            OpKind::Neg => a.map(|x| -x),
            OpKind::Sigmoid => a.map(sigmoid),
            OpKind::Relu => a.map(|x| x.max(0.0)),
            OpKind::Exp => a.map(f64::exp),
            OpKind::Log => {
                if let Some(&bad) = a.data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(AutodiffError::Domain {
                        op: "log",
                        detail: format!("input {bad} is not strictly positive"),
                    });
                }
                a.map(f64::ln)
            }
            OpKind::Sqrt => {
                if let Some(&bad) = a.data().iter().find(|&&x| !(x >= 0.0)) {
                    return Err(AutodiffError::Domain {
                        op: "sqrt",
                        detail: format!("input {bad} is negative"),
                    });
                }
                a.map(f64::sqrt)
            }
            OpKind::Square => a.map(|x| x * x),
            OpKind::Powf(p) => {
                if let Some(&bad) = a.data().iter().find(|&&x| !(x >= 0.0)) {
                    return Err(AutodiffError::Domain {
                        op: "powf",
                        detail: format!("input {bad} is negative"),
                    });
                }
                let p = *p;
                a.map(|x| x.powf(p))
            }
            OpKind::Abs => a.map(f64::abs),
            OpKind::NormalCdf => a.map(normal_cdf),
            OpKind::ClampMin(lo) => a.map(|x| x.max(*lo)),
            OpKind::ClampMax(hi) => a.map(|x| x.min(*hi)),
            OpKind::Sum => Tensor::scalar(a.sum()),
            OpKind::Mean => Tensor::scalar(a.sum() / a.len() as f64),
            OpKind::ColumnSum => {
                require_rank2("column_sum", a)?;
                let c = a.cols();
                let mut out = vec![0.0; c];
                for row in a.data().chunks(c) {
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            OpKind::RowSoftmax => {
                require_rank2("row_softmax", a)?;
                let c = a.cols();
                let mut out = a.clone();
                for row in out.data_mut().chunks_mut(c) {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - m).exp();
                        z += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= z;
                    }
                }
                out
            }
            OpKind::ConcatRows => {
                require_rank2("concat_rows", a)?;
                let c = a.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for id in inputs {
                    let t = &self.nodes[id.0].value;
                    require_rank2("concat_rows", t)?;
                    if t.cols() != c {
                        return Err(mismatch("concat_rows", a, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, c, data)?
            }
            OpKind::SliceRows { start, end } => {
                require_rank2("slice_rows", a)?;
                if start >= end || *end > a.rows() {
                    return Err(AutodiffError::Domain {
                        op: "slice_rows",
                        detail: format!("range {start}..{end} invalid for shape {:?}", a.shape()),
                    });
                }
                let c = a.cols();
                Tensor::matrix(end - start, c, a.data()[start * c..end * c].to_vec())?
            }
            OpKind::SliceCols { start, end } => {
                require_rank2("slice_cols", a)?;
                if start >= end || *end > a.cols() {
                    return Err(AutodiffError::Domain {
                        op: "slice_cols",
                        detail: format!("range {start}..{end} invalid for shape {:?}", a.shape()),
                    });
                }
                let w = end - start;
                let mut data = Vec::with_capacity(a.rows() * w);
                for r in 0..a.rows() {
                    data.extend_from_slice(&a.row(r)[*start..*end]);
                }
                Tensor::matrix(a.rows(), w, data)?
            }
            OpKind::Reshape(shape) => {
                let n: usize = shape.iter().product();
                if n != a.len() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "reshape",
                        lhs: a.shape().to_vec(),
                        rhs: shape.clone(),
                    });
                }
                a.reshaped(shape.clone())?
            }
            OpKind::Transpose => {
                require_rank2("transpose", a)?;
                a.transposed()
            }
            OpKind::Grl(_) => a.clone(),
        };
        Ok(out)
    }

    /// Reverse-mode sweep from a scalar `root`, accumulating into every
    /// reachable node that requires gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_shape = self.nodes[root.0].value.shape().to_vec();
        if !self.nodes[root.0].value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot { shape: root_shape });
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        // Upstream gradients for this sweep only; accumulated into node.grad at the end.
        let mut upstream: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        upstream[root.0] = Some(Tensor::ones(root_shape));
        for i in (0..=root.0).rev() {
            let Some(g) = upstream[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(op) = &node.op {
                let contributions = self.vjp(op, &node.parents, &node.value, &g);
                for (pid, contrib) in node.parents.iter().zip(contributions) {
                    if !self.nodes[pid.0].requires_grad {
                        continue;
                    }
                    if let Some(c) = contrib {
                        match &mut upstream[pid.0] {
                            Some(acc) => acc.add_assign(&c),
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node with respect to each parent.
    fn vjp(&self, op: &OpKind, parents: &[NodeId], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let val = |k: usize| &self.nodes[parents[k].0].value;
        let needs = |k: usize| self.nodes[parents[k].0].requires_grad;
        let a = val(0);
        match op {
            OpKind::Matmul => {
                let b = val(1);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let da = needs(0).then(|| {
                    let bt = b.transposed();
                    Tensor::matrix(m, k, matmul_raw(g.data(), bt.data(), m, n, k)).expect("shape")
                });
                let db = needs(1).then(|| {
                    let at = a.transposed();
                    Tensor::matrix(k, n, matmul_raw(at.data(), g.data(), k, m, n)).expect("shape")
                });
                vec![da, db]
            }
            OpKind::Add => vec![Some(g.clone()), Some(g.clone())],
            OpKind::Sub => vec![Some(g.clone()), Some(g.map(|x| -x))],
            OpKind::Mul => {
                let b = val(1);
                vec![
                    needs(0).then(|| g.zip_map(b, |gv, bv| gv * bv)),
                    needs(1).then(|| g.zip_map(a, |gv, av| gv * av)),
                ]
            }
            OpKind::Div => {
                let b = val(1);
                vec![
                    needs(0).then(|| g.zip_map(b, |gv, bv| gv / bv)),
                    needs(1).then(|| {
                        let mut t = g.zip_map(out, |gv, ov| gv * ov);
                        for (x, &bv) in t.data_mut().iter_mut().zip(b.data()) {
                            *x = -*x / bv;
                        }
                        t
                    }),
                ]
            }
            OpKind::AddRow => {
                let b = val(1);
                let db = needs(1).then(|| {
                    let c = g.cols();
                    let mut acc = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, &x) in acc.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    Tensor::new(b.shape().to_vec(), acc).expect("shape")
                });
                vec![Some(g.clone()), db]
            }
            OpKind::ScalarMul(c) => vec![Some(g.map(|x| c * x))],
            OpKind::AddScalar(_) => vec![Some(g.clone())],
            OpKind::Neg => vec![Some(g.map(|x| -x))],
            OpKind::Sigmoid => vec![Some(g.zip_map(out, |gv, y| gv * y * (1.0 - y)))],
            OpKind::Relu => vec![Some(g.zip_map(a, |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            OpKind::Exp => vec![Some(g.zip_map(out, |gv, y| gv * y))],
            OpKind::Log => vec![Some(g.zip_map(a, |gv, x| gv / x))],
            OpKind::Sqrt => vec![Some(g.zip_map(out, |gv, y| gv / (2.0 * y)))],
            OpKind::Square => vec![Some(g.zip_map(a, |gv, x| 2.0 * x * gv))],
            OpKind::Powf(p) => {
                let p = *p;
                if p == 0.0 {
                    vec![Some(Tensor::zeros_like(g))]
                } else {
                    vec![Some(g.zip_map(a, |gv, x| gv * p * x.powf(p - 1.0)))]
                }
            }
            OpKind::Abs => vec![Some(g.zip_map(a, |gv, x| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }))],
            OpKind::NormalCdf => vec![Some(g.zip_map(a, |gv, x| gv * normal_pdf(x)))],
            OpKind::ClampMin(lo) => vec![Some(g.zip_map(a, |gv, x| if x >= *lo { gv } else { 0.0 }))],
            OpKind::ClampMax(hi) => vec![Some(g.zip_map(a, |gv, x| if x <= *hi { gv } else { 0.0 }))],
            OpKind::Sum => vec![Some(Tensor::full(a.shape().to_vec(), g.item()))],
            OpKind::Mean => vec![Some(Tensor::full(a.shape().to_vec(), g.item() / a.len() as f64))],
            OpKind::ColumnSum => {
                let mut data = Vec::with_capacity(a.len());
                for _ in 0..a.rows() {
                    data.extend_from_slice(g.data());
                }
                vec![Some(Tensor::new(a.shape().to_vec(), data).expect("shape"))]
            }
            OpKind::RowSoftmax => {
                let c = out.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(gv, y)| gv * y).sum();
                    for (dv, &y) in drow.iter_mut().zip(yrow) {
                        *dv = y * (*dv - dot);
                    }
                }
                vec![Some(d)]
            }
            OpKind::ConcatRows => {
                let c = g.cols();
                let mut offset = 0;
                parents
                    .iter()
                    .map(|p| {
                        let t = &self.nodes[p.0].value;
                        let n = t.rows() * c;
                        let piece = Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())
                            .expect("shape");
                        offset += n;
                        Some(piece)
                    })
                    .collect()
            }
            OpKind::SliceRows { start, .. } => {
                let c = a.cols();
                let mut d = Tensor::zeros_like(a);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                vec![Some(d)]
            }
            OpKind::SliceCols { start, end } => {
                let c = a.cols();
                let w = end - start;
                let mut d = Tensor::zeros_like(a);
                for r in 0..a.rows() {
                    d.data_mut()[r * c + start..r * c + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![Some(d)]
            }
            OpKind::Reshape(_) => vec![Some(g.reshaped(a.shape().to_vec()).expect("shape"))],
            OpKind::Transpose => vec![Some(g.transposed())],
            OpKind::Grl(cfg) => {
                let c = cfg.coefficient();
                vec![Some(g.map(|x| -c * x))]
            }
        }
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Div, &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.apply(OpKind::AddRow, &[a, row])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::ScalarMul(c), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::AddScalar(c), &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Neg, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sqrt, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Square, &[a])
    }

    pub fn powf(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.apply(OpKind::Powf(p), &[a])
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Abs, &[a])
    }

    pub fn normal_cdf(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::NormalCdf, &[a])
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> Result<NodeId> {
        self.apply(OpKind::ClampMin(lo), &[a])
    }

    pub fn clamp_max(&mut self, a: NodeId, hi: f64) -> Result<NodeId> {
        self.apply(OpKind::ClampMax(hi), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn column_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::ColumnSum, &[a])
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::RowSoftmax, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(OpKind::SliceRows { start, end }, &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(OpKind::SliceCols { start, end }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::Reshape(shape), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn grl(&mut self, a: NodeId, cfg: GrlConfig) -> Result<NodeId> {
        self.apply(OpKind::Grl(cfg), &[a])
    }

    /// Element `(row, col)` of a matrix node as a `1×1` node.
    pub fn element(&mut self, a: NodeId, row: usize, col: usize) -> Result<NodeId> {
        let r = self.slice_rows(a, row, row + 1)?;
        self.slice_cols(r, col, col + 1)
    }
}

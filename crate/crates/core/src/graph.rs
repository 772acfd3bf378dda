//! Reverse-mode automatic differentiation on an explicit computation graph.
//!
//! A [`Graph`] is a pure function: named leaves in, node values out. Leaves
//! are declared either as inputs (no gradient) or parameters (gradient
//! tracked). Graphs are rebuilt or re-bound per minibatch; there is no
//! persistent tape across steps.
//!
//! The primitive set is the minimal closure needed by the model losses:
//! matmul, transpose, add, broadcast bias add, elementwise multiply,
//! sigmoid, tanh, exp, clamped log, square, scalar affine, sum/mean,
//! row sum, row log-sum-exp, column concat, clamp, stop-gradient.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to `log` inputs so Bernoulli likelihoods never hit -inf.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Param(String),
    Const(Tensor),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// `[m,n] + [n]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// `[m,n] -> [m]`, sum over the feature axis.
    RowSum(NodeId),
    /// `[m,n] -> [m]`, numerically stable log-sum-exp over the feature axis.
    RowLogSumExp(NodeId),
    /// Concat along the feature axis.
    Concat(Vec<NodeId>),
    /// Hard clamp; gradient is passed through strictly inside the interval.
    Clamp(NodeId, f64, f64),
    StopGrad(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::RowLogSumExp(_) => "row_lse",
            Op::Concat(_) => "concat",
            Op::Clamp(..) => "clamp",
            Op::StopGrad(_) => "stop_grad",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// True if a parameter leaf is reachable through this node.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape, needs_grad });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn leaf(&mut self, name: &str, shape: &[usize], param: bool) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let op = if param { Op::Param(name.to_string()) } else { Op::Input(name.to_string()) };
        let id = self.push(op, shape.to_vec(), param);
        self.leaves.insert(name.to_string(), id);
        id
    }

    /// Declare a non-differentiated input leaf (data, noise, dropout masks).
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, false)
    }

    /// Declare a parameter leaf; gradients are returned for these.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, true)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Const(t), shape, false)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .leaves
            .iter()
            .filter(|(_, &id)| matches!(self.nodes[id.0].op, Op::Param(_)))
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }

    fn mismatch(&self, op: &str, detail: String) -> Error {
        Error::ShapeMismatch { op: op.into(), detail }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]], ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 2 {
            return Err(self.mismatch("transpose", format!("{:?}", sa)));
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(Op::Transpose(a), vec![sa[1], sa[0]], ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        if sa != sb {
            return Err(self.mismatch("add", format!("{:?} vs {:?}", sa, sb)));
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(Op::Add(a, b), sa, ng))
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(self.mismatch("add_bias", format!("{:?} + {:?}", sa, sb)));
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(Op::AddBias(a, b), sa, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        if sa != sb {
            return Err(self.mismatch("mul", format!("{:?} vs {:?}", sa, sb)));
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(Op::Mul(a, b), sa, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (s, ng) = (self.shape_of(a).to_vec(), self.node(a).needs_grad);
        self.push(Op::Scale(a, c), s, ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let (s, ng) = (self.shape_of(a).to_vec(), self.node(a).needs_grad);
        self.push(Op::AddScalar(a, c), s, ng)
    }

    fn unary(&mut self, a: NodeId, mk: impl FnOnce(NodeId) -> Op) -> NodeId {
        let (s, ng) = (self.shape_of(a).to_vec(), self.node(a).needs_grad);
        self.push(mk(a), s, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp)
    }

    /// Natural log with the input floored at [`LOG_CLAMP`].
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |a| Op::Clamp(a, lo, hi))
    }

    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let s = self.shape_of(a).to_vec();
        self.push(Op::StopGrad(a), s, false)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let ng = self.node(a).needs_grad;
        self.push(Op::Sum(a), vec![], ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let ng = self.node(a).needs_grad;
        self.push(Op::Mean(a), vec![], ng)
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 2 {
            return Err(self.mismatch("row_sum", format!("{:?}", sa)));
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(Op::RowSum(a), vec![sa[0]], ng))
    }

    pub fn row_log_sum_exp(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 2 {
            return Err(self.mismatch("row_lse", format!("{:?}", sa)));
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(Op::RowLogSumExp(a), vec![sa[0]], ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Graph("concat of zero nodes".into()));
        }
        let m = self.shape_of(parts[0]).first().copied().unwrap_or(0);
        let mut cols = 0;
        let mut ng = false;
        for &p in parts {
            let s = self.shape_of(p).to_vec();
            if s.len() != 2 || s[0] != m {
                return Err(self.mismatch("concat", format!("{:?} with leading dim {}", s, m)));
            }
            cols += s[1];
            ng |= self.node(p).needs_grad;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), vec![m, cols], ng))
    }

    /// Evaluate every node given leaf bindings.
    pub fn forward(&self, bindings: &HashMap<String, Tensor>) -> Result<Evaluation> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(idx, node, &values, bindings)?;
            if v.has_nan() {
                return Err(Error::NanDetected { node: idx, op: node.op.name().into() });
            }
            values.push(v);
        }
        Ok(Evaluation { values })
    }

    fn eval_node(
        &self,
        idx: usize,
        node: &Node,
        values: &[Tensor],
        bindings: &HashMap<String, Tensor>,
    ) -> Result<Tensor> {
        let v = |id: NodeId| &values[id.0];
        Ok(match &node.op {
            Op::Input(name) | Op::Param(name) => {
                let t = bindings.get(name).ok_or_else(|| {
                    Error::Graph(format!("leaf `{}` (node {}) is unbound", name, idx))
                })?;
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "bind".into(),
                        detail: format!(
                            "leaf `{}` declared {:?}, bound {:?}",
                            name,
                            node.shape,
                            t.shape()
                        ),
                    });
                }
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::MatMul(a, b) => v(*a).matmul(v(*b))?,
            Op::Transpose(a) => v(*a).transpose()?,
            Op::Add(a, b) => v(*a).add(v(*b))?,
            Op::AddBias(a, b) => {
                let (a, b) = (v(*a), v(*b));
                let (m, n) = (a.rows(), a.cols());
                let mut out = a.data().to_vec();
                for i in 0..m {
                    for (o, &bb) in out[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                        *o += bb;
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::Mul(a, b) => v(*a).mul(v(*b))?,
            Op::Scale(a, c) => v(*a).scale(*c),
            Op::AddScalar(a, c) => v(*a).map(|x| x + c),
            Op::Sigmoid(a) => v(*a).map(sigmoid),
            Op::Tanh(a) => v(*a).map(f64::tanh),
            Op::Exp(a) => v(*a).map(f64::exp),
            Op::Log(a) => v(*a).map(|x| x.max(LOG_CLAMP).ln()),
            Op::Square(a) => v(*a).map(|x| x * x),
            Op::Sum(a) => Tensor::scalar(v(*a).sum()),
            Op::Mean(a) => {
                let t = v(*a);
                Tensor::scalar(t.sum() / t.len() as f64)
            }
            Op::RowSum(a) => {
                let t = v(*a);
                let out = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
                Tensor::vector(out)
            }
            Op::RowLogSumExp(a) => {
                let t = v(*a);
                let out = (0..t.rows()).map(|i| log_sum_exp(t.row(i))).collect();
                Tensor::vector(out)
            }
            Op::Concat(parts) => {
                let m = v(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| v(p).cols()).sum();
                let mut out = vec![0.0; m * total];
                let mut off = 0;
                for &p in parts {
                    let t = v(p);
                    let c = t.cols();
                    for i in 0..m {
                        out[i * total + off..i * total + off + c].copy_from_slice(t.row(i));
                    }
                    off += c;
                }
                Tensor::new(vec![m, total], out)?
            }
            Op::Clamp(a, lo, hi) => v(*a).map(|x| x.clamp(*lo, *hi)),
            Op::StopGrad(a) => v(*a).clone(),
        })
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

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Cached forward values plus the backward pass over them.
#[derive(Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradients of a scalar output with respect to every parameter leaf.
    ///
    /// Fan-out accumulates by summation; nodes are visited in reverse
    /// construction order, which is a reverse topological order by
    /// construction.
    pub fn backward(&self, graph: &Graph, output: NodeId) -> Result<HashMap<String, Tensor>> {
        let out_node = graph.node(output);
        if !out_node.shape.is_empty() {
            return Err(Error::Graph(format!(
                "backward needs a scalar output, got shape {:?}",
                out_node.shape
            )));
        }
        if output.0 >= self.values.len() {
            return Err(Error::Graph("backward called before forward".into()));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &graph.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.push_grads(graph, idx, &g, &mut grads)?;
            // Leaf grads are re-stored so they can be collected below.
            if matches!(node.op, Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }

        let mut out = HashMap::new();
        for (name, &id) in &graph.leaves {
            if matches!(graph.nodes[id.0].op, Op::Param(_)) {
                let g = grads[id.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&graph.nodes[id.0].shape));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn push_grads(
        &self,
        graph: &Graph,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| -> Result<()> {
            if !graph.node(id).needs_grad {
                return Ok(());
            }
            grads[id.0] = Some(match grads[id.0].take() {
                Some(cur) => cur.add(&delta)?,
                None => delta,
            });
            Ok(())
        };
        let v = |id: NodeId| &self.values[id.0];

        match &graph.nodes[idx].op {
            Op::Input(_) | Op::Param(_) | Op::Const(_) | Op::StopGrad(_) => {}
            Op::MatMul(a, b) => {
                if graph.node(*a).needs_grad {
                    let bt = v(*b).transpose()?;
                    acc(grads, *a, g.matmul(&bt)?)?;
                }
                if graph.node(*b).needs_grad {
                    let at = v(*a).transpose()?;
                    acc(grads, *b, at.matmul(g)?)?;
                }
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()?)?,
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone())?;
                if graph.node(*b).needs_grad {
                    let (m, n) = (g.rows(), g.cols());
                    let mut col = vec![0.0; n];
                    for i in 0..m {
                        for (c, &gg) in col.iter_mut().zip(g.row(i)) {
                            *c += gg;
                        }
                    }
                    acc(grads, *b, Tensor::vector(col))?;
                }
            }
            Op::Mul(a, b) => {
                if graph.node(*a).needs_grad {
                    acc(grads, *a, g.mul(v(*b))?)?;
                }
                if graph.node(*b).needs_grad {
                    acc(grads, *b, g.mul(v(*a))?)?;
                }
            }
            Op::Scale(a, c) => acc(grads, *a, g.scale(*c))?,
            Op::AddScalar(a, _) => acc(grads, *a, g.clone())?,
            Op::Sigmoid(a) => {
                let s = &self.values[idx];
                acc(grads, *a, g.zip_map(s, |gg, ss| gg * ss * (1.0 - ss))?)?;
            }
            Op::Tanh(a) => {
                let t = &self.values[idx];
                acc(grads, *a, g.zip_map(t, |gg, tt| gg * (1.0 - tt * tt))?)?;
            }
            Op::Exp(a) => acc(grads, *a, g.mul(&self.values[idx])?)?,
            Op::Log(a) => {
                acc(grads, *a, g.zip_map(v(*a), |gg, x| gg / x.max(LOG_CLAMP))?)?;
            }
            Op::Square(a) => {
                acc(grads, *a, g.zip_map(v(*a), |gg, x| gg * 2.0 * x)?)?;
            }
            Op::Sum(a) => acc(grads, *a, Tensor::full(graph.shape_of(*a), g.item()))?,
            Op::Mean(a) => {
                let n = v(*a).len() as f64;
                acc(grads, *a, Tensor::full(graph.shape_of(*a), g.item() / n))?;
            }
            Op::RowSum(a) => {
                let (m, n) = (v(*a).rows(), v(*a).cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    out[i * n..(i + 1) * n].fill(g.data()[i]);
                }
                acc(grads, *a, Tensor::new(vec![m, n], out)?)?;
            }
            Op::RowLogSumExp(a) => {
                // d lse / d x_ij = softmax over the row.
                let x = v(*a);
                let lse = &self.values[idx];
                let (m, n) = (x.rows(), x.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let gi = g.data()[i];
                    let li = lse.data()[i];
                    for (o, &xv) in out[i * n..(i + 1) * n].iter_mut().zip(x.row(i)) {
                        *o = gi * (xv - li).exp();
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, n], out)?)?;
            }
            Op::Concat(parts) => {
                let m = g.rows();
                let _total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let c = v(p).cols();
                    if graph.node(p).needs_grad {
                        let mut out = vec![0.0; m * c];
                        for i in 0..m {
                            out[i * c..(i + 1) * c]
                                .copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(grads, p, Tensor::new(vec![m, c], out)?)?;
                    }
                    off += c;
                }
            }
            Op::Clamp(a, lo, hi) => {
                acc(
                    grads,
                    *a,
                    g.zip_map(v(*a), |gg, x| if x > *lo && x < *hi { gg } else { 0.0 })?,
                )?;
            }
        }
        Ok(())
    }
}

/// Max relative error between analytic gradients and central finite
/// differences, taken over every coordinate of every listed parameter.
pub fn finite_diff_check(
    graph: &Graph,
    bindings: &HashMap<String, Tensor>,
    output: NodeId,
    params: &[&str],
    eps: f64,
) -> Result<f64> {
    assert!(eps > 0.0, "finite_diff_check needs eps > 0");
    let eval = graph.forward(bindings)?;
    let analytic = eval.backward(graph, output)?;

    let mut max_rel = 0.0f64;
    for &p in params {
        let grad = analytic
            .get(p)
            .ok_or_else(|| Error::Graph(format!("`{}` is not a parameter leaf", p)))?;
        let base = &bindings[p];
        for i in 0..base.len() {
            let probe = |delta: f64| -> Result<f64> {
                let mut b = bindings.clone();
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                b.insert(p.to_string(), t);
                Ok(graph.forward(&b)?.value(output).item())
            };
            let fd = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let a = grad.data()[i];
            if fd.is_nan() {
                return Err(Error::Graph("finite difference produced NaN".into()));
            }
            let rel = (a - fd).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor)]) -> HashMap<String, Tensor> {
        pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    #[test]
    fn forward_basic_values() {
        let mut g = Graph::new();
        let x = g.input("x", &[1, 1]);
        let s = g.sigmoid(x);
        let e = g.exp(x);
        let l = g.log(e);
        let eval = g
            .forward(&bind(&[("x", Tensor::matrix(1, 1, vec![0.0]).unwrap())]))
            .unwrap();
        assert_eq!(eval.value(s).item(), 0.5);
        let eval = g
            .forward(&bind(&[("x", Tensor::matrix(1, 1, vec![1.0]).unwrap())]))
            .unwrap();
        assert!((eval.value(l).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_square() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let y = g.square(x);
        let b = bind(&[("x", Tensor::scalar(3.0))]);
        let eval = g.forward(&b).unwrap();
        let grads = eval.backward(&g, y).unwrap();
        assert!((grads["x"].item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let y = g.sigmoid(x);
        let eval = g.forward(&bind(&[("x", Tensor::scalar(0.0))])).unwrap();
        let grads = eval.backward(&g, y).unwrap();
        assert!((grads["x"].item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut g = Graph::new();
        let x = g.param("x", &[2]);
        let y = g.scale(x, 2.0);
        let eval = g.forward(&bind(&[("x", Tensor::vector(vec![1.0, 2.0]))])).unwrap();
        assert!(eval.backward(&g, y).is_err());
    }

    #[test]
    fn unbound_leaf_is_an_error() {
        let mut g = Graph::new();
        let x = g.input("x", &[2]);
        let _ = g.sum(x);
        assert!(g.forward(&HashMap::new()).is_err());
    }

    #[test]
    fn nan_forward_is_reported_with_node() {
        let mut g = Graph::new();
        let x = g.input("x", &[1, 1]);
        let e = g.exp(x);
        let y = g.sub(e, e).unwrap();
        let _ = g.sum(y);
        // exp(1000) = inf, inf - inf = NaN
        let err = g
            .forward(&bind(&[("x", Tensor::matrix(1, 1, vec![1000.0]).unwrap())]))
            .unwrap_err();
        match err {
            Error::NanDetected { .. } => {}
            other => panic!("expected NanDetected, got {other}"),
        }
    }

    #[test]
    fn stop_gradient_blocks_upstream() {
        // f(x) = stop_grad(x) * x at x=2: value 4, grad 2 (not 4).
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let sx = g.stop_grad(x);
        let y = g.mul(sx, x).unwrap();
        let eval = g.forward(&bind(&[("x", Tensor::scalar(2.0))])).unwrap();
        assert_eq!(eval.value(y).item(), 4.0);
        let grads = eval.backward(&g, y).unwrap();
        assert_eq!(grads["x"].item(), 2.0);
    }

    #[test]
    fn all_stop_grad_terms_give_zero_grads() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let sx = g.stop_grad(x);
        let y = g.square(sx);
        let eval = g.forward(&bind(&[("x", Tensor::scalar(2.0))])).unwrap();
        let grads = eval.backward(&g, y).unwrap();
        assert_eq!(grads["x"].item(), 0.0);
    }

    #[test]
    fn finite_diff_linear_is_tight() {
        let mut g = Graph::new();
        let w = g.param("w", &[3]);
        let c = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let y = g.mul(w, c).unwrap();
        let out = g.sum(y);
        let b = bind(&[("w", Tensor::vector(vec![0.3, 0.1, -0.7]))]);
        let err = finite_diff_check(&g, &b, out, &["w"], 1e-5).unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn finite_diff_flags_hard_threshold() {
        // Clamp at the boundary: analytic subgradient says 0, finite
        // differences see the kink. The checker must report it, not mask it.
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let y = g.clamp(x, -1.0, 1.0);
        let out = g.sum(y);
        let b = bind(&[("x", Tensor::scalar(1.0))]);
        let err = finite_diff_check(&g, &b, out, &["x"], 1e-5).unwrap();
        assert!(err > 0.1, "threshold error should be large, got {err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut g = Graph::new();
        let x = g.input("x", &[2, 3]);
        let w = g.param("w", &[3, 2]);
        let h = g.matmul(x, w).unwrap();
        let s = g.sigmoid(h);
        let out = g.mean(s);
        let b = bind(&[
            ("x", Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.0, -0.4]).unwrap()),
            ("w", Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap()),
        ]);
        let a = g.forward(&b).unwrap().value(out).item();
        let c = g.forward(&b).unwrap().value(out).item();
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn row_lse_matches_naive() {
        let mut g = Graph::new();
        let x = g.input("x", &[2, 3]);
        let l = g.row_log_sum_exp(x).unwrap();
        let data = vec![0.1, -0.5, 2.0, -3.0, 0.0, 1.5];
        let b = bind(&[("x", Tensor::matrix(2, 3, data.clone()).unwrap())]);
        let eval = g.forward(&b).unwrap();
        for i in 0..2 {
            let naive: f64 = data[i * 3..(i + 1) * 3].iter().map(|v| v.exp()).sum();
            assert!((eval.value(l).data()[i] - naive.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_backward_split() {
        let mut g = Graph::new();
        let a = g.param("a", &[2, 1]);
        let b = g.param("b", &[2, 2]);
        let c = g.concat_cols(&[a, b]).unwrap();
        let sq = g.square(c);
        let out = g.sum(sq);
        let bindings = bind(&[
            ("a", Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap()),
            ("b", Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap()),
        ]);
        let eval = g.forward(&bindings).unwrap();
        assert_eq!(eval.value(c).shape(), &[2, 3]);
        let grads = eval.backward(&g, out).unwrap();
        assert_eq!(grads["a"].data(), &[2.0, 4.0]);
        assert_eq!(grads["b"].data(), &[6.0, 8.0, 10.0, 12.0]);
    }
}

//! Tape-based reverse-mode automatic differentiation.
//!
//! Every vector-Jacobian product is itself expressed as recorded graph
//! operations, so a gradient obtained with [`Graph::grad_recorded`] is an
//! ordinary node that can be differentiated again (reverse-over-reverse).
//! [`Graph::grad`] runs the same rules and then discards the nodes it added.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Error, Result};
use crate::tensor::{self, Tensor};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId {
    graph: u64,
    index: usize,
}

impl VarId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Input, parameter or constant.
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    MatMul { transpose_lhs: bool, transpose_rhs: bool },
    Relu,
    Exp,
    Log,
    Square,
    Abs,
    /// Sum down to a shape that broadcasts to the operand (axis sums, totals).
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    /// Max over an axis of a matrix, keeping the reduced axis with extent 1.
    MaxAxis(usize),
    /// Row-wise log-softmax of a matrix.
    LogSoftmax,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::SumTo(_) => "sum_to",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::MaxAxis(_) => "max_axis",
            Op::LogSoftmax => "log_softmax",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Tensor,
}

/// Append-only computation graph. Parents always precede their children.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        self.check(v).expect("VarId from a different graph");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        self.value(v).shape()
    }

    pub fn op(&self, v: VarId) -> &Op {
        &self.nodes[v.index].op
    }

    pub fn parents(&self, v: VarId) -> Vec<VarId> {
        self.nodes[v.index].parents.iter().map(|&p| self.var(p)).collect()
    }

    fn var(&self, index: usize) -> VarId {
        VarId { graph: self.id, index }
    }

    fn check(&self, v: VarId) -> Result<()> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.nodes.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Alias of [`Graph::leaf`] for values that are never differentiated.
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value)
    }

    /// Records `op` applied to `parents`, computing and caching its value.
    pub fn record(&mut self, op: Op, parents: &[VarId]) -> Result<VarId> {
        if op == Op::Leaf {
            return Err(invalid("leaves are created with Graph::leaf"));
        }
        if parents.len() != op.arity() {
            return Err(invalid(format!(
                "{} takes {} operand(s), got {}",
                op.name(),
                op.arity(),
                parents.len()
            )));
        }
        for &p in parents {
            self.check(p)?;
        }
        let value = {
            let vals: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.index].value).collect();
            compute(&op, &vals)?
        };
        self.nodes.push(Node {
            op,
            parents: parents.iter().map(|p| p.index).collect(),
            value,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Op::Div, &[a, b])
    }

    pub fn neg(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Neg, &[a])
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        self.record(Op::Scale(c), &[a])
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: VarId, b: VarId, transpose_lhs: bool, transpose_rhs: bool) -> Result<VarId> {
        self.record(
            Op::MatMul {
                transpose_lhs,
                transpose_rhs,
            },
            &[a, b],
        )
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Relu, &[a])
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Log, &[a])
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Square, &[a])
    }

    pub fn abs(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::Abs, &[a])
    }

    /// Sum of every entry, as a `[1]` tensor.
    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::SumTo(vec![1]), &[a])
    }

    /// Sum over `axis` of a matrix, keeping that axis with extent 1.
    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let target = reduced_shape(self.shape(a), axis, "sum_axis")?;
        self.record(Op::SumTo(target), &[a])
    }

    pub fn sum_to(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        self.record(Op::SumTo(shape.to_vec()), &[a])
    }

    pub fn broadcast_to(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        self.record(Op::BroadcastTo(shape.to_vec()), &[a])
    }

    pub fn max_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        self.record(Op::MaxAxis(axis), &[a])
    }

    pub fn log_softmax(&mut self, a: VarId) -> Result<VarId> {
        self.record(Op::LogSoftmax, &[a])
    }

    /// `∂output/∂wrt` as plain tensors. Nodes added while differentiating are
    /// dropped again, so the graph is left as it was.
    pub fn grad(&mut self, output: VarId, wrt: &[VarId]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let result = self.backprop(output, wrt).map(|grads| {
            grads
                .iter()
                .zip(wrt)
                .map(|(g, w)| match g {
                    Some(i) => self.nodes[*i].value.clone(),
                    None => Tensor::zeros(self.nodes[w.index].value.shape()),
                })
                .collect()
        });
        self.nodes.truncate(mark);
        result
    }

    /// `∂output/∂wrt` recorded as graph nodes, differentiable in turn.
    /// Nodes not connected to `output` get a constant zero gradient.
    pub fn grad_recorded(&mut self, output: VarId, wrt: &[VarId]) -> Result<Vec<VarId>> {
        let grads = self.backprop(output, wrt)?;
        Ok(grads
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(i) => self.var(i),
                None => {
                    let zeros = Tensor::zeros(self.nodes[w.index].value.shape());
                    self.constant(zeros)
                }
            })
            .collect())
    }

    /// Gradient either as values or as recorded nodes, selected by `create_graph`.
    pub fn backward(&mut self, output: VarId, wrt: &[VarId], create_graph: bool) -> Result<Gradients> {
        if create_graph {
            self.grad_recorded(output, wrt).map(Gradients::Recorded)
        } else {
            self.grad(output, wrt).map(Gradients::Values)
        }
    }

    fn backprop(&mut self, output: VarId, wrt: &[VarId]) -> Result<Vec<Option<usize>>> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let out_shape = self.nodes[output.index].value.shape().to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        let end = output.index + 1;
        // A node needs a gradient only if some requested node lies upstream of it.
        let mut needed = vec![false; end];
        for w in wrt {
            if w.index < end {
                needed[w.index] = true;
            }
        }
        for i in 0..end {
            if !needed[i] {
                needed[i] = self.nodes[i].parents.iter().any(|&p| needed[p]);
            }
        }
        let mut grads: Vec<Option<usize>> = vec![None; end];
        if needed[output.index] {
            let seed = self.constant(Tensor::ones(&out_shape));
            grads[output.index] = Some(seed.index);
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if self.nodes[i].op == Op::Leaf {
                continue;
            }
            for (p, contrib) in self.vjp(i, g, &needed)? {
                grads[p] = Some(match grads[p] {
                    None => contrib,
                    Some(prev) => self.add(self.var(prev), self.var(contrib))?.index,
                });
            }
        }
        Ok(wrt.iter().map(|w| if w.index < end { grads[w.index] } else { None }).collect())
    }

    /// Parent contributions `(parent index, gradient node)` of node `i` given
    /// its upstream gradient node `g`, recorded as new nodes.
    fn vjp(&mut self, i: usize, g: usize, needed: &[bool]) -> Result<Vec<(usize, usize)>> {
        let op = self.nodes[i].op.clone();
        let parents = self.nodes[i].parents.clone();
        let out = self.var(i);
        let g = self.var(g);
        let mut res = Vec::with_capacity(parents.len());
        let want = |k: usize| needed[parents[k]];
        let pv = |k: usize| VarId {
            graph: out.graph,
            index: parents[k],
        };
        match op {
            Op::Leaf => {}
            Op::Add | Op::Sub => {
                if want(0) {
                    let ga = self.unbroadcast(g, parents[0])?;
                    res.push((parents[0], ga.index));
                }
                if want(1) {
                    let gb = if op == Op::Sub { self.neg(g)? } else { g };
                    let gb = self.unbroadcast(gb, parents[1])?;
                    res.push((parents[1], gb.index));
                }
            }
            Op::Mul => {
                if want(0) {
                    let ga = self.mul(g, pv(1))?;
                    let ga = self.unbroadcast(ga, parents[0])?;
                    res.push((parents[0], ga.index));
                }
                if want(1) {
                    let gb = self.mul(g, pv(0))?;
                    let gb = self.unbroadcast(gb, parents[1])?;
                    res.push((parents[1], gb.index));
                }
            }
            Op::Div => {
                if want(0) {
                    let ga = self.div(g, pv(1))?;
                    let ga = self.unbroadcast(ga, parents[0])?;
                    res.push((parents[0], ga.index));
                }
                if want(1) {
                    // d(a/b)/db = -(a/b)/b
                    let t = self.mul(g, out)?;
                    let t = self.div(t, pv(1))?;
                    let t = self.neg(t)?;
                    let gb = self.unbroadcast(t, parents[1])?;
                    res.push((parents[1], gb.index));
                }
            }
            Op::Neg => {
                if want(0) {
                    res.push((parents[0], self.neg(g)?.index));
                }
            }
            Op::Scale(c) => {
                if want(0) {
                    res.push((parents[0], self.scale(g, c)?.index));
                }
            }
            Op::MatMul {
                transpose_lhs: ta,
                transpose_rhs: tb,
            } => {
                let (a, b) = (pv(0), pv(1));
                if want(0) {
                    let ga = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    res.push((parents[0], ga.index));
                }
                if want(1) {
                    let gb = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    res.push((parents[1], gb.index));
                }
            }
            Op::Relu => {
                if want(0) {
                    // Subgradient 0 at exactly 0; the step mask has zero derivative.
                    let mask = self.nodes[parents[0]].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    res.push((parents[0], self.mul(g, mask)?.index));
                }
            }
            Op::Exp => {
                if want(0) {
                    res.push((parents[0], self.mul(g, out)?.index));
                }
            }
            Op::Log => {
                if want(0) {
                    res.push((parents[0], self.div(g, pv(0))?.index));
                }
            }
            Op::Square => {
                if want(0) {
                    let two_x = self.scale(pv(0), 2.0)?;
                    res.push((parents[0], self.mul(g, two_x)?.index));
                }
            }
            Op::Abs => {
                if want(0) {
                    let sign = self.nodes[parents[0]].value.map(sign);
                    let sign = self.constant(sign);
                    res.push((parents[0], self.mul(g, sign)?.index));
                }
            }
            Op::SumTo(_) => {
                if want(0) {
                    let shape = self.nodes[parents[0]].value.shape().to_vec();
                    res.push((parents[0], self.broadcast_to(g, &shape)?.index));
                }
            }
            Op::BroadcastTo(_) => {
                if want(0) {
                    let shape = self.nodes[parents[0]].value.shape().to_vec();
                    res.push((parents[0], self.sum_to(g, &shape)?.index));
                }
            }
            Op::MaxAxis(axis) => {
                if want(0) {
                    let mask = argmax_mask(&self.nodes[parents[0]].value, axis);
                    let shape = mask.shape().to_vec();
                    let mask = self.constant(mask);
                    let gb = self.broadcast_to(g, &shape)?;
                    res.push((parents[0], self.mul(gb, mask)?.index));
                }
            }
            Op::LogSoftmax => {
                if want(0) {
                    // dz = g - softmax · rowsum(g)
                    let s = self.sum_axis(g, 1)?;
                    let p = self.exp(out)?;
                    let ps = self.mul(p, s)?;
                    res.push((parents[0], self.sub(g, ps)?.index));
                }
            }
        }
        Ok(res)
    }

    fn unbroadcast(&mut self, g: VarId, parent: usize) -> Result<VarId> {
        let shape = self.nodes[parent].value.shape();
        if self.nodes[g.index].value.shape() == shape {
            Ok(g)
        } else {
            let shape = shape.to_vec();
            self.sum_to(g, &shape)
        }
    }

    /// Recomputes every node from the leaves and returns the values in node
    /// order; equal to the cached values for a well-formed graph.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = if node.op == Op::Leaf {
                node.value.clone()
            } else {
                let vals: Vec<&Tensor> = node.parents.iter().map(|&p| &values[p]).collect();
                compute(&node.op, &vals)?
            };
            values.push(v);
        }
        Ok(values)
    }

    pub fn cached_values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }
}

/// Output of [`Graph::backward`].
#[derive(Debug)]
pub enum Gradients {
    Values(Vec<Tensor>),
    Recorded(Vec<VarId>),
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reduced_shape(shape: &[usize], axis: usize, op: &'static str) -> Result<Vec<usize>> {
    if shape.len() != 2 || axis > 1 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![axis],
        });
    }
    let mut s = shape.to_vec();
    s[axis] = 1;
    Ok(s)
}

fn argmax_mask(x: &Tensor, axis: usize) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut mask = vec![0.0; r * c];
    let d = x.data();
    if axis == 1 {
        for i in 0..r {
            let j = tensor::argmax(&d[i * c..(i + 1) * c]);
            mask[i * c + j] = 1.0;
        }
    } else {
        for j in 0..c {
            let mut best = 0;
            for i in 1..r {
                if d[i * c + j] > d[best * c + j] {
                    best = i;
                }
            }
            mask[best * c + j] = 1.0;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), mask)
}

fn compute(op: &Op, v: &[&Tensor]) -> Result<Tensor> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves are not computed"),
        Op::Add => tensor::binary_broadcast(v[0], v[1], "add", |a, b| a + b)?,
        Op::Sub => tensor::binary_broadcast(v[0], v[1], "sub", |a, b| a - b)?,
        Op::Mul => tensor::binary_broadcast(v[0], v[1], "mul", |a, b| a * b)?,
        Op::Div => tensor::binary_broadcast(v[0], v[1], "div", |a, b| a / b)?,
        Op::Neg => v[0].map(|a| -a),
        Op::Scale(c) => v[0].map(|a| a * c),
        Op::MatMul {
            transpose_lhs,
            transpose_rhs,
        } => tensor::matmul(v[0], v[1], *transpose_lhs, *transpose_rhs)?,
        Op::Relu => v[0].map(|a| if a > 0.0 { a } else { 0.0 }),
        Op::Exp => v[0].map(f64::exp),
        Op::Log => v[0].map(f64::ln),
        Op::Square => v[0].map(|a| a * a),
        Op::Abs => v[0].map(f64::abs),
        Op::SumTo(shape) => tensor::sum_to(v[0], shape)?,
        Op::BroadcastTo(shape) => tensor::broadcast_to(v[0], shape)?,
        Op::MaxAxis(axis) => {
            let x = v[0];
            let target = reduced_shape(x.shape(), *axis, "max_axis")?;
            let mask = argmax_mask(x, *axis);
            let picked = x.zip_map(&mask, "max_axis", |a, m| if m > 0.0 { a } else { 0.0 })?;
            // Exactly one selected entry per reduced slice, so the sum is the max.
            tensor::sum_to(&picked, &target)?
        }
        Op::LogSoftmax => log_softmax(v[0])?,
    })
}

fn log_softmax(z: &Tensor) -> Result<Tensor> {
    if z.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "log_softmax",
            lhs: z.shape().to_vec(),
            rhs: vec![],
        });
    }
    let c = z.cols();
    let mut out = Vec::with_capacity(z.numel());
    for row in z.data().chunks(c) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&x| x - m - lse));
    }
    Ok(Tensor::from_parts(z.shape().to_vec(), out))
}

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_difference<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = scalar_of(f(&probe)?)?;
        probe.data_mut()[i] = orig - h;
        let minus = scalar_of(f(&probe)?)?;
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), grad))
}

fn scalar_of(t: Tensor) -> Result<f64> {
    if t.is_scalar() {
        Ok(t.item())
    } else {
        Err(Error::NonScalarOutput(t.shape().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn record_examples() {
        let mut g = Graph::new();
        let a = g.leaf(vec(&[1., 2.]));
        let b = g.leaf(vec(&[3., 4.]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4., 6.]);

        let x = g.leaf(vec(&[-1., 0., 2.]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0., 0., 2.]);

        let m = g.leaf(Tensor::ones(&[2, 3]));
        let n = g.leaf(Tensor::ones(&[3, 1]));
        let p = g.matmul(m, n).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 1]);
        assert_eq!(g.value(p).data(), &[3., 3.]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones(&[2, 3]));
        let b = g.leaf(Tensor::ones(&[4, 3]));
        let err = g.add(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 3]);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.leaf(vec(&[1., 2., 3.]));
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        let before = g.len();
        let grads = g.grad(s, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[2., 4., 6.]);
        assert_eq!(g.len(), before);
    }

    #[test]
    fn relu_subgradient() {
        for (x0, expected) in [(-1.0, 0.0), (0.0, 0.0), (2.0, 1.0)] {
            let mut g = Graph::new();
            let x = g.leaf(vec(&[x0]));
            let r = g.relu(x).unwrap();
            let s = g.sum(r).unwrap();
            assert_eq!(g.grad(s, &[x]).unwrap()[0].data(), &[expected]);
        }
    }

    #[test]
    fn non_scalar_and_foreign_errors() {
        let mut g = Graph::new();
        let x = g.leaf(vec(&[1., 2.]));
        assert!(matches!(g.grad(x, &[x]), Err(Error::NonScalarOutput(_))));
        let mut other = Graph::new();
        let y = other.leaf(vec(&[1.]));
        let s = g.sum(x).unwrap();
        assert!(matches!(g.grad(s, &[y]), Err(Error::ForeignVar)));
        assert!(matches!(g.add(x, y), Err(Error::ForeignVar)));
    }

    #[test]
    fn unconnected_gradient_is_exact_zero() {
        let mut g = Graph::new();
        let x = g.leaf(vec(&[1., 2.]));
        let c = g.leaf(vec(&[5., 6.]));
        let s = g.sum(x).unwrap();
        let grads = g.grad(s, &[c]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
        let rec = g.grad_recorded(s, &[c]).unwrap();
        assert_eq!(g.value(rec[0]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_order_through_recorded_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(vec(&[1., 2.]));
        let sq = g.square(x).unwrap();
        let cube = g.mul(sq, x).unwrap();
        let s = g.sum(cube).unwrap();
        let gx = g.grad_recorded(s, &[x]).unwrap()[0];
        assert_eq!(g.value(gx).data(), &[3., 12.]);
        let sg = g.sum(gx).unwrap();
        let hx = g.grad(sg, &[x]).unwrap();
        assert_eq!(hx[0].data(), &[6., 12.]);
    }

    #[test]
    fn max_axis_and_log_softmax() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::matrix(2, 3, vec![1., 3., 2., -1., -2., 0.]).unwrap());
        let m = g.max_axis(z, 1).unwrap();
        assert_eq!(g.value(m).data(), &[3., 0.]);
        let m0 = g.max_axis(z, 0).unwrap();
        assert_eq!(g.value(m0).data(), &[1., 3., 2.]);
        let lp = g.log_softmax(z).unwrap();
        for i in 0..2 {
            let s: f64 = g.value(lp).row(i).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_cached_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![0.5, -1.5, 2.0, 0.25]).unwrap());
        let w = g.leaf(Tensor::matrix(2, 2, vec![1.0, -0.5, 0.3, 0.7]).unwrap());
        let h = g.matmul(x, w).unwrap();
        let h = g.relu(h).unwrap();
        let lp = g.log_softmax(h).unwrap();
        let s = g.sum(lp).unwrap();
        let _ = g.grad_recorded(s, &[x, w]).unwrap();
        let replayed = g.replay().unwrap();
        for (a, b) in replayed.iter().zip(g.cached_values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn finite_difference_examples() {
        let x = vec(&[0.3, -1.2, 4.0]);
        let fd = finite_difference(|t| Ok(Tensor::scalar(t.sum())), &x, 1e-5).unwrap();
        for v in fd.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let fd = finite_difference(|t| Ok(Tensor::scalar(t.data()[0] * t.data()[0])), &vec(&[3.0]), 1e-5).unwrap();
        assert!((fd.data()[0] - 6.0).abs() < 1e-8);
        assert!(finite_difference(|t| Ok(t.clone()), &x, 1e-5).is_err());
        assert!(finite_difference(|t| Ok(t.clone()), &x, 0.0).is_err());
    }
}

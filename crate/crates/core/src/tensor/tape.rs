use super::{
    matmul_nt_kernel, matmul_tn_kernel, reduce_backward, BinaryOp, ReduceOp, Tensor, UnaryOp,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, NodeId),
    Binary(BinaryOp, NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Reduce(ReduceOp, Option<usize>, NodeId),
    SoftmaxRows(NodeId),
    ConcatRows(NodeId, NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order.
///
/// Node ids are indices into the record, so every node's inputs precede it.
/// A tape is single-use: build the graph, call [`Tape::backward`] as many
/// times as needed (each call is independent), then drop it.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that reaches it.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when nothing flowed there.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.dims()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.data.iter_mut().zip(&contribution.data) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that gradients are computed for.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::contract(format!("node {} is not on this tape", id.0)))
        }
    }

    pub fn unary(&mut self, op: UnaryOp, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).unary(op)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Unary(op, x), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).binary(op, self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(bias)?;
        let value = self.value(x).add_row(self.value(bias))?;
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn reduce(&mut self, op: ReduceOp, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).reduce(op, axis)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reduce(op, axis, x), rg))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).softmax_rows()?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).concat_rows(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::ConcatRows(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(UnaryOp::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(UnaryOp::AddScalar(c), x)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.reduce(ReduceOp::Sum, x, None)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.reduce(ReduceOp::Mean, x, None)
    }

    /// Values feeding each kink op (relu, leaky relu, abs, clamp), measured
    /// relative to the kink and concatenated in tape order.
    pub fn kink_offsets(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Unary(op, x) = node.op {
                if let Some(k) = op.kink() {
                    out.extend(self.nodes[x.0].value.data.iter().map(|v| v - k));
                }
            }
        }
        out
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.check(root)?;
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got dims {:?}",
                root_value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.dims(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Unary(op, x) => {
                    if self.nodes[x.0].requires_grad {
                        let xin = &self.nodes[x.0].value;
                        let data = g
                            .data
                            .iter()
                            .zip(&xin.data)
                            .zip(&node.value.data)
                            .map(|((gv, &xv), &yv)| gv * op.derivative(xv, yv))
                            .collect();
                        accumulate(
                            &mut grads[x.0],
                            Tensor::from_parts_unchecked(xin.dims.clone(), data),
                        );
                    }
                }
                Op::Binary(op, a, b) => {
                    let (ra, rb) = (self.nodes[a.0].requires_grad, self.nodes[b.0].requires_grad);
                    match op {
                        BinaryOp::Add => {
                            if ra {
                                accumulate(&mut grads[a.0], g.clone());
                            }
                            if rb {
                                accumulate(&mut grads[b.0], g.clone());
                            }
                        }
                        BinaryOp::Sub => {
                            if ra {
                                accumulate(&mut grads[a.0], g.clone());
                            }
                            if rb {
                                let neg = g.data.iter().map(|v| -v).collect();
                                accumulate(
                                    &mut grads[b.0],
                                    Tensor::from_parts_unchecked(g.dims.clone(), neg),
                                );
                            }
                        }
                        BinaryOp::Mul => {
                            let av = &self.nodes[a.0].value;
                            let bv = &self.nodes[b.0].value;
                            if ra {
                                let d = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                                accumulate(
                                    &mut grads[a.0],
                                    Tensor::from_parts_unchecked(g.dims.clone(), d),
                                );
                            }
                            if rb {
                                let d = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                                accumulate(
                                    &mut grads[b.0],
                                    Tensor::from_parts_unchecked(g.dims.clone(), d),
                                );
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k) = (av.dims[0], av.dims[1]);
                    let n = bv.dims[1];
                    if self.nodes[a.0].requires_grad {
                        let d = matmul_nt_kernel(&g.data, &bv.data, m, k, n);
                        accumulate(&mut grads[a.0], Tensor::from_parts_unchecked(vec![m, k], d));
                    }
                    if self.nodes[b.0].requires_grad {
                        let d = matmul_tn_kernel(&av.data, &g.data, m, k, n);
                        accumulate(&mut grads[b.0], Tensor::from_parts_unchecked(vec![k, n], d));
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut grads[x.0], g.clone());
                    }
                    if self.nodes[bias.0].requires_grad {
                        let n = g.dims[1];
                        let mut d = vec![0.0; n];
                        for row in g.data.chunks_exact(n) {
                            for (acc, v) in d.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        let dims = self.nodes[bias.0].value.dims.clone();
                        accumulate(&mut grads[bias.0], Tensor::from_parts_unchecked(dims, d));
                    }
                }
                Op::Reduce(op, axis, x) => {
                    if self.nodes[x.0].requires_grad {
                        let d = reduce_backward(&g, &self.nodes[x.0].value.dims, op, axis);
                        accumulate(&mut grads[x.0], d);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if self.nodes[x.0].requires_grad {
                        let y = &node.value;
                        let k = y.dims[1];
                        let mut d = vec![0.0; y.len()];
                        for ((yr, gr), dr) in y
                            .data
                            .chunks_exact(k)
                            .zip(g.data.chunks_exact(k))
                            .zip(d.chunks_exact_mut(k))
                        {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                                *o = yv * (gv - dot);
                            }
                        }
                        accumulate(&mut grads[x.0], Tensor::from_parts_unchecked(y.dims.clone(), d));
                    }
                }
                Op::ConcatRows(a, b) => {
                    let split = self.nodes[a.0].value.len();
                    if self.nodes[a.0].requires_grad {
                        let dims = self.nodes[a.0].value.dims.clone();
                        accumulate(
                            &mut grads[a.0],
                            Tensor::from_parts_unchecked(dims, g.data[..split].to_vec()),
                        );
                    }
                    if self.nodes[b.0].requires_grad {
                        let dims = self.nodes[b.0].value.dims.clone();
                        accumulate(
                            &mut grads[b.0],
                            Tensor::from_parts_unchecked(dims, g.data[split..].to_vec()),
                        );
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, RandomSource};

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![3.0, -1.0, 2.0, 8.0]).unwrap());
        let loss = tape.mean(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![5.0, 6.0]).unwrap());
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 6.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![3.0]).unwrap());
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.mul(x, x).unwrap();
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0 + 6.0]);
    }

    #[test]
    fn gradient_dims_match_values() {
        let mut rng = RandomSource::new(3);
        let mut tape = Tape::new();
        let x = tape.variable(rng.gaussian(&[4, 3]));
        let w = tape.variable(rng.gaussian(&[3, 2]));
        let b = tape.variable(rng.gaussian(&[2]));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add_row(h, b).unwrap();
        let s = tape.softmax_rows(h).unwrap();
        let col = tape.reduce(ReduceOp::Sum, s, Some(0)).unwrap();
        let sq = tape.unary(UnaryOp::Square, col).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        for id in [x, w, b] {
            assert_eq!(g.get(id).unwrap().dims(), tape.value(id).dims());
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let unaries = [
            UnaryOp::Relu,
            UnaryOp::LeakyRelu(0.2),
            UnaryOp::Tanh,
            UnaryOp::Sigmoid,
            UnaryOp::Exp,
            UnaryOp::Neg,
            UnaryOp::Abs,
            UnaryOp::Softplus,
            UnaryOp::Scale(-1.7),
            UnaryOp::AddScalar(0.3),
            UnaryOp::ClampMin(0.1),
            UnaryOp::Square,
        ];
        let mut rng = RandomSource::new(77);
        for case in 0..100 {
            let x = rng.gaussian(&[3, 4]);
            let w = rng.gaussian(&[3, 4]);
            for op in unaries {
                let r = grad_check(
                    |t, x| {
                        let y = t.unary(op, x)?;
                        let wc = t.constant(w.clone());
                        let p = t.mul(y, wc)?;
                        t.sum(p)
                    },
                    &x,
                    1e-5,
                )
                .unwrap();
                assert!(r.max_rel_error < 1e-4, "case {case} {op:?}: {r:?}");
            }
            // log needs a positive domain
            let pos = x.unary(UnaryOp::Abs).unwrap().unary(UnaryOp::AddScalar(0.5)).unwrap();
            let r = grad_check(
                |t, x| {
                    let y = t.unary(UnaryOp::Log, x)?;
                    let wc = t.constant(w.clone());
                    let p = t.mul(y, wc)?;
                    t.sum(p)
                },
                &pos,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "case {case} log: {r:?}");

            let other = rng.gaussian(&[4, 2]);
            let r = grad_check(
                |t, x| {
                    let o = t.constant(other.clone());
                    let m = t.matmul(x, o)?;
                    let sm = t.softmax_rows(m)?;
                    let c = t.constant(rng_free_weights(3, 2));
                    let p = t.mul(sm, c)?;
                    let r0 = t.reduce(ReduceOp::Mean, p, Some(1))?;
                    let sq = t.unary(UnaryOp::Square, r0)?;
                    let cat = t.concat_rows(x, x)?;
                    let cs = t.reduce(ReduceOp::Sum, cat, None)?;
                    let a = t.sum(sq)?;
                    let b = t.scale(cs, 0.01)?;
                    t.add(a, b)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "case {case} composite: {r:?}");

            let bias = rng.gaussian(&[4]);
            let r = grad_check(
                |t, b| {
                    let xc = t.constant(x.clone());
                    let h = t.add_row(xc, b)?;
                    let wc = t.constant(w.clone());
                    let d = t.sub(h, wc)?;
                    let th = t.unary(UnaryOp::Tanh, d)?;
                    t.mean(th)
                },
                &bias,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "case {case} add_row: {r:?}");
        }
    }

    fn rng_free_weights(r: usize, c: usize) -> Tensor {
        let data = (0..r * c).map(|i| (i as f64 * 0.37).sin()).collect();
        Tensor::matrix(r, c, data).unwrap()
    }

    #[test]
    fn replay_is_bit_identical() {
        let build = || {
            let mut rng = RandomSource::new(123);
            let mut tape = Tape::new();
            let x = tape.variable(rng.gaussian(&[5, 3]));
            let w = tape.variable(rng.gaussian(&[3, 3]));
            let h = tape.matmul(x, w).unwrap();
            let h = tape.unary(UnaryOp::Tanh, h).unwrap();
            let loss = tape.mean(h).unwrap();
            let g = tape.backward(loss).unwrap();
            (tape.scalar(loss).unwrap(), g.get(w).unwrap().clone())
        };
        let (l1, g1) = build();
        let (l2, g2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}

//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A `Graph` records forward operations eagerly (values are computed at
//! insertion time) and replays them in reverse to accumulate exact gradients.
//! Learned parameters live in a `ParamStore`; binding a parameter into a
//! graph yields a cached leaf node so gradients can be routed back to the
//! store after `backward`.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// A learned tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape().to_vec());
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Conv2dSame { input: NodeId, kernel: NodeId, bias: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    Index(NodeId, usize),
    Concat(Vec<NodeId>),
    Softmax(NodeId),
    Flatten(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, NodeId)>,
    param_nodes: Vec<Option<NodeId>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Insert a constant input (no gradient is routed out of it).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Bind a stored parameter into the graph. Repeated binds of the same
    /// parameter return the same node, so shared layers accumulate correctly.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.param_nodes.len() < store.len() {
            self.param_nodes.resize(store.len(), None);
        }
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push(Op::Leaf, store.value(id).clone());
        self.param_nodes[id.0] = Some(n);
        self.bindings.push((id, n));
        n
    }

    pub fn bound_params(&self) -> Vec<ParamId> {
        self.bindings.iter().map(|&(id, _)| id).collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let v = tensor::matvec(self.value(w), self.value(x))?;
        Ok(self.push(Op::MatVec(w, x), v))
    }

    pub fn conv2d_same(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = tensor::conv2d_same(self.value(input), self.value(kernel), self.value(bias))?;
        Ok(self.push(Op::Conv2dSame { input, kernel, bias }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(tensor::sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Pick a single element of a 1-D tensor as a shape-[1] node.
    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let t = self.value(x);
        if i >= t.len() {
            return Err(Error::Dim(format!(
                "index {i} out of range for tensor of length {}",
                t.len()
            )));
        }
        let v = Tensor::scalar(t.data()[i]);
        Ok(self.push(Op::Index(x, i), v))
    }

    /// Concatenate 1-D nodes along their axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(&tensors)?;
        Ok(self.push(Op::Concat(parts.to_vec()), v))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::softmax(self.value(x).data())?;
        Ok(self.push(Op::Softmax(x), Tensor::vector(v)))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let v = self.value(x).reshaped(vec![n]).expect("flatten is always valid");
        self.push(Op::Flatten(x), v)
    }

    /// Dot product of two 1-D nodes as a shape-[1] node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Reverse sweep from a scalar `loss` node, seeding d(loss)/d(loss) with
    /// `seed`, accumulating parameter gradients into `store` (scaled by the
    /// seed; pass 1.0 / batch_size for a batch-mean loss).
    pub fn backward(&self, loss: NodeId, seed: f64, store: &mut ParamStore) -> Result<()> {
        let grads = self.node_grads(loss, seed)?;
        for &(pid, nid) in &self.bindings {
            if let Some(g) = &grads[nid.0] {
                let p = store.get_mut(pid);
                p.grad = tensor::add(&p.grad, g)?;
            }
        }
        Ok(())
    }

    /// Per-node gradients of the scalar at `loss`. Nodes not on a path to the
    /// loss stay `None`.
    pub fn node_grads(&self, loss: NodeId, seed: f64) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dim(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));

        for i in (0..=loss.0).rev() {
            let gy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, g: Tensor| -> Result<()> {
            match &mut grads[id.0] {
                Some(existing) => {
                    *existing = tensor::add(existing, &g)?;
                }
                slot @ None => *slot = Some(g),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for ii in 0..m {
                    for jj in 0..n {
                        let g = gy.data()[ii * n + jj];
                        if g == 0.0 {
                            continue;
                        }
                        for ll in 0..k {
                            da[ii * k + ll] += g * bv.data()[ll * n + jj];
                            db[ll * n + jj] += g * av.data()[ii * k + ll];
                        }
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, k], da)?)?;
                acc(grads, *b, Tensor::new(vec![k, n], db)?)?;
            }
            Op::MatVec(w, x) => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let mut dw = vec![0.0; m * n];
                let mut dx = vec![0.0; n];
                for ii in 0..m {
                    let g = gy.data()[ii];
                    if g == 0.0 {
                        continue;
                    }
                    for jj in 0..n {
                        dw[ii * n + jj] += g * xv.data()[jj];
                        dx[jj] += g * wv.data()[ii * n + jj];
                    }
                }
                acc(grads, *w, Tensor::new(vec![m, n], dw)?)?;
                acc(grads, *x, Tensor::new(vec![n], dx)?)?;
            }
            Op::Conv2dSame { input, kernel, bias } => {
                let iv = self.value(*input);
                let kv = self.value(*kernel);
                let (h, w, cin) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
                let (kh, kw, _, cout) = (
                    kv.shape()[0],
                    kv.shape()[1],
                    kv.shape()[2],
                    kv.shape()[3],
                );
                let pad = (kh - 1) / 2;
                let mut di = vec![0.0; iv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut db = vec![0.0; cout];
                for oy in 0..h {
                    for ox in 0..w {
                        for oc in 0..cout {
                            let g = gy.data()[(oy * w + ox) * cout + oc];
                            if g == 0.0 {
                                continue;
                            }
                            db[oc] += g;
                            for ky in 0..kh {
                                let iy = oy as isize + ky as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize + kx as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let ibase = (iy as usize * w + ix as usize) * cin;
                                    let kbase = ((ky * kw + kx) * cin) * cout;
                                    for ic in 0..cin {
                                        di[ibase + ic] += g * kv.data()[kbase + ic * cout + oc];
                                        dk[kbase + ic * cout + oc] += g * iv.data()[ibase + ic];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *input, Tensor::new(iv.shape().to_vec(), di)?)?;
                acc(grads, *kernel, Tensor::new(kv.shape().to_vec(), dk)?)?;
                acc(grads, *bias, Tensor::new(vec![cout], db)?)?;
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy.clone())?;
                acc(grads, *b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                acc(grads, *a, gy.clone())?;
                acc(grads, *b, gy.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = if av.len() == 1 && bv.len() > 1 {
                    // scalar broadcast: da = Σ gy ⊙ b
                    let s: f64 = gy.data().iter().zip(bv.data()).map(|(g, x)| g * x).sum();
                    Tensor::scalar(s)
                } else {
                    tensor::mul(gy, bv)?
                };
                let db = if bv.len() == 1 && av.len() > 1 {
                    let s: f64 = gy.data().iter().zip(av.data()).map(|(g, x)| g * x).sum();
                    Tensor::scalar(s)
                } else {
                    tensor::mul(gy, av)?
                };
                acc(grads, *a, da)?;
                acc(grads, *b, db)?;
            }
            Op::Tanh(x) => {
                // tanh' = 1 - tanh²
                let y = &node.value;
                let g = Tensor::new(
                    y.shape().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect(),
                )?;
                acc(grads, *x, g)?;
            }
            Op::Sigmoid(x) => {
                // sigmoid' = s(1-s)
                let y = &node.value;
                let g = Tensor::new(
                    y.shape().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect(),
                )?;
                acc(grads, *x, g)?;
            }
            Op::Exp(x) => {
                let y = &node.value;
                acc(grads, *x, tensor::mul(gy, y)?)?;
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(grads, *x, Tensor::full(xv.shape().to_vec(), gy.data()[0]))?;
            }
            Op::Index(x, idx) => {
                let xv = self.value(*x);
                let mut g = Tensor::zeros(xv.shape().to_vec());
                g.data_mut()[*idx] = gy.data()[0];
                acc(grads, *x, g)?;
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let l = self.value(p).len();
                    let g = Tensor::vector(gy.data()[off..off + l].to_vec());
                    off += l;
                    acc(grads, p, g)?;
                }
            }
            Op::Softmax(x) => {
                // dx = y ⊙ (gy - <gy, y>)
                let y = &node.value;
                let dot: f64 = gy.data().iter().zip(y.data()).map(|(g, w)| g * w).sum();
                let g = Tensor::new(
                    y.shape().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, w)| w * (g - dot))
                        .collect(),
                )?;
                acc(grads, *x, g)?;
            }
            Op::Flatten(x) => {
                let xv = self.value(*x);
                acc(grads, *x, gy.reshaped(xv.shape().to_vec())?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = Σ x², df/dx = 2x
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let xn = g.param(&store, x);
        let sq = g.mul(xn, xn).unwrap();
        let loss = g.sum(sq);
        assert_eq!(g.value(loss).item().unwrap(), 5.0);
        g.backward(loss, 1.0, &mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[2.0, 4.0]);
    }

    #[test]
    fn shared_param_binding_accumulates() {
        // f(x) = sum(x) + sum(x); grad = 2 per element even though the param
        // is bound once and used twice.
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0, -1.0]));
        let mut g = Graph::new();
        let a = g.param(&store, x);
        let b = g.param(&store, x);
        assert_eq!(a, b);
        let s1 = g.sum(a);
        let s2 = g.sum(b);
        let loss = g.add(s1, s2).unwrap();
        g.backward(loss, 1.0, &mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_grads_resets() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0]));
        let mut g = Graph::new();
        let xn = g.param(&store, x);
        let loss = g.sum(xn);
        g.backward(loss, 1.0, &mut store).unwrap();
        assert_ne!(store.get(x).grad.data(), &[0.0]);
        store.zero_grads();
        assert_eq!(store.get(x).grad.data(), &[0.0]);
    }

    #[test]
    fn backward_seed_scales() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![2.0]));
        let mut g = Graph::new();
        let xn = g.param(&store, x);
        let loss = g.sum(xn);
        g.backward(loss, 0.25, &mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[0.25]);
    }
}

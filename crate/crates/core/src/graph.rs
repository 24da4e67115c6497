//! Reverse-mode differentiation over a small, topologically ordered graph of
//! primitives that is sufficient for multi-layer perceptrons.
//!
//! A [`Graph`] only describes structure; values live on a [`Tape`] produced by
//! [`forward`]. Because evaluation is generic over [`Scalar`], the same graph
//! runs over `f64` for values and gradients and over [`Dual`] for exact
//! Hessian-vector products (see [`hessian_vector_product`]).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::{Dual, Scalar};
use crate::tensor::Tensor;

/// Named tensors bound to the graph's inputs.
pub type Bindings<T = f64> = HashMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    /// `(m × k) · (k × n)` or `(m × k) · (k)`.
    MatMul(NodeId, NodeId),
    /// `(m × k) · (n × k)ᵀ`, the layout of a fan_out × fan_in weight matrix.
    MatMulTransB(NodeId, NodeId),
    /// `(m × n) + (n)` row-wise, or `(n) + (n)`.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    /// Mean over rows of `-Σ_c target_c · log softmax(logits)_c`.
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: NodeId,
    },
    /// Mean of squared differences over all elements.
    MeanSquaredError(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::MatMul(..) => "matmul",
            Op::MatMulTransB(..) => "matmul_transb",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::MeanSquaredError(..) => "mean_squared_error",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) => vec![],
            Op::Relu(a) | Op::Abs(a) | Op::Sum(a) => vec![a],
            Op::MatMul(a, b) | Op::MatMulTransB(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::MeanSquaredError(a, b) => vec![a, b],
            Op::SoftmaxCrossEntropy { logits, targets } => vec![logits, targets],
        }
    }
}

/// Nodes in topological order; every operand precedes its user.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        for operand in op.operands() {
            assert!(operand.0 < self.nodes.len(), "operand {operand:?} does not belong to this graph");
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a named input. Declaring the same name twice returns the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.find_input(name) {
            return id;
        }
        self.push(Op::Input(name.to_string()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulTransB(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, targets })
    }

    pub fn mean_squared_error(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MeanSquaredError(a, b))
    }

    /// Selects the node whose value [`forward`] returns. Defaults to the last node.
    pub fn set_output(&mut self, id: NodeId) {
        assert!(id.0 < self.nodes.len());
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find_input(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|op| matches!(op, Op::Input(n) if n == name)).map(NodeId)
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|op| match op {
            Op::Input(n) => Some(n.as_str()),
            _ => None,
        })
    }
}

/// Values of every node after a forward pass, retained for the backward pass.
#[derive(Debug)]
pub struct Tape<'g, T: Scalar> {
    graph: &'g Graph,
    values: Vec<Tensor<T>>,
}

pub fn forward<'g, T: Scalar>(graph: &'g Graph, inputs: &Bindings<T>) -> Result<Tape<'g, T>> {
    if graph.is_empty() {
        return Err(Error::Config("empty graph".into()));
    }
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(graph.len());
    for (idx, op) in graph.nodes.iter().enumerate() {
        let v = eval_node(idx, op, &values, inputs)?;
        values.push(v);
    }
    Ok(Tape { graph, values })
}

impl<'g, T: Scalar> Tape<'g, T> {
    pub fn output(&self) -> &Tensor<T> {
        let id = self.graph.output().expect("forward rejects empty graphs");
        &self.values[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Gradients of the scalar output with respect to the named inputs.
    /// Inputs the output does not depend on receive zero gradients.
    pub fn backward(&self, wrt: &[&str]) -> Result<Bindings<T>> {
        let out = self.graph.output().expect("forward rejects empty graphs");
        let out_val = &self.values[out.0];
        if out_val.numel() != 1 {
            return Err(Error::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut wanted = Vec::with_capacity(wrt.len());
        for name in wrt {
            let id = self.graph.find_input(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            wanted.push((name.to_string(), id));
        }

        let nodes = &self.graph.nodes;
        let mut needs = vec![false; nodes.len()];
        for (idx, op) in nodes.iter().enumerate() {
            needs[idx] = match op {
                Op::Input(_) => wanted.iter().any(|(_, id)| id.0 == idx),
                _ => op.operands().iter().any(|o| needs[o.0]),
            };
        }

        let mut adj: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if needs[out.0] {
            adj[out.0] = Some(Tensor::full(out_val.shape().to_vec(), T::one()));
        }
        for idx in (0..=out.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if let Op::Input(_) = nodes[idx] {
                adj[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g, &needs, &mut adj)?;
        }

        Ok(wanted
            .into_iter()
            .map(|(name, id)| {
                let g = adj[id.0].take().unwrap_or_else(|| Tensor::zeros(self.values[id.0].shape().to_vec()));
                (name, g)
            })
            .collect())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, needs: &[bool], adj: &mut [Option<Tensor<T>>]) -> Result<()> {
        let op = &self.graph.nodes[idx];
        let val = |id: NodeId| &self.values[id.0];
        let want = |id: NodeId| needs[id.0];
        match *op {
            Op::Input(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2().expect("validated in forward");
                let n = if val(b).rank() == 1 { 1 } else { val(b).shape()[1] };
                if want(a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), (n, 1), val(b).data(), (1, n), &mut da, (k, 1));
                    accumulate(adj, a, Tensor::new(vec![m, k], da)?)?;
                }
                if want(b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(a).data(), (1, k), g.data(), (n, 1), &mut db, (n, 1));
                    accumulate(adj, b, Tensor::new(val(b).shape().to_vec(), db)?)?;
                }
            }
            Op::MatMulTransB(a, b) => {
                let (m, k) = val(a).dims2().expect("validated in forward");
                let n = val(b).shape()[0];
                if want(a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), (n, 1), val(b).data(), (k, 1), &mut da, (k, 1));
                    accumulate(adj, a, Tensor::new(vec![m, k], da)?)?;
                }
                if want(b) {
                    let mut db = vec![T::zero(); n * k];
                    T::gemm(n, m, k, g.data(), (1, n), val(a).data(), (k, 1), &mut db, (k, 1));
                    accumulate(adj, b, Tensor::new(vec![n, k], db)?)?;
                }
            }
            Op::AddBias(a, bias) => {
                if want(a) {
                    accumulate(adj, a, g.clone())?;
                }
                if want(bias) {
                    let n = val(bias).numel();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(adj, bias, Tensor::new(val(bias).shape().to_vec(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                if want(a) {
                    accumulate(adj, a, g.clone())?;
                }
                if want(b) {
                    accumulate(adj, b, g.clone())?;
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    accumulate(adj, a, g.zip_map(val(b), |x, y| x * y)?)?;
                }
                if want(b) {
                    accumulate(adj, b, g.zip_map(val(a), |x, y| x * y)?)?;
                }
            }
            Op::Relu(a) => {
                // derivative at exactly 0 is taken to be 0
                accumulate(adj, a, g.zip_map(val(a), |x, y| if y.primal() > 0.0 { x } else { T::zero() })?)?;
            }
            Op::Abs(a) => {
                accumulate(adj, a, g.zip_map(val(a), |x, y| x * y.sign())?)?;
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(adj, a, Tensor::full(val(a).shape().to_vec(), s))?;
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let s = g.data()[0];
                let (rows, classes) = rows_cols(val(logits));
                let scale = s / T::from_f64(rows as f64);
                let logp = log_softmax_rows(val(logits).data(), classes);
                let y = val(targets).data();
                if want(logits) {
                    let mut dz = vec![T::zero(); rows * classes];
                    for r in 0..rows {
                        let yr = &y[r * classes..(r + 1) * classes];
                        let mass: T = yr.iter().copied().sum();
                        for c in 0..classes {
                            let i = r * classes + c;
                            dz[i] = scale * (logp[i].exp() * mass - y[i]);
                        }
                    }
                    accumulate(adj, logits, Tensor::new(val(logits).shape().to_vec(), dz)?)?;
                }
                if want(targets) {
                    let dy = logp.iter().map(|&lp| -scale * lp).collect();
                    accumulate(adj, targets, Tensor::new(val(targets).shape().to_vec(), dy)?)?;
                }
            }
            Op::MeanSquaredError(a, b) => {
                let s = g.data()[0];
                let scale = T::from_f64(2.0) * s / T::from_f64(val(a).numel() as f64);
                let diff = val(a).zip_map(val(b), |x, y| scale * (x - y))?;
                if want(b) {
                    accumulate(adj, b, diff.map(|v| -v))?;
                }
                if want(a) {
                    accumulate(adj, a, diff)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    adj[id.0] = Some(match adj[id.0].take() {
        Some(prev) => prev.zip_map(&g, |x, y| x + y)?,
        None => g,
    });
    Ok(())
}

fn rows_cols<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    match t.shape() {
        [c] => (1, *c),
        [r, c] => (*r, *c),
        _ => (1, t.numel()),
    }
}

fn log_softmax_rows<T: Scalar>(z: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(classes) {
        let max = row.iter().map(|v| v.primal()).fold(f64::NEG_INFINITY, f64::max);
        let shift = T::from_f64(max);
        let lse = row.iter().map(|&v| (v - shift).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - shift - lse));
    }
    out
}

fn eval_node<T: Scalar>(idx: usize, op: &Op, values: &[Tensor<T>], inputs: &Bindings<T>) -> Result<Tensor<T>> {
    let dim_err = |detail: String| Error::Dimension { node: idx, op: op.name(), detail };
    let val = |id: NodeId| &values[id.0];
    Ok(match *op {
        Op::Input(ref name) => inputs.get(name).cloned().ok_or_else(|| Error::MissingInput(name.clone()))?,
        Op::MatMul(a, b) => {
            let (a, b) = (val(a), val(b));
            let (m, k) = a.dims2().ok_or_else(|| dim_err(format!("left operand must be a matrix, got {:?}", a.shape())))?;
            let (kb, n, vector) = match b.shape() {
                [kb] => (*kb, 1, true),
                [kb, n] => (*kb, *n, false),
                s => return Err(dim_err(format!("right operand must have rank 1 or 2, got {s:?}"))),
            };
            if kb != k {
                return Err(dim_err(format!("{:?} · {:?}", a.shape(), b.shape())));
            }
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut c, (n, 1));
            Tensor::new(if vector { vec![m] } else { vec![m, n] }, c)?
        }
        Op::MatMulTransB(a, b) => {
            let (a, b) = (val(a), val(b));
            let (m, k) = a.dims2().ok_or_else(|| dim_err(format!("left operand must be a matrix, got {:?}", a.shape())))?;
            let (n, kb) = b.dims2().ok_or_else(|| dim_err(format!("right operand must be a matrix, got {:?}", b.shape())))?;
            if kb != k {
                return Err(dim_err(format!("{:?} · {:?}ᵀ", a.shape(), b.shape())));
            }
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), (k, 1), b.data(), (1, k), &mut c, (n, 1));
            Tensor::new(vec![m, n], c)?
        }
        Op::AddBias(a, bias) => {
            let (a, bias) = (val(a), val(bias));
            let n = *a.shape().last().unwrap_or(&1);
            if bias.rank() != 1 || bias.numel() != n || a.rank() == 0 || a.rank() > 2 {
                return Err(dim_err(format!("{:?} + bias {:?}", a.shape(), bias.shape())));
            }
            let data = a.data().chunks(n).flat_map(|row| row.iter().zip(bias.data()).map(|(&x, &b)| x + b)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        Op::Add(a, b) => val(a).zip_map(val(b), |x, y| x + y).map_err(|e| dim_err(e.to_string()))?,
        Op::Mul(a, b) => val(a).zip_map(val(b), |x, y| x * y).map_err(|e| dim_err(e.to_string()))?,
        Op::Relu(a) => val(a).map(|x| if x.primal() > 0.0 { x } else { T::zero() }),
        Op::Abs(a) => val(a).map(|x| x.abs()),
        Op::Sum(a) => Tensor::scalar(val(a).sum()),
        Op::SoftmaxCrossEntropy { logits, targets } => {
            let (z, y) = (val(logits), val(targets));
            if z.shape() != y.shape() || z.rank() == 0 || z.rank() > 2 {
                return Err(dim_err(format!("logits {:?} vs targets {:?}", z.shape(), y.shape())));
            }
            let (rows, classes) = rows_cols(z);
            let logp = log_softmax_rows(z.data(), classes);
            let total: T = logp.iter().zip(y.data()).map(|(&lp, &t)| t * lp).sum();
            Tensor::scalar(-total / T::from_f64(rows as f64))
        }
        Op::MeanSquaredError(a, b) => {
            let d = val(a).zip_map(val(b), |x, y| (x - y) * (x - y)).map_err(|e| dim_err(e.to_string()))?;
            Tensor::scalar(d.sum() / T::from_f64(d.numel() as f64))
        }
    })
}

/// Forward pass returning only the output value.
pub fn evaluate<T: Scalar>(graph: &Graph, inputs: &Bindings<T>) -> Result<Tensor<T>> {
    Ok(forward(graph, inputs)?.output().clone())
}

/// `∂output/∂p` for each named input `p`.
pub fn gradient<T: Scalar>(graph: &Graph, inputs: &Bindings<T>, wrt: &[&str]) -> Result<Bindings<T>> {
    forward(graph, inputs)?.backward(wrt)
}

/// `H·v` for the Hessian of the scalar output with respect to the inputs
/// named in `direction`, evaluated by running the reverse pass over dual
/// numbers whose tangents are seeded with `v` (forward-over-reverse).
pub fn hessian_vector_product<T: Scalar>(graph: &Graph, inputs: &Bindings<T>, direction: &Bindings<T>) -> Result<Bindings<T>> {
    let mut lifted: Bindings<Dual<T>> = HashMap::with_capacity(inputs.len());
    for (name, value) in inputs {
        let t = match direction.get(name) {
            Some(v) => Tensor::dual(value, v)?,
            None => Tensor::constant(value),
        };
        lifted.insert(name.clone(), t);
    }
    let mut names: Vec<&str> = direction.keys().map(String::as_str).collect();
    names.sort_unstable();
    for name in &names {
        if !inputs.contains_key(*name) {
            return Err(Error::MissingInput(name.to_string()));
        }
    }
    let grads = gradient(graph, &lifted, &names)?;
    Ok(grads.into_iter().map(|(k, v)| (k, v.tangent_part())).collect())
}

/// `H·g` where `g` is the gradient with respect to `wrt`.
pub fn hessian_grad_product<T: Scalar>(graph: &Graph, inputs: &Bindings<T>, wrt: &[&str]) -> Result<Bindings<T>> {
    let g = gradient(graph, inputs, wrt)?;
    hessian_vector_product(graph, inputs, &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: Vec<(&str, Tensor)>) -> Bindings {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.relu(x);
        let out = evaluate(&g, &bind(vec![("x", Tensor::vector(vec![-1.0, 0.0, 2.0]))])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_matmul_sum() {
        let mut g = Graph::new();
        let w = g.input("W");
        let x = g.input("x");
        let wx = g.matmul(w, x);
        g.sum(wx);
        let out = evaluate(&g, &bind(vec![("W", Tensor::identity(2)), ("x", Tensor::vector(vec![3.0, 4.0]))])).unwrap();
        assert_eq!(out.item(), Some(7.0));
    }

    #[test]
    fn uniform_softmax_cross_entropy() {
        let mut g = Graph::new();
        let z = g.input("z");
        let y = g.input("y");
        g.softmax_cross_entropy(z, y);
        let out = evaluate(&g, &bind(vec![("z", Tensor::vector(vec![0.0, 0.0])), ("y", Tensor::vector(vec![1.0, 0.0]))])).unwrap();
        assert!((out.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g.input("w");
        let sq = g.mul(w, w);
        g.sum(sq);
        let grads = gradient(&g, &bind(vec![("w", Tensor::scalar(3.0))]), &["w"]).unwrap();
        assert_eq!(grads["w"].item(), Some(6.0));
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut g = Graph::new();
        let w = g.input("w");
        let x = g.input("x");
        let r = g.relu(w);
        let p = g.mul(r, x);
        g.sum(p);
        let grads = gradient(&g, &bind(vec![("w", Tensor::scalar(-1.0)), ("x", Tensor::scalar(5.0))]), &["w"]).unwrap();
        assert_eq!(grads["w"].item(), Some(0.0));
        // and at the kink
        let grads = gradient(&g, &bind(vec![("w", Tensor::scalar(0.0)), ("x", Tensor::scalar(5.0))]), &["w"]).unwrap();
        assert_eq!(grads["w"].item(), Some(0.0));
    }

    fn quadratic() -> Graph {
        // ½ wᵀ A w written as ½ Σ (A w) ⊙ w, with the ½ folded into A
        let mut g = Graph::new();
        let a = g.input("A");
        let w = g.input("w");
        let aw = g.matmul(a, w);
        let prod = g.mul(aw, w);
        g.sum(prod);
        g
    }

    #[test]
    fn diagonal_quadratic_hessian_grad() {
        let g = quadratic();
        let inputs = bind(vec![("A", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap()), ("w", Tensor::vector(vec![1.0, 1.0]))]);
        let grad = gradient(&g, &inputs, &["w"]).unwrap();
        assert_eq!(grad["w"].data(), &[2.0, 4.0]);
        let hg = hessian_grad_product(&g, &inputs, &["w"]).unwrap();
        assert_eq!(hg["w"].data(), &[4.0, 16.0]);
    }

    #[test]
    fn linear_loss_has_zero_hessian() {
        let mut g = Graph::new();
        let c = g.input("c");
        let w = g.input("w");
        let p = g.mul(c, w);
        g.sum(p);
        let inputs = bind(vec![("c", Tensor::vector(vec![1.5, -2.0, 3.0])), ("w", Tensor::vector(vec![0.3, 0.7, -4.0]))]);
        let hg = hessian_grad_product(&g, &inputs, &["w"]).unwrap();
        assert!(hg["w"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        g.matmul(a, b);
        let inputs = bind(vec![("a", Tensor::zeros(vec![2, 3])), ("b", Tensor::zeros(vec![2, 2]))]);
        match evaluate(&g, &inputs) {
            Err(Error::Dimension { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn non_scalar_output_cannot_be_differentiated() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.relu(x);
        let err = gradient(&g, &bind(vec![("x", Tensor::vector(vec![1.0, 2.0]))]), &["x"]).unwrap_err();
        assert!(matches!(err, Error::NonScalarOutput(_)));
    }

    #[test]
    fn missing_and_unknown_inputs() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.sum(x);
        assert!(matches!(evaluate::<f64>(&g, &Bindings::new()), Err(Error::MissingInput(_))));
        let inputs = bind(vec![("x", Tensor::vector(vec![1.0]))]);
        assert!(matches!(gradient(&g, &inputs, &["y"]), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn bias_broadcast_only_over_rows() {
        let mut g = Graph::new();
        let x = g.input("x");
        let b = g.input("b");
        let y = g.add_bias(x, b);
        g.sum(y);
        let inputs = bind(vec![("x", Tensor::zeros(vec![3, 2])), ("b", Tensor::vector(vec![1.0, 2.0]))]);
        let grads = gradient(&g, &inputs, &["b"]).unwrap();
        assert_eq!(grads["b"].data(), &[3.0, 3.0]);
        let bad = bind(vec![("x", Tensor::zeros(vec![3, 2])), ("b", Tensor::vector(vec![1.0, 2.0, 3.0]))]);
        assert!(evaluate(&g, &bad).is_err());
    }
}

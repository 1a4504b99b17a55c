//! Reverse-mode automatic differentiation over a dynamically recorded graph.
//!
//! A [`Graph`] records every operation as it is executed. Nodes are appended
//! in execution order, so walking the node list backwards is a valid
//! topological order for the backward pass and the result is deterministic
//! for a given build order.
//!
//! Basic kernels are recorded as [`Op`] variants. Layers with fused forward
//! and backward passes (convolution, batch norm, the frequency-domain pools)
//! register themselves through [`BackwardOp`].

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule of a fused operation.
pub trait BackwardOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the gradient of the output.
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// returned entry may then be `None`.
    fn backward(&self, grad_output: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Reshape(Var),
    SoftmaxXent {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
    Custom(Vec<Var>, Box<dyn BackwardOp<T>>),
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddBias(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Sum(a) | Mean(a) | Max(a, _) | Exp(a) | Log(a) | Relu(a) | Reshape(a) => {
                vec![*a]
            }
            SoftmaxXent { logits, .. } => vec![*logits],
            Custom(inputs, _) => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of leaf variables produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }
}

/// A recorded computation. Single-threaded; build one per forward pass.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    backward_done: Cell<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, value: Rc<Tensor<T>>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var> {
        let mut nodes = self.nodes.borrow_mut();
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{name} (node {})", nodes.len())));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn any_requires(&self, inputs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        inputs.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Result<Var> {
        self.push(Rc::new(t), Op::Leaf, false, "constant")
    }

    /// Input whose gradient is reported in [`Gradients`].
    pub fn variable(&self, t: Tensor<T>) -> Result<Var> {
        self.push(Rc::new(t), Op::Leaf, true, "variable")
    }

    /// Leaf bound to a stored parameter; its gradient is accumulated into the store.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        self.push(p.shared_value(), Op::Param(id), true, &p.name)
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, name, f)?;
        self.push(Rc::new(out), op, self.any_requires(&[a, b]), name)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|v| v.is_zero()) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `x + bias` with `bias` of shape `[C]` broadcast along axis 1 of `x`
    /// (`[N, C]` or `[N, C, ...]`).
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let shape = vx.shape();
        if shape.len() < 2 || vb.shape() != [shape[1]] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match axis 1 of {:?}", vb.shape(), shape),
            ));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut out = (*vx).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += vb.data()[(i / inner) % c];
        }
        self.push(
            Rc::new(out),
            Op::AddBias(x, bias),
            self.any_requires(&[x, bias]),
            "add_bias",
        )
    }

    pub fn scale(&self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(Rc::new(out), Op::Scale(a, s), self.any_requires(&[a]), "scale")
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push(Rc::new(out), Op::AddScalar(a), self.any_requires(&[a]), "add_scalar")
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = match (va.shape(), vb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => {
                return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
            }
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(Rc::new(out), Op::MatMul(a, b), self.any_requires(&[a, b]), "matmul")
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Rc::new(out), Op::Sum(a), self.any_requires(&[a]), "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::domain("mean", "mean of an empty tensor"));
        }
        let out = Tensor::scalar(va.sum() / T::cast(va.len() as f64));
        self.push(Rc::new(out), Op::Mean(a), self.any_requires(&[a]), "mean")
    }

    /// Maximum over all entries; ties resolve to the first index.
    pub fn max(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (index, best) = va
            .data()
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, T)>, (i, &v)| match acc {
                Some((_, b)) if v <= b => acc,
                _ => Some((i, v)),
            })
            .ok_or_else(|| Error::domain("max", "max of an empty tensor"))?;
        self.push(
            Rc::new(Tensor::scalar(best)),
            Op::Max(a, index),
            self.any_requires(&[a]),
            "max",
        )
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(T::exp);
        self.push(Rc::new(out), Op::Exp(a), self.any_requires(&[a]), "exp")
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::domain("log", format!("logarithm of non-positive value {bad}")));
        }
        let out = va.map(T::ln);
        self.push(Rc::new(out), Op::Log(a), self.any_requires(&[a]), "log")
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Rc::new(out), Op::Relu(a), self.any_requires(&[a]), "relu")
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = (*self.value(a)).clone().reshape(shape)?;
        self.push(Rc::new(out), Op::Reshape(a), self.any_requires(&[a]), "reshape")
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against integer labels.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, k) = match vl.shape() {
            [n, k] if *n == labels.len() && *n > 0 => (*n, *k),
            s => {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("logits {s:?} do not match {} labels", labels.len()),
                ));
            }
        };
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} outside [0, {k})")));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (row, (&label, p)) in vl.data().chunks(k).zip(labels.iter().zip(probs.chunks_mut(k))) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - m).exp();
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
            loss += z.ln() + m - row[label];
        }
        let loss = Tensor::scalar(loss / T::cast(n as f64));
        let probs = Tensor::new(vec![n, k], probs)?;
        let op = Op::SoftmaxXent {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        self.push(Rc::new(loss), op, self.any_requires(&[logits]), "softmax_cross_entropy")
    }

    /// Records a fused operation whose forward result has already been computed.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, op: Box<dyn BackwardOp<T>>) -> Result<Var> {
        let name = op.name();
        let requires = self.any_requires(inputs);
        self.push(Rc::new(output), Op::Custom(inputs.to_vec(), op), requires, name)
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Parameter gradients are added into `store`; every parameter touched by
    /// this graph must have had its gradient cleared with
    /// [`ParamStore::zero_grads`] beforehand. A graph can be differentiated
    /// only once.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.backward_done.get() {
            return Err(Error::Contract("backward already ran on this graph".into()));
        }
        let nodes = self.nodes.borrow();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        for node in nodes.iter() {
            if let Op::Param(id) = node.op {
                if store.has_grad(id) {
                    return Err(Error::Contract(format!(
                        "gradient of `{}` was not reset before backward",
                        store.get(id).name
                    )));
                }
            }
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut leaves = HashMap::new();

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaves.insert(id, grad);
                    continue;
                }
                Op::Param(pid) => {
                    store.accumulate_grad(*pid, grad)?;
                    continue;
                }
                _ => {}
            }
            let inputs = node.op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|v| nodes[v.0].requires_grad).collect();
            let input_grads = local_backward(&nodes, node, &grad, &needs)?;
            for ((input, g), need) in inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

fn local_backward<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let val = |v: &Var| &nodes[v.0].value;
    let one = |t: Tensor<T>| Ok(vec![Some(t)]);
    match &node.op {
        Op::Leaf | Op::Param(_) => Ok(vec![]),
        Op::Add(..) => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub(..) => Ok(vec![Some(g.clone()), Some(g.map(|v| -v))]),
        Op::Mul(a, b) => Ok(vec![
            Some(g.zip_map(val(b), "mul", |x, y| x * y)?),
            Some(g.zip_map(val(a), "mul", |x, y| x * y)?),
        ]),
        Op::Div(a, b) => {
            let (va, vb) = (val(a), val(b));
            let ga = g.zip_map(vb, "div", |x, y| x / y)?;
            let mut gb = g.clone();
            for ((o, &x), &y) in gb.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                *o = -*o * x / (y * y);
            }
            Ok(vec![Some(ga), Some(gb)])
        }
        Op::AddBias(x, b) => {
            let shape = val(x).shape();
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            let mut gb = Tensor::zeros(val(b).shape().to_vec());
            for (i, &v) in g.data().iter().enumerate() {
                gb.data_mut()[(i / inner) % c] += v;
            }
            Ok(vec![Some(g.clone()), Some(gb)])
        }
        Op::Scale(_, s) => one(g.map(|v| v * *s)),
        Op::AddScalar(_) => one(g.clone()),
        Op::MatMul(a, b) => {
            let (va, vb) = (val(a), val(b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            let ga = if needs[0] {
                let mut d = vec![T::zero(); m * k];
                T::gemm(m, n, k, g.data(), false, vb.data(), true, &mut d, false);
                Some(Tensor::new(vec![m, k], d)?)
            } else {
                None
            };
            let gb = if needs[1] {
                let mut d = vec![T::zero(); k * n];
                T::gemm(k, m, n, va.data(), true, g.data(), false, &mut d, false);
                Some(Tensor::new(vec![k, n], d)?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }
        Op::Sum(a) => one(Tensor::full(val(a).shape().to_vec(), g.item()?)),
        Op::Mean(a) => {
            let va = val(a);
            one(Tensor::full(va.shape().to_vec(), g.item()? / T::cast(va.len() as f64)))
        }
        Op::Max(a, index) => {
            let mut ga = Tensor::zeros(val(a).shape().to_vec());
            ga.data_mut()[*index] = g.item()?;
            one(ga)
        }
        Op::Exp(_) => one(g.zip_map(&node.value, "exp", |x, y| x * y)?),
        Op::Log(a) => one(g.zip_map(val(a), "log", |x, y| x / y)?),
        Op::Relu(a) => one(g.zip_map(val(a), "relu", |x, y| if y > T::zero() { x } else { T::zero() })?),
        Op::Reshape(a) => one(g.clone().reshape(val(a).shape().to_vec())?),
        Op::SoftmaxXent { probs, labels, .. } => {
            let k = probs.shape()[1];
            let scale = g.item()? / T::cast(labels.len() as f64);
            let mut d = probs.clone();
            for (row, &label) in d.data_mut().chunks_mut(k).zip(labels) {
                row[label] -= T::one();
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            one(d)
        }
        Op::Custom(_, op) => op.backward(g, needs),
    }
}

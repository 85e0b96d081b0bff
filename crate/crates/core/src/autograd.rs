//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op appends a node
//! holding its output value and enough saved state for its backward rule;
//! [`Graph::backward`] sweeps the nodes once in reverse recording order.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, Conv3dGeometry};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Strength of the gradient reversal, constrained to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct GrlCoefficient(f64);

impl GrlCoefficient {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "GRL coefficient {lambda} outside [0, 1]"
            )));
        }
        Ok(GrlCoefficient(lambda))
    }

    pub const ZERO: GrlCoefficient = GrlCoefficient(0.0);
    pub const ONE: GrlCoefficient = GrlCoefficient(1.0);

    pub fn lambda(self) -> f64 {
        self.0
    }
}

/// Deliberately wrong backward rules, for checking that the gradient checker
/// catches them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    SigmoidDerivative,
}

enum Op<F> {
    Leaf,
    Reshape(usize),
    AvgPool { x: usize, axes: Vec<usize> },
    Linear { w: usize, b: Option<usize>, x: usize },
    Relu(usize),
    Sigmoid(usize),
    BroadcastMul { a: usize, x: usize },
    Add(usize, usize),
    Conv3d { x: usize, k: usize, b: Option<usize>, geo: Conv3dGeometry },
    SoftmaxCe { logits: usize, labels: Vec<usize>, probs: Vec<F> },
    GradReverse { x: usize, lambda: F },
    Dropout { x: usize, mask: Vec<F> },
    ConcatLeading(Vec<usize>),
    Sum(usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F: Real> {
    id: u64,
    nodes: Vec<Node<F>>,
    fault: Option<Fault>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph("variable belongs to a different graph".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, op_name: &'static str, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var { graph: self.id, index: self.nodes.len() - 1 })
    }

    /// Records an input. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { graph: self.id, index: self.nodes.len() - 1 }
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let i = self.idx(v).expect("foreign variable");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.idx(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.clone().reshape(shape)?;
        self.push(out, Op::Reshape(xi), "reshape", &[xi])
    }

    /// Mean over `axes`, which stay in the result with extent 1.
    pub fn avg_pool_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = ops::avg_pool_axes(&self.nodes[xi].value, axes)?;
        self.push(out, Op::AvgPool { x: xi, axes: axes.to_vec() }, "avg_pool_axes", &[xi])
    }

    /// `W·x + b` along the trailing axis of `x`, batched over leading axes.
    pub fn linear(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let (wi, xi) = (self.idx(w)?, self.idx(x)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let out = ops::linear(
            &self.nodes[wi].value,
            bi.map(|i| &self.nodes[i].value),
            &self.nodes[xi].value,
        )?;
        let mut inputs = vec![wi, xi];
        inputs.extend(bi);
        self.push(out, Op::Linear { w: wi, b: bi, x: xi }, "linear", &inputs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi]
            .value
            .map(|v| if v > F::ZERO { v } else { F::ZERO });
        self.push(out, Op::Relu(xi), "relu", &[xi])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(ops::sigmoid_scalar);
        self.push(out, Op::Sigmoid(xi), "sigmoid", &[xi])
    }

    /// Elementwise `a ⊙ x` where `a` may hold extent 1 on any axis of `x`.
    pub fn broadcast_mul(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ai, xi) = (self.idx(a)?, self.idx(x)?);
        let out = ops::broadcast_mul(&self.nodes[ai].value, &self.nodes[xi].value)?;
        self.push(out, Op::BroadcastMul { a: ai, x: xi }, "broadcast_mul", &[ai, xi])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape() != bv.shape() {
            return shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::Add(ai, bi), "add", &[ai, bi])
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        geo: Conv3dGeometry,
    ) -> Result<Var> {
        let (xi, ki) = (self.idx(x)?, self.idx(kernels)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let out = ops::conv3d(
            &self.nodes[xi].value,
            &self.nodes[ki].value,
            bi.map(|i| &self.nodes[i].value),
            &geo,
        )?;
        let mut inputs = vec![xi, ki];
        inputs.extend(bi);
        self.push(out, Op::Conv3d { x: xi, k: ki, b: bi, geo }, "conv3d", &inputs)
    }

    /// Mean softmax cross-entropy of `(N, K)` logits; returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.idx(logits)?;
        let (loss, probs) = ops::softmax_cross_entropy(&self.nodes[li].value, labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe { logits: li, labels: labels.to_vec(), probs },
            "softmax_cross_entropy",
            &[li],
        )
    }

    /// Identity forward; backward scales the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, coeff: GrlCoefficient) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.clone();
        let lambda = F::from_f64(coeff.lambda());
        self.push(out, Op::GradReverse { x: xi, lambda }, "grad_reverse", &[xi])
    }

    /// Multiplies by a precomputed inverted-dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<F>) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        if mask.len() != xv.len() {
            return shape_err(format!("dropout mask of {} for {:?}", mask.len(), xv.shape()));
        }
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::Dropout { x: xi, mask }, "dropout", &[xi])
    }

    pub fn concat_leading(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<F>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let out = Tensor::stack_leading(&refs)?;
        self.push(out, Op::ConcatLeading(idx.clone()), "concat", &idx)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s: F = self.nodes[xi].value.data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(xi), "sum", &[xi])
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// depends on a `requires_grad` leaf are returned; repeated uses add up.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::Graph("loss is detached from every differentiable input".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::full(self.nodes[li].value.shape(), F::ONE));
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].as_ref() else { continue };
            // Clone so `grads` can be mutated below; gradients of intermediates
            // are kept so callers can inspect them.
            let g = g.clone();
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        let rg = |j: usize| self.nodes[j].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Reshape(x) => {
                let d = g.clone().reshape(val(*x).shape())?;
                accumulate(grads, *x, d);
            }
            Op::AvgPool { x, axes } => {
                accumulate(grads, *x, ops::avg_pool_backward(val(*x).shape(), axes, g));
            }
            Op::Linear { w, b, x } => {
                let (dw, db, dx) = ops::linear_backward(val(*w), val(*x), g);
                if rg(*w) {
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        accumulate(grads, *b, db);
                    }
                }
                if rg(*x) {
                    accumulate(grads, *x, dx);
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > F::ZERO { gv } else { F::ZERO })
                    .collect();
                accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let wrong = self.fault == Some(Fault::SigmoidDerivative);
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| if wrong { gv * s } else { gv * s * (F::ONE - s) })
                    .collect();
                accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), data));
            }
            Op::BroadcastMul { a, x } => {
                let (da, dx) = ops::broadcast_mul_backward(val(*a), val(*x), g);
                if rg(*a) {
                    accumulate(grads, *a, da);
                }
                if rg(*x) {
                    accumulate(grads, *x, dx);
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Conv3d { x, k, b, geo } => {
                let (dx, dk, db) = ops::conv3d_backward_parts(val(*x), val(*k), g, geo, rg(*x))?;
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if rg(*k) {
                    accumulate(grads, *k, dk);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let lv = val(*logits);
                let k = lv.shape()[1];
                let scale = g.data()[0] / F::from_usize(labels.len());
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= F::ONE;
                }
                for v in &mut d {
                    *v *= scale;
                }
                accumulate(grads, *logits, Tensor::from_parts(lv.shape().to_vec(), d));
            }
            Op::GradReverse { x, lambda } => {
                let l = *lambda;
                accumulate(grads, *x, g.map(|v| -(l * v)));
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::ConcatLeading(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    if rg(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        accumulate(grads, p, Tensor::from_parts(pv.shape().to_vec(), d));
                    }
                    offset += n;
                }
            }
            Op::Sum(x) => {
                let xv = val(*x);
                accumulate(grads, *x, Tensor::full(xv.shape(), g.data()[0]));
            }
        }
        Ok(())
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], j: usize, d: Tensor<F>) {
    match &mut grads[j] {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(d.data()) {
                *a += *v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Result of a backward sweep.
pub struct Gradients<F> {
    graph: u64,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

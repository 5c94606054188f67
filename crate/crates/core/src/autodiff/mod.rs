//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes one node whose
//! inputs were pushed earlier, so node order is a valid topological order and
//! [`Graph::backward`] simply walks the tape in reverse.
//!
//! ```
//! use motionseg::autodiff::Graph;
//! use motionseg::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(2.0));
//! let y = g.leaf(Tensor::scalar(3.0));
//! let z = g.mul(x, y).unwrap();
//! let grads = g.backward(z).unwrap();
//! assert_eq!(grads.wrt(x).item(), 3.0);
//! assert_eq!(grads.wrt(y).item(), 2.0);
//! ```

mod gradcheck;
pub(crate) mod kernels;
mod ops;

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport, ParamError};
pub use ops::{sigmoid, Reduction, UnaryKind};

pub(crate) use ops::Op;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    /// Position of the node on its tape.
    pub fn id(self) -> usize {
        self.index as usize
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Confined to one thread from construction to backward.
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
    /// Number of cosine similarities evaluated with a zero-norm operand.
    zero_norm_events: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            zero_norm_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or any input we want gradients for).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn contains(&self, v: Var) -> bool {
        v.graph == self.id && v.id() < self.nodes.len()
    }

    pub fn zero_norm_events(&self) -> usize {
        self.zero_norm_events
    }

    fn node(&self, v: Var) -> &Node {
        assert!(self.contains(v), "variable {v:?} does not belong to this graph");
        &self.nodes[v.id()]
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("graph too large");
        self.nodes.push(Node { value, op, requires_grad });
        Var { graph: self.id, index }
    }

    /// Pushes the result of an op on `inputs`; the node needs gradients iff any input does.
    pub(crate) fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.node(v).requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Accumulates gradients of the scalar `seed` with respect to every node.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if !self.contains(seed) {
            return Err(Error::Usage(format!("seed {seed:?} is not a node of this graph")));
        }
        if self.value(seed).len() != 1 {
            return Err(Error::Usage(format!(
                "backward seed must be a scalar, got shape {:?}",
                self.shape(seed)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.id()] = Some(vec![1.0]);
        for i in (0..=seed.id()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                let mut sink = GradSink { graph: self, grads: &mut grads };
                ops::backward(&node.op, &node.value, &g, &mut sink);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { graph: self.id, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(), grads })
    }
}

/// Destination for the input gradients produced by one backward rule.
pub(crate) struct GradSink<'a> {
    graph: &'a Graph,
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> GradSink<'a> {
    pub(crate) fn value(&self, v: Var) -> &'a Tensor {
        &self.graph.nodes[v.id()].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.graph.nodes[v.id()].requires_grad
    }

    /// Zero-initialised accumulation buffer for `v`, or `None` if `v` needs no gradient.
    pub(crate) fn buf(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.wants(v) {
            return None;
        }
        let n = self.graph.nodes[v.id()].value.len();
        Some(self.grads[v.id()].get_or_insert_with(|| vec![0.0; n]))
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f64]) {
        if let Some(buf) = self.buf(v) {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    graph: u32,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if no path from `v` reaches the seed.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        assert_eq!(v.graph, self.graph, "variable from another graph");
        self.grads[v.id()]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.id()].clone(), g.clone()))
    }

    /// Gradient for `v`; exactly zero when `v` does not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.id()].clone()))
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.id()].as_deref()
    }
}

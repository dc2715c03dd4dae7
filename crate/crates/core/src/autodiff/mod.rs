//! Reverse-mode automatic differentiation over a per-forward tape.
//!
//! A [`Graph`] records every op in construction order. [`Graph::backward`]
//! walks the tape once, newest node first, and accumulates gradients into the
//! parents of each node. Leaves created with [`Graph::param`] keep their
//! gradient; everything else is released as soon as it has been propagated.

mod basic;
mod nn;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Backward rule: receives the output gradient and which parents need one.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Param,
    Constant,
    Op(&'static str),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    kind: Kind,
}

/// The tape. Confined to one thread; build one per forward/backward pass.
pub struct Graph<T: Scalar> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: gradients are kept after [`backward`](Self::backward).
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, Kind::Param)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, Kind::Constant)
    }

    fn leaf(&self, value: Tensor<T>, kind: Kind) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: kind == Kind::Param,
            kind,
        });
        Var {
            graph: self.id,
            index: nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.index].value)
    }

    /// Checked form of [`value`](Self::value) used by ops.
    pub(crate) fn val(&self, v: Var) -> Result<Rc<Tensor<T>>> {
        self.check(v)?;
        Ok(self.value(v))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.index].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.index].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.index >= self.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(())
    }

    /// Record an op. The value is checked for NaN/Inf before it enters the tape.
    pub(crate) fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        for &p in parents {
            self.check(p)?;
        }
        let value = value.check_finite(name)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.index].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.index).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            kind: Kind::Op(name),
        });
        Ok(Var {
            graph: self.id,
            index: nodes.len() - 1,
        })
    }

    /// Name of the op that produced `v` (`"param"` / `"constant"` for leaves).
    pub fn op_name(&self, v: Var) -> &'static str {
        match self.nodes.borrow()[v.index].kind {
            Kind::Param => "param",
            Kind::Constant => "constant",
            Kind::Op(name) => name,
        }
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_retaining(loss, &[])
    }

    /// Like [`backward`](Self::backward), also keeping gradients of the listed intermediate nodes.
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients<T>> {
        self.check(loss)?;
        for &r in retain {
            self.check(r)?;
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.index].value.shape();
        if nodes[loss.index].value.len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let keep: Vec<bool> = {
            let mut k: Vec<bool> = nodes.iter().map(|n| n.kind == Kind::Param).collect();
            for r in retain {
                k[r.index] = true;
            }
            k
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::ones(shape.to_vec()));
        for i in (0..=loss.index).rev() {
            let node = &nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = (if keep[i] { grads[i].clone() } else { grads[i].take() }) else {
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &need)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for {:?}", node.kind);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let mut kept = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if keep[i] {
                if let Some(g) = g {
                    kept.insert(i, g);
                }
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads: kept,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Gradients produced by one backward pass, keyed by leaf (or retained) node.
pub struct Gradients<T> {
    graph: u64,
    grads: HashMap<usize, Tensor<T>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(&v.index)
    }

    /// Gradient of `v`, zero-filled when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var) -> Result<Tensor<T>> {
        if v.graph != self.graph || v.index >= self.shapes.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(self
            .grads
            .get(&v.index)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.index].clone())))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.remove(&v.index)
    }
}

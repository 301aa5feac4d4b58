//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Var`] executes eagerly and, when the tape is
//! recording and at least one input requires a gradient, appends a node with
//! a backward closure. [`Tape::backward`] walks the nodes in exact reverse
//! execution order.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use super::grid::{Grid, Shape};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Maps the gradient of a node's output to one optional gradient per parent.
pub type BackwardFn = Box<dyn Fn(&Grid) -> Vec<Option<Grid>>>;

struct Node {
    value: Arc<Grid>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that only evaluates; nothing requires a gradient.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Grid) -> Var<'_> {
        self.push(Node {
            value: Arc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Grid) -> Var<'_> {
        self.push(Node {
            value: Arc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.recording,
            param: None,
        })
    }

    /// Register parameter `id` of `store` as a differentiable leaf.
    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Var<'t> {
        self.push(Node {
            value: store.shared(id),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.recording,
            param: Some(id),
        })
    }

    /// Append the result of a custom operation.
    ///
    /// `backward` receives the output gradient and must return one entry per
    /// parent, in order. It is dropped without being called when no parent
    /// requires a gradient.
    pub fn op<'t, F>(&'t self, value: Grid, parents: &[Var<'t>], backward: F) -> Var<'t>
    where
        F: Fn(&Grid) -> Vec<Option<Grid>> + 'static,
    {
        let requires_grad = self.recording && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let (parents, backward): (Vec<usize>, Option<BackwardFn>) = if requires_grad {
            (parents.iter().map(|p| p.id).collect(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        self.push(Node {
            value: Arc::new(value),
            parents,
            backward,
            requires_grad,
            param: None,
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Grid>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Grid::full(root.value.shape(), 1.0));
        let mut leaves = BTreeMap::new();
        let mut params: BTreeMap<ParamId, Grid> = BTreeMap::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(backward) => {
                    let parent_grads = backward(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[pid].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                        match &mut grads[pid] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    if let Some(pid) = node.param {
                        match params.get_mut(&pid) {
                            Some(acc) => Grid::add_assign(acc, &g),
                            None => {
                                params.insert(pid, g);
                            }
                        }
                    } else {
                        leaves.insert(id, g);
                    }
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Grid> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the value, detached from the tape.
    pub fn to_grid(&self) -> Grid {
        (*self.value()).clone()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    leaves: BTreeMap<usize, Grid>,
    params: BTreeMap<ParamId, Grid>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::leaf`].
    pub fn wrt(&self, var: Var<'_>) -> Option<&Grid> {
        self.leaves.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Grid> {
        self.params.get(&id)
    }

    /// Gradient of every parameter in `store`; unused parameters get exact zeros.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Grid> {
        store
            .ids()
            .map(|id| match self.params.get(&id) {
                Some(g) => g.clone(),
                None => Grid::zeros(store.get(id).shape()),
            })
            .collect()
    }

    pub fn into_store_order(mut self, store: &ParamStore) -> Vec<Grid> {
        store
            .ids()
            .map(|id| {
                self.params
                    .remove(&id)
                    .unwrap_or_else(|| Grid::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

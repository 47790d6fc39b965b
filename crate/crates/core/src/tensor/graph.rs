use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Maps `(parent values, output value, output gradient, needs_grad mask)` to
/// one optional gradient per parent.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[&Tensor], &Tensor, &Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A single-owner recording of a differentiable computation.
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph in checked mode: any op producing NaN or infinity fails with
    /// [`Error::NumericFault`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn unchecked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn record(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NumericFault(format!(
                "non-finite value produced by op #{} (shape {:?})",
                self.nodes.len(),
                value.shape()
            )));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// Nodes are visited in reverse recording order. Each parent's gradient is
    /// accumulated in the order its consumers appear on the tape, so repeated
    /// runs are bitwise identical.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&parent_values, &node.value, &grad_out, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), needed) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let (Some(g), true) = (g, *needed) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Intermediate gradients are consumed; leaves keep theirs.
            if !node.parents.is_empty() {
                grads[idx] = None;
            }
        }

        // Leaves that were never reached get explicit zeros.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && node.parents.is_empty() && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of every trainable leaf after [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

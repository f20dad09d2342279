//! Graph inspection and reverse-mode backward.

use std::collections::HashSet;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::op::{GradMap, OpKind};
use crate::tensor::Tensor;

/// One executed operation in a traced graph.
#[derive(Debug, Clone)]
pub struct GraphNode {
    /// Creation stamp; doubles as the topological order.
    pub id: usize,
    pub kind: OpKind,
    pub input_ids: Vec<usize>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
}

/// Ordered record of the operations reachable from a root tensor, in
/// topological (creation) order.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<GraphNode>,
}

impl Graph {
    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains_op(&self, kind: OpKind) -> bool {
        self.nodes.iter().any(|n| n.kind == kind)
    }
}

/// Reachable tensors in ascending creation order (a valid topological order,
/// since operations are stamped after their inputs).
fn collect<E: Element>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut nodes = Vec::new();
    while let Some(t) = stack.pop() {
        if !seen.insert(t.id()) {
            continue;
        }
        for p in t.op().parents() {
            stack.push(p.clone());
        }
        nodes.push(t);
    }
    nodes.sort_by_key(|t| t.id());
    nodes
}

/// Snapshot of the operations that produced `root`.
pub fn trace<E: Element>(root: &Tensor<E>) -> Graph {
    let nodes = collect(root)
        .into_iter()
        .map(|t| GraphNode {
            id: t.id(),
            kind: t.op().kind(),
            input_ids: t.op().parents().iter().map(|p| p.id()).collect(),
            shape: t.shape().to_vec(),
            requires_grad: t.requires_grad(),
        })
        .collect();
    Graph { nodes }
}

impl<E: Element> Tensor<E> {
    pub fn trace(&self) -> Graph {
        trace(self)
    }
}

/// Reverse-mode sweep from a scalar loss.
///
/// Visits nodes in exact reverse topological order, summing over fan-out in
/// a per-call accumulator; each gradient-requiring leaf then receives its
/// total exactly once, so repeated calls without `clear_grad` accumulate.
pub fn backward<E: Element>(loss: &Tensor<E>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NotScalar(loss.shape().to_vec()));
    }
    if !loss.requires_grad() {
        return Ok(());
    }
    let order = collect(loss);
    let mut grads = GradMap::new();
    grads.seed(loss, vec![E::one()]);
    for node in order.iter().rev() {
        let Some(g) = grads.take(node) else { continue };
        node.op().backward(node, &g, &mut grads);
        if node.is_leaf() && node.requires_grad() {
            node.accumulate_grad(&g);
        }
    }
    Ok(())
}

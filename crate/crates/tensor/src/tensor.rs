use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::op::Op;

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn fresh_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// N-dimensional array of 32-bit reals (64-bit in check mode) in row-major
/// order, optionally participating in the gradient graph.
///
/// Cloning is cheap: tensors are shared handles. The operation that produced
/// a tensor keeps its inputs alive, so holding a loss tensor holds the whole
/// graph that computed it. Creation order doubles as a topological order
/// stamp: an operation's output id is always greater than its inputs' ids.
pub struct Tensor<E: Element = f32> {
    inner: Rc<Inner<E>>,
}

pub(crate) struct Inner<E: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<E>>>,
    pub(crate) op: Op<E>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.inner.shape,
            self.requires_grad()
        )
    }
}

impl<E: Element> Tensor<E> {
    pub(crate) fn new(shape: Vec<usize>, data: Vec<E>, op: Op<E>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor from raw row-major data. Does not track gradients.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}",
                    shape, shape.iter().product::<usize>(), data.len()),
            });
        }
        Ok(Tensor::new(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn parameter(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(
            shape.to_vec(),
            vec![E::zero(); shape.iter().product()],
            Op::Leaf,
            false,
        )
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Tensor::new(
            shape.to_vec(),
            vec![value; shape.iter().product()],
            Op::Leaf,
            false,
        )
    }

    pub fn scalar(value: E) -> Self {
        Tensor::new(vec![1], vec![value], Op::Leaf, false)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Toggle gradient tracking on a leaf (used to freeze parameter groups).
    ///
    /// Panics when called on an operation output; freezing is a property of
    /// parameters, not of intermediate values.
    pub fn set_requires_grad(&self, value: bool) {
        assert!(
            self.is_leaf(),
            "set_requires_grad is only valid on leaf tensors"
        );
        self.inner.requires_grad.set(value);
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    /// Copy of the raw values.
    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Mutate the raw values in place (optimizer updates, re-normalization).
    ///
    /// Mutating a tensor while a graph built from its old values is still
    /// pending backward produces stale gradients; callers step only after
    /// backward has run.
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [E]) -> R) -> R {
        f(&mut self.inner.data.borrow_mut())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() requires a scalar tensor");
        data[0]
    }

    /// Accumulated gradient, if any (populated on leaves by backward).
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// New leaf holding a copy of this tensor's values, outside any graph.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::new(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            Op::Leaf,
            false,
        )
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    pub(crate) fn op(&self) -> &Op<E> {
        &self.inner.op
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[E]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

/// Convert a tensor between element widths (used by the 64-bit check mode).
pub fn cast<A: Element, B: Element>(t: &Tensor<A>) -> Tensor<B> {
    let data = t.data().iter().map(|v| B::from_f64(v.as_f64())).collect();
    let out = Tensor::new(t.shape().to_vec(), data, Op::Leaf, false);
    if t.requires_grad() {
        out.set_requires_grad(true);
    }
    out
}

//! Gradient tape: an ordered record of differentiable operations.
//!
//! Nodes are appended in execution order, so the record is already a
//! topological order of the computation graph. [`Tape::backward`] walks it in
//! reverse exactly once, accumulating gradients additively across fan-out.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::{Element, Shape, Tensor};
use crate::error::{AruError, Result};

pub type NodeId = usize;

/// Backward closure: receives the gradient w.r.t. this node's output and
/// accumulates contributions into the parents' slots.
pub(crate) type BackFn<T> = Box<dyn Fn(&[T], &mut GradStore<T>)>;

struct NodeRec<T> {
    /// `None` marks a leaf (input/parameter); leaves keep their gradient.
    backward: Option<BackFn<T>>,
}

/// Cheaply cloneable handle to a shared tape.
pub struct Tape<T: Element> {
    inner: Rc<RefCell<Vec<NodeRec<T>>>>,
}

impl<T: Element> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, backward: Option<BackFn<T>>) -> NodeId {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(NodeRec { backward });
        nodes.len() - 1
    }

    /// Registers `t`'s values as a leaf on this tape and returns the tracked
    /// tensor. Leaves retain their gradient after `backward`.
    pub fn leaf(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(None);
        Tensor::with_node(t.data_arc(), t.shape().clone(), Some((self.clone(), id)))
    }

    pub fn leaf_from_vec(&self, data: Vec<T>, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        Ok(self.leaf(&Tensor::from_vec(data, shape)?))
    }

    pub(crate) fn record(
        &self,
        data: Arc<Vec<T>>,
        shape: Shape,
        backward: BackFn<T>,
    ) -> Tensor<T> {
        let id = self.push(Some(backward));
        Tensor::with_node(data, shape, Some((self.clone(), id)))
    }

    pub(crate) fn same(a: &Tape<T>, b: &Tape<T>) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node that
    /// influences the loss; query leaves (or any intermediate) by node id.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<GradStore<T>> {
        if loss.numel() != 1 {
            return Err(AruError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        let loss_id = match (loss.tape(), loss.node_id()) {
            (Some(t), Some(id)) if Tape::same(t, self) => id,
            _ => {
                return Err(AruError::InvalidArgument(
                    "loss tensor is not recorded on this tape".into(),
                ))
            }
        };

        let nodes = self.inner.borrow();
        let mut store = GradStore {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        store.slots[loss_id] = Some(vec![T::one()]);

        for id in (0..=loss_id).rev() {
            let Some(grad) = store.slots[id].take() else {
                continue;
            };
            if let Some(back) = &nodes[id].backward {
                back(&grad, &mut store);
            }
            store.slots[id] = Some(grad);
        }
        Ok(store)
    }

}

/// Gradients produced by one backward pass, indexed by node id.
#[derive(Debug)]
pub struct GradStore<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Element> GradStore<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.slots.get(id).and_then(|s| s.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.slots.get_mut(id).and_then(|s| s.take())
    }

    /// Slot for accumulation, zero-initialized on first touch.
    pub(crate) fn accum(&mut self, id: NodeId, numel: usize) -> &mut [T] {
        let slot = &mut self.slots[id];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); numel]);
        }
        slot.as_deref_mut().unwrap()
    }
}

/// Resolves the tape shared by the operands, if any. Operands recorded on two
/// different tapes cannot be combined.
pub(crate) fn merged_tape<T: Element>(operands: &[&Tensor<T>]) -> Result<Option<Tape<T>>> {
    let mut found: Option<&Tape<T>> = None;
    for t in operands {
        if let Some(tape) = t.tape() {
            match found {
                None => found = Some(tape),
                Some(prev) if Tape::same(prev, tape) => {}
                Some(_) => {
                    return Err(AruError::InvalidArgument(
                        "operands recorded on different tapes".into(),
                    ))
                }
            }
        }
    }
    Ok(found.cloned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&Tensor::ones([3]));
        let err = tape.backward(&w).unwrap_err();
        assert!(matches!(err, AruError::InvalidArgument(_)));
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let tape_a = Tape::<f64>::new();
        let tape_b = Tape::<f64>::new();
        let loss = tape_b.leaf(&Tensor::scalar(1.0));
        assert!(tape_a.backward(&loss).is_err());
    }

    #[test]
    fn sum_of_leaf_gives_ones() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0, 3.0], [3]).unwrap());
        let loss = w.sum_all().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(w.node_id().unwrap()).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = w + w  =>  dy/dw = 2
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&Tensor::from_vec(vec![5.0], [1]).unwrap());
        let y = w.add(&w).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(w.node_id().unwrap()).unwrap(), &[2.0]);
    }

    #[test]
    fn square_gradient() {
        // loss = sum(w^2) at w=3 => grad 6
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&Tensor::from_vec(vec![3.0], [1]).unwrap());
        let loss = w.mul(&w).unwrap().sum_all().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(w.node_id().unwrap()).unwrap(), &[6.0]);
    }
}

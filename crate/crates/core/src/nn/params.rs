//! Registry of trainable parameters and running-stat buffers.
//!
//! Layers register parameters once at construction time and hold `ParamId`s.
//! Each forward pass "attaches" the current values to a tape (or to nothing,
//! for inference), producing leaf tensors the ops can consume; after
//! `backward`, the leaf gradients are absorbed back into the store where the
//! optimizer finds them.

use crate::error::{AruError, Result};
use crate::tensor::tape::{GradStore, NodeId, Tape};
use crate::tensor::{Element, Mode, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BufferId(usize);

pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

pub struct Buffer<T> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<T>,
}

#[derive(Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Shape>,
        value: Vec<T>,
    ) -> ParamId {
        let shape = shape.into();
        assert_eq!(value.len(), shape.numel(), "init length vs shape");
        let grad = vec![T::zero(); value.len()];
        self.params.push(Param {
            name: name.into(),
            shape,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Shape>,
        value: Vec<T>,
    ) -> BufferId {
        let shape = shape.into();
        assert_eq!(value.len(), shape.numel(), "init length vs shape");
        self.buffers.push(Buffer {
            name: name.into(),
            shape,
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn find_param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count across all trainable parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Snapshots current values as leaf tensors, on `tape` when given.
    pub fn attach(&self, tape: Option<&Tape<T>>) -> Attached<T> {
        let tensors: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::from_vec(p.value.clone(), p.shape.clone())
                    .expect("param shape consistent");
                match tape {
                    Some(tape) => tape.leaf(&t),
                    None => t,
                }
            })
            .collect();
        Attached { tensors }
    }

    /// Adds the tape gradients of attached leaves into each parameter's
    /// `grad`; repeated calls accumulate.
    pub fn absorb_grads(&mut self, attached: &Attached<T>, grads: &GradStore<T>) {
        for (p, t) in self.params.iter_mut().zip(&attached.tensors) {
            if let Some(id) = t.node_id() {
                if let Some(g) = grads.get(id) {
                    for (pg, &gv) in p.grad.iter_mut().zip(g) {
                        *pg = *pg + gv;
                    }
                }
            }
        }
    }

    /// Copies values for identically-named parameters/buffers from `src`
    /// (e.g. a deserialized checkpoint). Errors on any name or shape mismatch.
    pub fn load_values(&mut self, src: &crate::tensor::io::TensorFile) -> Result<()> {
        for p in &mut self.params {
            let t = src.find(&p.name).ok_or_else(|| {
                AruError::Format(format!("checkpoint is missing parameter {:?}", p.name))
            })?;
            if t.shape.dims() != p.shape.dims() {
                return Err(AruError::Format(format!(
                    "checkpoint shape {} for {:?}, expected {}",
                    t.shape, p.name, p.shape
                )));
            }
            p.value = t.values();
        }
        for b in &mut self.buffers {
            let t = src.find(&b.name).ok_or_else(|| {
                AruError::Format(format!("checkpoint is missing buffer {:?}", b.name))
            })?;
            if t.shape.dims() != b.shape.dims() {
                return Err(AruError::Format(format!(
                    "checkpoint shape {} for {:?}, expected {}",
                    t.shape, b.name, b.shape
                )));
            }
            b.value = t.values();
        }
        Ok(())
    }
}

/// Leaf tensors for one forward pass, indexed by [`ParamId`].
pub struct Attached<T: Element> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Attached<T> {
    pub fn t(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn node_ids(&self) -> Vec<Option<NodeId>> {
        self.tensors.iter().map(|t| t.node_id()).collect()
    }
}

/// Everything a block needs during forward: attached parameter leaves, the
/// mutable store (for running-stat buffers), and the mode.
pub struct Fwd<'s, 'a, T: Element> {
    pub store: &'s mut ParamStore<T>,
    pub attached: &'a Attached<T>,
    pub mode: Mode,
}

impl<T: Element> Fwd<'_, '_, T> {
    pub fn p(&self, id: ParamId) -> &Tensor<T> {
        self.attached.t(id)
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}

//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional array. When created through a
//! [`Tape`](tape::Tape) it participates in gradient recording: every
//! differentiable operation appends a backward closure to the tape, and
//! [`Tape::backward`](tape::Tape::backward) replays them in reverse order.
//!
//! Element precision is generic: `f32` is the training default, `f64` exists
//! for gradient verification.

pub mod check;
pub mod conv;
pub mod io;
pub mod la;
pub mod ops;
pub mod tape;

use std::fmt;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{AruError, Result};
use tape::{NodeId, Tape};

/// Element dtype tag used by the weight file format.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(AruError::Format(format!("unknown dtype {other:?}"))),
        }
    }
}

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    Float + Copy + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from the first `DTYPE.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Forward-pass mode: train uses batch statistics and updates running stats,
/// eval uses the stored running statistics.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Tensor extents, e.g. `[batch, channels, height, width]` for activations.
#[derive(Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn dims1(&self, op: &'static str) -> Result<usize> {
        match self.0[..] {
            [n] => Ok(n),
            _ => Err(self.rank_err(op, 1)),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.0[..] {
            [a, b] => Ok((a, b)),
            _ => Err(self.rank_err(op, 2)),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.0[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(self.rank_err(op, 3)),
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(self.rank_err(op, 4)),
        }
    }

    fn rank_err(&self, op: &'static str, want: usize) -> AruError {
        AruError::ShapeMismatch {
            op,
            detail: format!("expected rank {want}, got shape {self}"),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "scalar");
        }
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

/// Immutable dense tensor, optionally recorded on a gradient tape.
pub struct Tensor<T: Element> {
    data: Arc<Vec<T>>,
    shape: Shape,
    node: Option<(Tape<T>, NodeId)>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            data: Arc::clone(&self.data),
            shape: self.shape.clone(),
            node: self.node.clone(),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>(shape={}, tracked={})",
            T::DTYPE.name(),
            self.shape,
            self.node.is_some()
        )
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(AruError::ShapeMismatch {
                op: "from_vec",
                detail: format!("{} values for shape {}", data.len(), shape),
            });
        }
        Ok(Tensor {
            data: Arc::new(data),
            shape,
            node: None,
        })
    }

    pub fn from_f64_slice(values: &[f64], shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(values.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor {
            data: Arc::new(vec![T::zero(); n]),
            shape,
            node: None,
        }
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor {
            data: Arc::new(vec![value; n]),
            shape,
            node: None,
        }
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1usize], value)
    }

    pub(crate) fn with_node(
        data: Arc<Vec<T>>,
        shape: Shape,
        node: Option<(Tape<T>, NodeId)>,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor { data, shape, node }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn tape(&self) -> Option<&Tape<T>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same values, detached from any tape.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            data: Arc::clone(&self.data),
            shape: self.shape.clone(),
            node: None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn scalar_value(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(AruError::ShapeMismatch {
                op: "scalar_value",
                detail: format!("expected 1 element, shape is {}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// All values finite? Forward ops use this to reject NaN/Inf eagerly.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_finite<T: Element>(
    data: &[T],
    op: &'static str,
    context: Option<&str>,
) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AruError::NonFinite {
            op,
            context: context.map(str::to_owned),
        })
    }
}

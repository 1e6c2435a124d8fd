//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation records a node, `backward` replays
//! the tape in reverse and accumulates gradients into `requires_grad` leaves.
//! One graph per forward pass; distinct graphs are independent and may live on
//! distinct threads.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_at};
pub use graph::{Graph, OpKind, Var};

use crate::error::{Error, Result};

/// Dense multi-dimensional array of f32 with an optional gradient slot.
///
/// `shape` is row-major; a rank-0 shape (`[]`) is a scalar with one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Build a tensor, validating that the shape matches the data length and
    /// every dimension is positive.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Domain {
                op: "tensor",
                reason: format!("dimension sizes must be positive, got {shape:?}"),
            });
        }
        if numel_of(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                expected: format!("{} elements for shape {shape:?}", numel_of(shape)),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel_of(shape)],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a differentiation leaf.
    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub(crate) fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub(crate) fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// True when every stored value is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

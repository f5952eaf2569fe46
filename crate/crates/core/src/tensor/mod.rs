//! Dense row-major tensors and the handful of differentiable operations the
//! brain-age CNN needs.
//!
//! Image batches use `N×H×W×C` layout, dense activations `N×F`. All
//! arithmetic is carried out in `f64`; 32-bit values only appear in the
//! model container.

mod network;
mod ops;
mod optim;

pub use network::{
    reverse_gradients, shape_chain, ActivationKind, BatchNorm, Conv2d, Dense, Dropout, Layer,
    LayerSpec, Mode, Network,
};
pub use ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_valid, dense_backward,
    dense_forward, dropout_forward, maxpool2x2, maxpool2x2_backward, BatchNormCache,
    BatchNormParams, PoolIndices,
};
pub use optim::{adam_step, OptimizerState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("training-mode batch normalization needs at least 2 samples per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("invalid dropout rate {0}; expected 0 <= rate < 1")]
    InvalidRate(f64),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid layer specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major `f64` tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Dimension(format!(
                "shape {shape:?} has a zero-sized dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn from_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        if let Some(g) = self.grad.as_ref() {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

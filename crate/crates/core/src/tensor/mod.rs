//! Dense row-major `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! Every piece of model math in this crate is assembled from the primitives on
//! [`Tape`]. A tape records one forward computation; [`Tape::backward`] then
//! walks it in reverse and deposits gradients on the leaves that asked for them.
//!
//! ```
//! use mtad_gat::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
pub(crate) mod kernels;
mod recurrent;
mod tape;

pub use gradcheck::grad_check;
pub use tape::{Tape, Var};

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape has already been consumed by a backward pass; reset it first")]
    Consumed,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

/// A dense n-dimensional array of finite 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` has positive extents matching
    /// `data.len()` and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for kernel outputs; finiteness is checked by the tape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; numel])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// One-dimensional tensor. Panics on an empty vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Self::from_parts(vec![data.len()], data)
    }

    /// Two-dimensional tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Dimension {
                op: "from_rows",
                left: vec![rows.len(), cols],
                right: rows.iter().map(Vec::len).collect(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[row * cols..(row + 1) * cols]
    }

    /// Same data viewed under a new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(TensorError::Dimension {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Self {
        assert_eq!(self.shape.len(), 2, "transposed() needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

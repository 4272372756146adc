//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a flat row-major buffer plus a shape. Operations on
//! untracked tensors are plain numeric code; operations touching a tensor
//! watched by a [`Tape`] are recorded so that [`Tensor::backward`] can
//! populate gradients for every watched leaf. Tapes are single-use: one
//! forward, one backward.

mod check;
mod ops;
mod tape;

pub use check::finite_difference_check;
pub use ops::{concat_features, ReduceOp};
pub use tape::Tape;

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    ShapeLenMismatch { shape: Vec<usize>, len: usize },
    #[error("shape extents must be positive, got {0:?}")]
    EmptyExtent(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("expected a matrix, got shape {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tensor is not tracked on any tape")]
    NotTracked,
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("operands tracked on different tapes")]
    CrossTape,
    #[error("non-finite value encountered in {0}")]
    NumericError(&'static str),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("concat requires at least one part")]
    EmptyConcat,
    #[error("triplet {0:?} repeats an index")]
    RepeatedTripletIndex([usize; 3]),
    #[error("triplet index {index} out of range for set size {n}")]
    TripletIndexOutOfRange { index: usize, n: usize },
    #[error("row count {rows} is not a multiple of segment length {seg}")]
    SegmentMismatch { rows: usize, seg: usize },
    #[error("loss mask selects no entries")]
    EmptyMask,
    #[error("crop {rows}x{cols} exceeds input {in_rows}x{in_cols}")]
    CropOutOfRange {
        rows: usize,
        cols: usize,
        in_rows: usize,
        in_cols: usize,
    },
}

/// Dense tensor of 64-bit reals in row-major order.
///
/// Cloning is cheap: the data buffer is shared. A tensor not under active
/// tape recording is immutable and can be read from multiple threads.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    pub(crate) node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self, TensorError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::EmptyExtent(shape.to_vec()));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeLenMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor::new(vec![0.0; len], shape).expect("positive extents")
    }

    /// Zero-row matrix used for empty candidate lists.
    pub(crate) fn empty_2d(cols: usize) -> Self {
        Tensor {
            shape: vec![0, cols],
            data: Arc::new(Vec::new()),
            node: None,
        }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Mutable access to the buffer; copies if the buffer is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        let owned: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        owned.as_mut_slice()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a rank-0/length-1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Row-major element access by multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range at axis {i}");
            off = off * ext + ix;
        }
        self.data[off]
    }

    /// Gradient of this tensor after a backward pass on its tape.
    ///
    /// `None` for untracked tensors; zeros for tracked tensors the root
    /// never used.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let (tape, id) = self.node.as_ref()?;
        Some(tape.grad_of(*id, self.len()))
    }

    pub(crate) fn with_node(mut self, tape: &Tape, id: usize) -> Self {
        self.node = Some((tape.clone(), id));
        self
    }
}

/// Row/column split of a 2D shape; errors on other ranks.
pub(crate) fn as_matrix(shape: &[usize]) -> Result<(usize, usize), TensorError> {
    match shape {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::NotAMatrix(other.to_vec())),
    }
}

#[cfg(test)]
mod tests;

//! Small dense-tensor engine with a reverse-mode tape.
//!
//! Everything the network needs is expressed on row-major matrices
//! `[rows, cols]`; index vectors drive the gather/scatter family so that
//! variable-size buildings can share one graph.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointError, NamedTensor, TensorPayload,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use graph::{bilinear_weights, push_bilinear, Graph, Var};
pub use optim::{AdamConfig, GradientSet, ParameterStore};

/// Index value that `gather` turns into a zero row (padding).
pub const PAD: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

/// Float type the engine runs on. Training uses `f32`, gradient checks `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// Checkpoint dtype tag.
    const DTYPE: u8;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }

    /// `c ← α·a·b + β·c` over strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE: u8 = 0;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices whose lengths cover the strided extents.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 1;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices whose lengths cover the strided extents.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                1,
            );
        }
    }
}

/// Row-major tensor. Graph values are always rank 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(mismatch(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NnError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self, NnError> {
        Self::matrix(rows, cols, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn scalar(x: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|x| x.to_f64().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::of(x.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

/// Compressed-row sparse matrix used by `weighted_gather`:
/// `out[r] = Σ weights[e] · x[indices[e]]` for `e` in row `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub weights: Vec<T>,
    pub ncols: usize,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(ncols: usize) -> Self {
        Self {
            indptr: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
            ncols,
        }
    }

    pub fn push(&mut self, col: usize, w: T) {
        self.indices.push(col);
        self.weights.push(w);
    }

    pub fn finish_row(&mut self) {
        self.indptr.push(self.indices.len());
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.indptr.first() != Some(&0)
            || self.indptr.windows(2).any(|w| w[0] > w[1])
            || self.indptr.last() != Some(&self.indices.len())
            || self.weights.len() != self.indices.len()
            || self.indices.iter().any(|&i| i >= self.ncols)
        {
            return Err(mismatch("sparse", "malformed compressed-row structure"));
        }
        Ok(())
    }
}

/// Kaiming-style uniform bound `√(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

//! Dense and sparse tensors with the contraction and flattening algebra used
//! throughout the crate.
//!
//! Every tensor is stored row-major: the first mode is the most significant
//! index. That single index map defines `vec(A)`, every matricization and the
//! fusion of adjacent modes; other modules never re-derive it.

mod dense;
pub mod io;
pub mod labeled;
mod sparse;

pub use dense::{
    contract, contract_modes, fuse_first_two, kronecker, matricize, matricize_group,
    outer_product, unfuse_first_two, Tensor,
};
pub use sparse::{SparseTensor, TensorRef};

use crate::error::{invalid, Error, Result};

/// Column-major dense matrix used for all small linear algebra.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Upper bound on the number of entries any dense materialization may allocate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseCap(pub usize);

impl DenseCap {
    pub const DEFAULT: DenseCap = DenseCap(100_000_000);

    /// Returns the product of `dims`, or a resource-limit error if it exceeds the cap.
    pub fn check(&self, dims: &[usize]) -> Result<usize> {
        let total = checked_product(dims).ok_or_else(|| {
            Error::ResourceLimit(format!("tensor size {dims:?} overflows the index space"))
        })?;
        if total > self.0 {
            return Err(Error::ResourceLimit(format!(
                "dense tensor with dims {dims:?} has {total} entries, cap is {}",
                self.0
            )));
        }
        Ok(total)
    }
}

impl Default for DenseCap {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// An ordered list of distinct mode indices of a `q`-mode tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeGroup(Vec<usize>);

impl ModeGroup {
    pub fn new(modes: Vec<usize>, q: usize) -> Result<Self> {
        if modes.is_empty() {
            return invalid("mode group must be non-empty");
        }
        let mut seen = vec![false; q];
        for &m in &modes {
            if m >= q {
                return invalid(format!("mode {m} out of range for a {q}-mode tensor"));
            }
            if seen[m] {
                return invalid(format!("mode {m} repeated in group"));
            }
            seen[m] = true;
        }
        Ok(Self(modes))
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Modes not in the group, in increasing order.
    pub fn complement(&self, q: usize) -> Vec<usize> {
        (0..q).filter(|m| !self.0.contains(m)).collect()
    }
}

pub(crate) fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub(crate) fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return invalid("tensor must have at least one mode");
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return invalid(format!("mode {pos} has dimension 0"));
    }
    Ok(())
}

/// Row-major strides for `dims`.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Advances a row-major multi-index; returns false once it wraps around.
pub(crate) fn next_index(idx: &mut [usize], dims: &[usize]) -> bool {
    for pos in (0..idx.len()).rev() {
        idx[pos] += 1;
        if idx[pos] < dims[pos] {
            return true;
        }
        idx[pos] = 0;
    }
    false
}

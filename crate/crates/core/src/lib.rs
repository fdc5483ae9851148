//! Input-sparsity-time sketching for low-rank tensor approximation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense and coordinate-list tensors, contraction, matricization,
//!   Kronecker products and the `.tns` text format.
//! * [`sketching`]: Countsketch, sign and Gaussian maps, their compositions,
//!   sketch-size formulas and the tensor-train sketch.
//! * [`tt`]: bicriteria tensor-train decomposition driven by a sequential
//!   contraction embedding.
//! * [`tree`]: leaf-to-root bicriteria decomposition for tree tensor networks.
//! * [`net`]: contraction planning for general networks and exact compilation
//!   into binary tree networks.
//! * [`fpt`]: exactly-k-row Gaussian regression and guess-and-verify Tucker.
//! * [`harness`]: planted instances, the TT-SVD baseline and run reports.

pub mod error;
pub mod fpt;
pub mod harness;
pub mod linalg;
pub mod net;
pub mod sketching;
pub mod tensor;
pub mod tree;
pub mod tt;

pub use error::{Error, Result};
pub use tensor::{DenseCap, Matrix, ModeGroup, SparseTensor, Tensor};

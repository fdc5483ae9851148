//! Random linear maps and the sizes they need.
//!
//! Every map is described by a small, serializable [`SketchOp`] and is
//! regenerated on demand from its seed: column `j` of a Countsketch, sign or
//! Gaussian map is drawn from ChaCha stream `j`, so no matrix is ever stored
//! and a column can be produced without touching the others.

mod apply;
mod train;

pub use apply::{apply_left, apply_mode, apply_mode_sparse, sketch_group_dense};
pub use train::{tt_sketch_apply_dense, tt_sketch_apply_sparse, tt_sketch_apply_tt, TTSketch};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Matrix;

/// Which factor of a Kronecker product the sketch occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `S ⊗ I_d`: the sketch acts on the leading (more significant) index.
    Left,
    /// `I_d ⊗ S`: the sketch acts on the trailing index.
    Right,
}

/// A seeded linear map. Serializes to a compact JSON descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchOp {
    Identity {
        dim: usize,
    },
    /// One `±1` per column at a uniformly random row.
    Countsketch {
        rows: usize,
        cols: usize,
        seed: u64,
    },
    /// Dense i.i.d. `±1/√rows` entries.
    Sign {
        rows: usize,
        cols: usize,
        seed: u64,
    },
    /// Dense i.i.d. `N(0, 1/rows)` entries.
    GaussianK {
        rows: usize,
        cols: usize,
        seed: u64,
    },
    /// Stages applied first to last. An empty list acts as the identity on
    /// any input.
    Composed {
        stages: Vec<SketchOp>,
    },
    KronWithIdentity {
        inner: Box<SketchOp>,
        identity: usize,
        side: Side,
    },
}

impl SketchOp {
    pub fn countsketch(rows: usize, cols: usize, seed: u64) -> Self {
        SketchOp::Countsketch { rows, cols, seed }
    }

    pub fn sign(rows: usize, cols: usize, seed: u64) -> Self {
        SketchOp::Sign { rows, cols, seed }
    }

    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Self {
        SketchOp::GaussianK { rows, cols, seed }
    }

    /// A Countsketch, or the identity when it would not reduce the dimension.
    pub fn countsketch_capped(rows: usize, cols: usize, seed: u64) -> Self {
        if rows >= cols {
            SketchOp::Identity { dim: cols }
        } else {
            Self::countsketch(rows, cols, seed)
        }
    }

    /// A sign sketch, or the identity when it would not reduce the dimension.
    pub fn sign_capped(rows: usize, cols: usize, seed: u64) -> Self {
        if rows >= cols {
            SketchOp::Identity { dim: cols }
        } else {
            Self::sign(rows, cols, seed)
        }
    }

    pub fn compose(stages: Vec<SketchOp>) -> Result<Self> {
        let op = SketchOp::Composed { stages };
        op.validate()?;
        Ok(op)
    }

    pub fn kron_with_identity(inner: SketchOp, identity: usize, side: Side) -> Result<Self> {
        let op = SketchOp::KronWithIdentity {
            inner: Box::new(inner),
            identity,
            side,
        };
        op.validate()?;
        Ok(op)
    }

    /// `(rows, cols)`, or `None` for an empty composition.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            SketchOp::Identity { dim } => Some((*dim, *dim)),
            SketchOp::Countsketch { rows, cols, .. }
            | SketchOp::Sign { rows, cols, .. }
            | SketchOp::GaussianK { rows, cols, .. } => Some((*rows, *cols)),
            SketchOp::Composed { stages } => {
                let cols = stages.iter().find_map(|s| s.shape()).map(|s| s.1)?;
                let rows = stages.iter().rev().find_map(|s| s.shape()).map(|s| s.0)?;
                Some((rows, cols))
            }
            SketchOp::KronWithIdentity {
                inner, identity, ..
            } => inner.shape().map(|(r, c)| (r * identity, c * identity)),
        }
    }

    /// Output dimension when applied to an input of dimension `n`.
    pub fn out_dim(&self, n: usize) -> Result<usize> {
        match self.shape() {
            None => Ok(n),
            Some((r, c)) if c == n => Ok(r),
            Some((_, c)) => invalid(format!("sketch expects {c} input rows, got {n}")),
        }
    }

    /// Checks positivity of every size and that composed stages chain.
    pub fn validate(&self) -> Result<()> {
        match self {
            SketchOp::Identity { dim } if *dim == 0 => invalid("identity of size 0"),
            SketchOp::Countsketch { rows, cols, .. }
            | SketchOp::Sign { rows, cols, .. }
            | SketchOp::GaussianK { rows, cols, .. }
                if *rows == 0 || *cols == 0 =>
            {
                invalid("sketch with a zero dimension")
            }
            SketchOp::Composed { stages } => {
                let mut current: Option<usize> = None;
                for s in stages {
                    s.validate()?;
                    if let Some((r, c)) = s.shape() {
                        if let Some(n) = current {
                            if n != c {
                                return invalid(format!(
                                    "composed stage expects {c} inputs but previous stage yields {n}"
                                ));
                            }
                        }
                        current = Some(r);
                    }
                }
                Ok(())
            }
            SketchOp::KronWithIdentity {
                inner, identity, ..
            } => {
                inner.validate()?;
                if *identity == 0 {
                    return invalid("Kronecker identity of size 0");
                }
                if inner.shape().is_none() {
                    return invalid("Kronecker lifting needs a sketch with a fixed shape");
                }
                let (r, c) = inner.shape().unwrap_or((0, 0));
                if r.checked_mul(*identity).is_none() || c.checked_mul(*identity).is_none() {
                    return invalid("Kronecker lifting overflows");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Parses and validates a JSON descriptor.
    pub fn from_json(text: &str) -> Result<Self> {
        let op: SketchOp = serde_json::from_str(text)?;
        op.validate()?;
        Ok(op)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sketch descriptors always serialize")
    }

    /// Materializes the map as a dense matrix. Meant for tests and small sizes.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (r, c) = self
            .shape()
            .ok_or_else(|| crate::Error::InvalidArgument("empty composition has no fixed shape".into()))?;
        crate::DenseCap::DEFAULT.check(&[r, c])?;
        apply_left(self, &Matrix::identity(c, c))
    }
}

fn column_rng(seed: u64, column: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(column as u64);
    rng
}

/// Row and sign of column `j` of a Countsketch.
pub(crate) fn countsketch_entry(seed: u64, rows: usize, j: usize) -> (usize, f64) {
    let mut rng = column_rng(seed, j);
    let h = rng.random_range(0..rows);
    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (h, s)
}

/// Fills column `j` of a dense sign or Gaussian sketch into `out`.
pub(crate) fn dense_column(op: &SketchOp, j: usize, out: &mut [f64]) {
    match op {
        SketchOp::Sign { rows, seed, .. } => {
            let scale = 1.0 / (*rows as f64).sqrt();
            let mut rng = column_rng(*seed, j);
            let mut bits = 0u64;
            for (i, slot) in out.iter_mut().enumerate() {
                if i % 64 == 0 {
                    bits = rng.next_u64();
                }
                *slot = if bits & (1 << (i % 64)) != 0 { scale } else { -scale };
            }
        }
        SketchOp::GaussianK { rows, seed, .. } => {
            let scale = 1.0 / (*rows as f64).sqrt();
            let mut rng = column_rng(*seed, j);
            for slot in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *slot = z * scale;
            }
        }
        _ => unreachable!("dense_column on a non-dense sketch"),
    }
}

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const TT_LEFT: u64 = 1;
    pub const TT_RIGHT: u64 = 2;
    pub const TT_SIGN: u64 = 3;
    pub const TREE_T: u64 = 4;
    pub const TREE_R: u64 = 5;
    pub const TREE_S: u64 = 6;
    pub const FPT_CS: u64 = 7;
    pub const FPT_SIGN: u64 = 8;
    pub const FPT_GAUSS: u64 = 9;
    pub const FPT_PROJ: u64 = 10;
    pub const RESTART: u64 = 11;
    pub const INSTANCE: u64 = 12;
    pub const TT_SKETCH: u64 = 13;
}

/// Expands a root seed into an independent seed for stream `tag`, item `idx`.
pub fn derive_seed(root: u64, tag: u64, idx: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(idx) * 2);
    rng.next_u64()
}

/// The absolute constants hidden inside the sketch-size bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c_cs: f64,
    pub c_sign: f64,
    pub c_sv: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c_cs: 4.0,
            c_sign: 4.0,
            c_sv: 4.0,
        }
    }
}

/// Accuracy, failure probability, problem size and constants for sketch sizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub eps: f64,
    pub delta: f64,
    pub q: usize,
    pub k: usize,
    pub constants: Constants,
}

fn ceil_rows(x: f64) -> usize {
    if !x.is_finite() || x >= usize::MAX as f64 {
        return usize::MAX;
    }
    (x.ceil() as usize).max(1)
}

impl SketchParams {
    /// `eps` and `delta` must lie in `(0, 1]`; `q` and `k` must be positive.
    pub fn new(eps: f64, delta: f64, q: usize, k: usize) -> Result<Self> {
        Self::with_constants(eps, delta, q, k, Constants::default())
    }

    pub fn with_constants(eps: f64, delta: f64, q: usize, k: usize, constants: Constants) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return invalid(format!("eps must be in (0, 1], got {eps}"));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return invalid(format!("delta must be in (0, 1], got {delta}"));
        }
        if q == 0 || k == 0 {
            return invalid("q and k must be positive");
        }
        let Constants { c_cs, c_sign, c_sv } = constants;
        if !(c_cs > 0.0 && c_sign > 0.0 && c_sv > 0.0) || ![c_cs, c_sign, c_sv].iter().all(|c| c.is_finite()) {
            return invalid("sketch constants must be positive and finite");
        }
        Ok(Self {
            eps,
            delta,
            q,
            k,
            constants,
        })
    }

    /// Countsketch rows for an affine embedding of a `d`-dimensional subspace:
    /// `⌈c_cs · d² / (ε² δ)⌉`.
    pub fn rows_countsketch_affine(&self, d: usize) -> usize {
        let d = d as f64;
        ceil_rows(self.constants.c_cs * d * d / (self.eps * self.eps * self.delta))
    }

    /// The bicriteria rank `t = ⌈c_sign · q k ln(q/δ) / ε⌉`.
    pub fn rows_sign_regression(&self) -> usize {
        let (q, k) = (self.q as f64, self.k as f64);
        ceil_rows(self.constants.c_sign * q * k * (q / self.delta).ln().max(0.0) / self.eps)
    }

    /// Rows of the Countsketch that compresses the modes outside one vertex:
    /// `⌈c_cs · q³ k² / (ε² δ)⌉`.
    pub fn rows_outer_countsketch(&self) -> usize {
        let (q, k) = (self.q as f64, self.k as f64);
        ceil_rows(self.constants.c_cs * q.powi(3) * k * k / (self.eps * self.eps * self.delta))
    }

    /// Rows of the per-vertex subtree sketch in the tree algorithm:
    /// `⌈c_sv · q⁴ t² d³ / (ε² δ)⌉` for bicriteria rank `t` and maximum degree `d`.
    pub fn rows_subtree_sketch(&self, t: usize, degree: usize) -> usize {
        let (q, t, d) = (self.q as f64, t as f64, degree as f64);
        ceil_rows(self.constants.c_sv * q.powi(4) * t * t * d.powi(3) / (self.eps * self.eps * self.delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64, delta: f64, q: usize, k: usize, c: f64) -> SketchParams {
        SketchParams::with_constants(eps, delta, q, k, Constants { c_cs: c, c_sign: c, c_sv: c }).unwrap()
    }

    #[test]
    fn affine_rows_formula() {
        assert_eq!(params(1.0, 1.0, 1, 1, 1.0).rows_countsketch_affine(1), 1);
        assert_eq!(params(0.5, 0.5, 1, 1, 1.0).rows_countsketch_affine(2), 32);
        assert_eq!(params(0.5, 0.5, 1, 1, 4.0).rows_countsketch_affine(2), 128);
    }

    #[test]
    fn sign_rows_formula() {
        assert_eq!(params(1.0, 0.37, 1, 1, 1.0).rows_sign_regression(), 1);
        let base = params(0.5, 0.1, 3, 2, 1.0).rows_sign_regression();
        assert!(params(0.5, 0.1, 4, 2, 1.0).rows_sign_regression() >= base);
        assert!(params(0.5, 0.1, 3, 3, 1.0).rows_sign_regression() >= base);
        assert!(params(0.25, 0.1, 3, 2, 1.0).rows_sign_regression() >= base);
    }

    #[test]
    fn sign_rows_grow_logarithmically_in_delta() {
        // With q = 1, t/c = k ln(1/δ)/ε, so each factor e in 1/δ adds k/ε.
        let e = std::f64::consts::E;
        let raw = |delta: f64| 100.0 * (1.0 / delta).ln();
        let t: Vec<usize> = [0.1, 0.1 / e, 0.1 / (e * e)]
            .iter()
            .map(|&d| params(1.0, d, 1, 100, 1.0).rows_sign_regression())
            .collect();
        for (i, &d) in [0.1, 0.1 / e, 0.1 / (e * e)].iter().enumerate() {
            assert_eq!(t[i], raw(d).ceil() as usize);
        }
        assert_eq!(t[1] - t[0], 100);
        assert_eq!(t[2] - t[1], 100);
    }

    #[test]
    fn params_validation() {
        assert!(SketchParams::new(0.0, 0.1, 2, 1).is_err());
        assert!(SketchParams::new(1.5, 0.1, 2, 1).is_err());
        assert!(SketchParams::new(0.5, 0.0, 2, 1).is_err());
        assert!(SketchParams::new(0.5, 0.1, 0, 1).is_err());
        assert!(SketchParams::new(0.5, 0.1, 2, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ_and_repeat() {
        assert_eq!(derive_seed(7, 1, 3), derive_seed(7, 1, 3));
        assert_ne!(derive_seed(7, 1, 3), derive_seed(7, 1, 4));
        assert_ne!(derive_seed(7, 1, 3), derive_seed(7, 2, 3));
        assert_ne!(derive_seed(7, 1, 3), derive_seed(8, 1, 3));
    }

    #[test]
    fn descriptor_round_trip() {
        let op = SketchOp::compose(vec![
            SketchOp::countsketch(5, 10, 1),
            SketchOp::kron_with_identity(SketchOp::sign(2, 5, 3), 1, Side::Right).unwrap(),
        ])
        .unwrap();
        let back = SketchOp::from_json(&op.to_json()).unwrap();
        assert_eq!(back, op);
        assert_eq!(op.shape(), Some((2, 10)));
        assert!(SketchOp::from_json(r#"{"kind":"countsketch","rows":0,"cols":3,"seed":1}"#).is_err());
        assert!(SketchOp::from_json(
            r#"{"kind":"composed","stages":[{"kind":"identity","dim":3},{"kind":"identity","dim":4}]}"#
        )
        .is_err());
    }

    #[test]
    fn entry_distributions() {
        let s = SketchOp::sign(4, 6, 11).to_matrix().unwrap();
        assert!(s.iter().all(|&v| (v.abs() - 0.5).abs() < 1e-15));
        let c = SketchOp::countsketch(3, 40, 2).to_matrix().unwrap();
        for col in c.column_iter() {
            assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 1);
            assert!(col.iter().all(|&v| v == 0.0 || v.abs() == 1.0));
        }
        let g = SketchOp::gaussian(4, 2000, 5).to_matrix().unwrap();
        let var = g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((var - 0.25).abs() < 0.02, "variance {var}");
    }
}

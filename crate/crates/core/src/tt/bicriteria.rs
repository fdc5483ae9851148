use serde::{Deserialize, Serialize};

use super::{ContractionEmbedding, TensorTrain};
use crate::error::{invalid, Result};
use crate::linalg::{orth, pinv};
use crate::sketching::{apply_mode_sparse, derive_seed, sketch_group_dense, stream, SketchOp, SketchParams};
use crate::tensor::{contract, DenseCap, SparseTensor, Tensor};

/// Sketch dimensions used by [`tt_bicriteria`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtSketchSizes {
    /// Bicriteria rank: rows of the sign sketch and the cap on every TT rank.
    pub t: usize,
    /// Rows of the Countsketch that compresses the modes left of the current core.
    pub outer_rows: usize,
    /// Rows of each Countsketch stage in the right-hand contraction embedding.
    pub right_rows: usize,
}

pub fn tt_sketch_sizes(params: &SketchParams) -> TtSketchSizes {
    let t = params.rows_sign_regression();
    TtSketchSizes {
        t,
        outer_rows: params.rows_outer_countsketch(),
        right_rows: params.rows_countsketch_affine(t),
    }
}

/// Reindexes modes `(i, i + 1)` as one mode with index `σ · n_i + j`, where
/// `j` runs over mode `i` and `σ` over mode `i + 1`.
fn fuse_sketch_major(a: &SparseTensor, i: usize) -> SparseTensor {
    let q = a.ndim();
    let n = a.dims()[i];
    let mut dims = a.dims()[..i].to_vec();
    dims.push(n * a.dims()[i + 1]);
    dims.extend_from_slice(&a.dims()[i + 2..]);
    let mut indices = Vec::with_capacity(a.nnz() * (q - 1));
    for (idx, _) in a.iter() {
        indices.extend_from_slice(&idx[..i]);
        indices.push(idx[i + 1] * n + idx[i]);
        indices.extend_from_slice(&idx[i + 2..]);
    }
    SparseTensor::consolidate(dims, indices, a.values().to_vec())
}

/// Bicriteria tensor-train decomposition of `a`.
///
/// Cores are fixed right to left. For core `i` the modes left of it are
/// compressed by a Countsketch followed by a sign sketch with `t` rows, the
/// modes right of it are replaced by the contraction embedding of the cores
/// already fixed, and the core is an orthonormal basis for the resulting
/// sketched flattening. The leftmost core absorbs what remains. Every TT rank
/// is at most `t`; a sketch whose row count would not reduce its input is
/// replaced by the identity.
pub fn tt_bicriteria(a: &SparseTensor, params: &SketchParams, seed: u64, cap: DenseCap) -> Result<TensorTrain> {
    let q = a.ndim();
    if q < 2 {
        return invalid("tensor-train decomposition needs at least two modes");
    }
    if params.q != q {
        return invalid(format!("parameters are for q = {}, tensor has {q} modes", params.q));
    }
    let dims = a.dims().to_vec();
    let sizes = tt_sketch_sizes(params);
    let left_sketch = |step: usize| -> (SketchOp, SketchOp) {
        let cols: usize = dims[..step].iter().product();
        let first = SketchOp::countsketch_capped(
            sizes.outer_rows,
            cols,
            derive_seed(seed, stream::TT_LEFT, step as u64),
        );
        let mid = first.shape().map_or(cols, |s| s.0);
        let second = SketchOp::sign_capped(sizes.t, mid, derive_seed(seed, stream::TT_SIGN, step as u64));
        (first, second)
    };
    let right_sketch = |step: usize, cols: usize| {
        SketchOp::countsketch_capped(sizes.right_rows, cols, derive_seed(seed, stream::TT_RIGHT, step as u64))
    };

    let mut cores: Vec<Tensor> = vec![Tensor::scalar(0.0); q];

    // Last core: orthonormal basis of M_q(A) Gᵀ.
    let last = q - 1;
    let (first, second) = left_sketch(last);
    let group: Vec<usize> = (0..last).collect();
    let c = sketch_group_dense(a, &group, &first, &second, cap)?;
    let rows = c.dims()[0];
    let y = c.to_matrix(rows, dims[last])?.transpose();
    let u = orth(&y, usize::MAX);
    let r = u.ncols();
    cores[last] = Tensor::from_matrix(&u.transpose())?.into_reshaped(vec![r, dims[last], 1])?;
    let s = right_sketch(last, dims[last]);
    let mut cur = apply_mode_sparse(&s, a, last)?;
    let mut emb = ContractionEmbedding::new(s, &u)?;

    for i in (1..last).rev() {
        // `cur` has modes 0..i, then mode i, then the sketch of modes i+1..q.
        let (first, second) = left_sketch(i);
        let group: Vec<usize> = (0..i).collect();
        let c = sketch_group_dense(&cur, &group, &first, &second, cap)?;
        let p = pinv(&emb.current().transpose());
        let r_right = p.ncols();
        let projected = contract(&c, 2, &Tensor::from_matrix(&p)?, 0)?;
        let rows = projected.dims()[0];
        let y = projected.to_matrix(rows, dims[i] * r_right)?.transpose();
        let basis = orth(&y, usize::MAX);
        let r_left = basis.ncols();
        let core = Tensor::from_matrix(&basis.transpose())?.into_reshaped(vec![r_left, dims[i], r_right])?;

        let fused = fuse_sketch_major(&cur, i);
        let s = right_sketch(i, fused.dims()[i]);
        cur = apply_mode_sparse(&s, &fused, i)?;
        emb = emb.extend(s, &core.permute(&[2, 1, 0])?)?;
        cores[i] = core;
    }

    let m = cur.densify(cap)?;
    let m = m.to_matrix(dims[0], m.dims()[1])?;
    let u1 = m * pinv(&emb.current().transpose());
    let r1 = u1.ncols();
    cores[0] = Tensor::from_matrix(&u1)?.into_reshaped(vec![1, dims[0], r1])?;
    TensorTrain::new(cores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketching::Constants;
    use crate::tensor::outer_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    #[test]
    fn rank_one_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = outer_product(&[unit(6, &mut rng), unit(6, &mut rng), unit(6, &mut rng)]).unwrap();
        let params = SketchParams::new(0.5, 0.1, 3, 1).unwrap();
        let tt = tt_bicriteria(&SparseTensor::sparsify(&a, 0.0), &params, 1, DenseCap::DEFAULT).unwrap();
        let err = tt.error(&a, DenseCap::DEFAULT).unwrap();
        assert!(err <= 1e-8 * a.frobenius_norm(), "error {err}");
    }

    #[test]
    fn full_rank_matrix_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::from_fn(&[5, 7], |_| rng.sample(StandardNormal)).unwrap();
        let params = SketchParams::new(0.5, 0.1, 2, 3).unwrap();
        let t = params.rows_sign_regression();
        assert!(t >= 7);
        let tt = tt_bicriteria(&SparseTensor::sparsify(&a, 0.0), &params, 2, DenseCap::DEFAULT).unwrap();
        assert!(tt.error(&a, DenseCap::DEFAULT).unwrap() <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn ranks_never_exceed_t_with_real_sketches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_fn(&[6, 6, 6, 6], |_| rng.sample(StandardNormal)).unwrap();
        let c = Constants { c_cs: 0.05, c_sign: 0.2, c_sv: 1.0 };
        let params = SketchParams::with_constants(0.5, 0.2, 4, 1, c).unwrap();
        let sizes = tt_sketch_sizes(&params);
        assert!(sizes.t < 6 && sizes.right_rows < 36, "{sizes:?}");
        let tt = tt_bicriteria(&SparseTensor::sparsify(&a, 0.0), &params, 4, DenseCap::DEFAULT).unwrap();
        assert!(tt.ranks().iter().all(|&r| r <= sizes.t), "{:?}", tt.ranks());
        let err = tt.error(&a, DenseCap::DEFAULT).unwrap();
        assert!(err.is_finite() && err < a.frobenius_norm() * 1.5);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = SparseTensor::sparsify(&Tensor::from_fn(&[4, 5, 3], |_| rng.sample(StandardNormal)).unwrap(), 0.0);
        let params = SketchParams::new(0.5, 0.1, 3, 1).unwrap();
        let x = tt_bicriteria(&a, &params, 11, DenseCap::DEFAULT).unwrap();
        let y = tt_bicriteria(&a, &params, 11, DenseCap::DEFAULT).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let a = SparseTensor::zeros(vec![3, 3, 3]).unwrap();
        let params = SketchParams::new(0.5, 0.1, 4, 1).unwrap();
        assert!(tt_bicriteria(&a, &params, 0, DenseCap::DEFAULT).is_err());
        let one = SparseTensor::zeros(vec![3]).unwrap();
        let p1 = SketchParams::new(0.5, 0.1, 1, 1).unwrap();
        assert!(tt_bicriteria(&one, &p1, 0, DenseCap::DEFAULT).is_err());
    }

    #[test]
    fn zero_tensor_gives_zero_train() {
        let a = SparseTensor::zeros(vec![3, 4, 2]).unwrap();
        let params = SketchParams::new(0.5, 0.1, 3, 1).unwrap();
        let tt = tt_bicriteria(&a, &params, 0, DenseCap::DEFAULT).unwrap();
        assert_eq!(tt.error(&a, DenseCap::DEFAULT).unwrap(), 0.0);
    }
}

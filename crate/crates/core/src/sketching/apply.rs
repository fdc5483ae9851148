use super::{countsketch_entry, dense_column, Side, SketchOp};
use crate::error::{invalid, Result};
use crate::linalg::matmul_rm;
use crate::tensor::{DenseCap, Matrix, SparseTensor, Tensor};

/// `S · M`.
pub fn apply_left(op: &SketchOp, m: &Matrix) -> Result<Matrix> {
    let (r, c) = m.shape();
    op.out_dim(r)?;
    let t = Tensor::from_matrix(m)?;
    let out = apply_mode(op, &t, 0)?;
    out.to_matrix(out.dims()[0], c)
}

fn check_mode(op: &SketchOp, dims: &[usize], t: usize) -> Result<usize> {
    if t >= dims.len() {
        return invalid(format!("mode {t} out of range for {} modes", dims.len()));
    }
    op.out_dim(dims[t])
}

/// Row-major `rows × cols` materialization of a sign or Gaussian sketch.
fn dense_rows_major(op: &SketchOp, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    let mut col = vec![0.0; rows];
    for j in 0..cols {
        dense_column(op, j, &mut col);
        for (i, v) in col.iter().enumerate() {
            out[i * cols + j] = *v;
        }
    }
    out
}

/// Applies `op` along mode `t`: `dims[t]` becomes the sketch's row count.
pub fn apply_mode(op: &SketchOp, a: &Tensor, t: usize) -> Result<Tensor> {
    let rows = check_mode(op, a.dims(), t)?;
    let dims = a.dims();
    let pre: usize = dims[..t].iter().product();
    let n = dims[t];
    let post: usize = dims[t + 1..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[t] = rows;
    match op {
        SketchOp::Identity { .. } => Ok(a.clone()),
        SketchOp::Composed { stages } => {
            let mut cur = a.clone();
            for s in stages {
                cur = apply_mode(s, &cur, t)?;
            }
            Ok(cur)
        }
        SketchOp::Countsketch { seed, .. } => {
            crate::DenseCap::DEFAULT.check(&out_dims)?;
            let table: Vec<(usize, f64)> = (0..n).map(|j| countsketch_entry(*seed, rows, j)).collect();
            let src = a.data();
            let mut data = vec![0.0; pre * rows * post];
            for p in 0..pre {
                for (j, &(h, s)) in table.iter().enumerate() {
                    let from = &src[(p * n + j) * post..(p * n + j + 1) * post];
                    let to = &mut data[(p * rows + h) * post..(p * rows + h + 1) * post];
                    for (y, x) in to.iter_mut().zip(from) {
                        *y += s * x;
                    }
                }
            }
            Tensor::new(out_dims, data)
        }
        SketchOp::Sign { .. } | SketchOp::GaussianK { .. } => {
            crate::DenseCap::DEFAULT.check(&out_dims)?;
            let s = dense_rows_major(op, rows, n);
            let src = a.data();
            let mut data = Vec::with_capacity(pre * rows * post);
            for p in 0..pre {
                data.extend(matmul_rm(&s, rows, n, &src[p * n * post..(p + 1) * n * post], post));
            }
            Tensor::new(out_dims, data)
        }
        SketchOp::KronWithIdentity {
            inner,
            identity,
            side,
        } => {
            let d = *identity;
            let (_, ic) = inner.shape().expect("validated Kronecker sketch");
            let (n1, n2, inner_mode) = match side {
                Side::Left => (ic, d, t),
                Side::Right => (d, ic, t + 1),
            };
            let mut split = dims[..t].to_vec();
            split.extend([n1, n2]);
            split.extend_from_slice(&dims[t + 1..]);
            let sketched = apply_mode(inner, &a.reshape(split)?, inner_mode)?;
            sketched.into_reshaped(out_dims)
        }
    }
}

/// Sparse counterpart of [`apply_mode`]. Countsketch keeps at most one output
/// entry per input entry; dense stages fill the sketched fibre of every entry.
pub fn apply_mode_sparse(op: &SketchOp, a: &SparseTensor, t: usize) -> Result<SparseTensor> {
    let rows = check_mode(op, a.dims(), t)?;
    let q = a.ndim();
    let mut out_dims = a.dims().to_vec();
    out_dims[t] = rows;
    match op {
        SketchOp::Identity { .. } => Ok(a.clone()),
        SketchOp::Composed { stages } => {
            let mut cur = a.clone();
            for s in stages {
                cur = apply_mode_sparse(s, &cur, t)?;
            }
            Ok(cur)
        }
        SketchOp::Countsketch { seed, .. } => {
            let n = a.dims()[t];
            let table: Option<Vec<(usize, f64)>> =
                (n <= 4 * a.nnz().max(1)).then(|| (0..n).map(|j| countsketch_entry(*seed, rows, j)).collect());
            let mut indices = Vec::with_capacity(a.nnz() * q);
            let mut values = Vec::with_capacity(a.nnz());
            for (idx, v) in a.iter() {
                let (h, s) = match &table {
                    Some(tab) => tab[idx[t]],
                    None => countsketch_entry(*seed, rows, idx[t]),
                };
                indices.extend_from_slice(&idx[..t]);
                indices.push(h);
                indices.extend_from_slice(&idx[t + 1..]);
                values.push(s * v);
            }
            Ok(SparseTensor::consolidate(out_dims, indices, values))
        }
        SketchOp::Sign { .. } | SketchOp::GaussianK { .. } => {
            let mut col = vec![0.0; rows];
            let mut indices = Vec::with_capacity(a.nnz() * q * rows);
            let mut values = Vec::with_capacity(a.nnz() * rows);
            for (idx, v) in a.iter() {
                dense_column(op, idx[t], &mut col);
                for (i, c) in col.iter().enumerate() {
                    indices.extend_from_slice(&idx[..t]);
                    indices.push(i);
                    indices.extend_from_slice(&idx[t + 1..]);
                    values.push(c * v);
                }
            }
            Ok(SparseTensor::consolidate(out_dims, indices, values))
        }
        SketchOp::KronWithIdentity {
            inner,
            identity,
            side,
        } => {
            let (_, ic) = inner.shape().expect("validated Kronecker sketch");
            let d = *identity;
            let (n1, n2, inner_mode) = match side {
                Side::Left => (ic, d, t),
                Side::Right => (d, ic, t + 1),
            };
            let split = a.split_mode(t, n1, n2)?;
            apply_mode_sparse(inner, &split, inner_mode)?.merge_modes(t)
        }
    }
}

/// Sketches the fused index of the modes in `group` (row-major in the order
/// given) with `second · first` and returns a dense tensor whose mode 0 is the
/// sketch output, followed by the remaining modes in their original order.
///
/// `first` must be a Countsketch or an identity, `second` a dense sketch or an
/// identity. A Countsketch is accumulated in one pass over the nonzeros; when
/// `first` is the identity the columns of `second` are generated per nonzero,
/// so the fused index is never materialized.
pub fn sketch_group_dense(
    a: &SparseTensor,
    group: &[usize],
    first: &SketchOp,
    second: &SketchOp,
    cap: DenseCap,
) -> Result<Tensor> {
    let q = a.ndim();
    let dims = a.dims();
    let mut in_group = vec![false; q];
    for &m in group {
        if m >= q || in_group[m] {
            return invalid(format!("bad mode group {group:?} for {q} modes"));
        }
        in_group[m] = true;
    }
    let rest: Vec<usize> = (0..q).filter(|&m| !in_group[m]).collect();
    let fused = group
        .iter()
        .try_fold(1usize, |acc, &m| acc.checked_mul(dims[m]))
        .ok_or_else(|| crate::Error::ResourceLimit("fused index overflows".into()))?;
    let mid = first.out_dim(fused)?;
    let rows = second.out_dim(mid)?;
    let rest_dims: Vec<usize> = rest.iter().map(|&m| dims[m]).collect();
    let rest_len: usize = rest_dims.iter().product();
    let mut out_dims = vec![rows];
    out_dims.extend(&rest_dims);
    cap.check(&out_dims)?;

    let offsets = |idx: &[usize]| {
        let g = group.iter().fold(0usize, |acc, &m| acc * dims[m] + idx[m]);
        let r = rest.iter().fold(0usize, |acc, &m| acc * dims[m] + idx[m]);
        (g, r)
    };
    let first_is_identity = matches!(first, SketchOp::Identity { .. })
        || matches!(first, SketchOp::Composed { stages } if stages.is_empty());
    let second_is_identity = matches!(second, SketchOp::Identity { .. })
        || matches!(second, SketchOp::Composed { stages } if stages.is_empty());
    let second_dense = matches!(second, SketchOp::Sign { .. } | SketchOp::GaussianK { .. });
    if !(second_is_identity || second_dense) {
        return invalid("second stage must be a sign or Gaussian sketch or the identity");
    }

    if first_is_identity && second_dense {
        let mut data = vec![0.0; rows * rest_len];
        let mut col = vec![0.0; rows];
        for (idx, v) in a.iter() {
            let (g, r) = offsets(idx);
            dense_column(second, g, &mut col);
            for (i, c) in col.iter().enumerate() {
                data[i * rest_len + r] += v * c;
            }
        }
        return Tensor::new(out_dims, data);
    }

    let mut mid_dims = vec![mid];
    mid_dims.extend(&rest_dims);
    cap.check(&mid_dims)?;
    let mut data = vec![0.0; mid * rest_len];
    match first {
        SketchOp::Countsketch { seed, .. } => {
            for (idx, v) in a.iter() {
                let (g, r) = offsets(idx);
                let (h, s) = countsketch_entry(*seed, mid, g);
                data[h * rest_len + r] += s * v;
            }
        }
        _ if first_is_identity => {
            for (idx, v) in a.iter() {
                let (g, r) = offsets(idx);
                data[g * rest_len + r] += v;
            }
        }
        _ => return invalid("first stage must be a Countsketch or the identity"),
    }
    let m = Tensor::new(mid_dims, data)?;
    if second_is_identity {
        Ok(m)
    } else {
        apply_mode(second, &m, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kronecker, matricize, matricize_group, ModeGroup};
    use proptest::prelude::*;

    fn rand_tensor(dims: &[usize], seed: u64) -> Tensor {
        Tensor::from_fn(dims, |idx| {
            let h = idx.iter().fold(seed.wrapping_mul(0x9E37_79B9), |acc, &i| {
                acc.wrapping_mul(6364136223846793005).wrapping_add(i as u64 + 1)
            });
            ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .unwrap()
    }

    fn ops(n: usize, seed: u64) -> Vec<SketchOp> {
        vec![
            SketchOp::countsketch(3, n, seed),
            SketchOp::sign(2, n, seed),
            SketchOp::gaussian(4, n, seed),
            SketchOp::Identity { dim: n },
            SketchOp::compose(vec![SketchOp::countsketch(5, n, seed), SketchOp::sign(2, 5, seed + 1)]).unwrap(),
        ]
    }

    #[test]
    fn countsketch_maps_basis_vectors() {
        let op = SketchOp::countsketch(4, 9, 17);
        for j in 0..9 {
            let mut e = Matrix::zeros(9, 1);
            e[(j, 0)] = 1.0;
            let y = apply_left(&op, &e).unwrap();
            let (h, s) = countsketch_entry(17, 4, j);
            for i in 0..4 {
                assert_eq!(y[(i, 0)], if i == h { s } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_composition_is_identity() {
        let id = SketchOp::compose(vec![]).unwrap();
        let m = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(apply_left(&id, &m).unwrap(), m);
        let t = rand_tensor(&[2, 3, 4], 1);
        assert_eq!(apply_mode(&id, &t, 1).unwrap(), t);
    }

    #[test]
    fn kron_left_matches_dense_oracle() {
        let s = SketchOp::gaussian(3, 4, 9);
        let d = 5;
        let x = rand_tensor(&[4, d], 3);
        let lifted = SketchOp::kron_with_identity(s.clone(), d, Side::Left).unwrap();
        let vec_x = x.to_matrix(4 * d, 1).unwrap();
        let lhs = apply_left(&lifted, &vec_x).unwrap();
        let sx = &s.to_matrix().unwrap() * x.to_matrix(4, d).unwrap();
        let dense = kronecker(&s.to_matrix().unwrap(), &Matrix::identity(d, d)) * &vec_x;
        for i in 0..3 {
            for b in 0..d {
                assert!((lhs[(i * d + b, 0)] - sx[(i, b)]).abs() < 1e-12);
            }
        }
        assert!((lhs - dense).norm() < 1e-12);
    }

    #[test]
    fn kron_right_matches_dense_oracle() {
        let s = SketchOp::countsketch(2, 3, 4);
        let lifted = SketchOp::kron_with_identity(s.clone(), 4, Side::Right).unwrap();
        let m = rand_tensor(&[12, 2], 8).to_matrix(12, 2).unwrap();
        let dense = kronecker(&Matrix::identity(4, 4), &s.to_matrix().unwrap()) * &m;
        assert!((apply_left(&lifted, &m).unwrap() - dense).norm() < 1e-12);
    }

    #[test]
    fn one_mode_tensor_matches_apply_left() {
        let v = rand_tensor(&[7], 2);
        for op in ops(7, 5) {
            let a = apply_mode(&op, &v, 0).unwrap();
            let b = apply_left(&op, &v.to_matrix(7, 1).unwrap()).unwrap();
            assert_eq!(a.data(), b.as_slice());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let t = rand_tensor(&[2, 3], 0);
        assert!(apply_mode(&SketchOp::countsketch(2, 4, 0), &t, 1).is_err());
        assert!(apply_mode(&SketchOp::countsketch(2, 3, 0), &t, 2).is_err());
        assert!(apply_left(&SketchOp::sign(2, 3, 0), &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        let t = rand_tensor(&[3, 6, 2], 4);
        for op in ops(6, 77) {
            let a = apply_mode(&op, &t, 1).unwrap();
            let b = apply_mode(&op.clone(), &t, 1).unwrap();
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn countsketch_is_unbiased() {
        let x = rand_tensor(&[40], 12).into_data();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        for make in [SketchOp::countsketch, SketchOp::sign] {
            let trials = 10_000;
            let mean: f64 = (0..trials)
                .map(|s| {
                    let y = apply_left(&make(8, 40, s), &Matrix::from_column_slice(40, 1, &x)).unwrap();
                    y.norm_squared()
                })
                .sum::<f64>()
                / trials as f64;
            assert!((mean / norm2 - 1.0).abs() < 0.02, "mean ratio {}", mean / norm2);
        }
    }

    #[test]
    fn group_sketch_matches_matricized_product() {
        let a = rand_tensor(&[3, 4, 2, 3], 21);
        let sp = SparseTensor::sparsify(&a, 0.0);
        let group = [2, 0];
        let m = matricize_group(&a, &ModeGroup::new(group.to_vec(), 4).unwrap()).unwrap();
        let firsts = [SketchOp::Identity { dim: 6 }, SketchOp::countsketch(4, 6, 3)];
        let seconds = |r: usize| [SketchOp::Identity { dim: r }, SketchOp::sign(2, r, 9), SketchOp::gaussian(3, r, 1)];
        for f in &firsts {
            let r = f.shape().unwrap().0;
            for s in seconds(r) {
                let got = sketch_group_dense(&sp, &group, f, &s, DenseCap::DEFAULT).unwrap();
                let expected = apply_left(&s, &apply_left(f, &m).unwrap()).unwrap();
                let rows = got.dims()[0];
                assert_eq!(got.dims()[1..], [4, 3]);
                assert!((got.to_matrix(rows, 12).unwrap() - expected).norm() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn mode_application_matches_matricized_pipeline(
            d0 in 1usize..4, d1 in 1usize..5, d2 in 1usize..4, t in 0usize..3, seed in 0u64..500,
        ) {
            let dims = [d0, d1, d2];
            let a = rand_tensor(&dims, seed);
            for op in ops(dims[t], seed) {
                let out = apply_mode(&op, &a, t).unwrap();
                let expected = apply_left(&op, &matricize(&a, t).unwrap()).unwrap();
                let got = matricize(&out, t).unwrap();
                prop_assert!((got - expected).norm() < 1e-12);
                let sparse = apply_mode_sparse(&op, &SparseTensor::sparsify(&a, 0.0), t).unwrap();
                let dense = sparse.densify(DenseCap::DEFAULT).unwrap();
                prop_assert!(dense.distance(&out).unwrap() < 1e-12);
            }
        }
    }
}

use super::{checked_product, validate_dims, DenseCap, Tensor};
use crate::error::{invalid, Result};

/// Coordinate-list tensor. Entries are kept sorted in row-major order with
/// distinct indices and nonzero values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    /// `nnz * q` coordinates, entry-major.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    /// Builds a tensor from `(index, value)` pairs. Duplicate indices are summed
    /// and entries that end up zero are dropped.
    pub fn new(dims: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let q = dims.len();
        let mut indices = Vec::with_capacity(entries.len() * q);
        let mut values = Vec::with_capacity(entries.len());
        for (idx, v) in entries {
            if idx.len() != q {
                return invalid(format!("index {idx:?} has {} coordinates, need {q}", idx.len()));
            }
            indices.extend(idx);
            values.push(v);
        }
        Self::from_coo(dims, indices, values)
    }

    /// Builds a tensor from flat coordinates (`values.len() * q` of them).
    pub fn from_coo(dims: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let q = dims.len();
        if indices.len() != values.len() * q {
            return invalid("coordinate and value counts disagree");
        }
        for (e, idx) in indices.chunks_exact(q).enumerate() {
            for (m, (&i, &d)) in idx.iter().zip(&dims).enumerate() {
                if i >= d {
                    return invalid(format!("entry {e}: index {i} out of bounds for mode {m} (size {d})"));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite value");
        }
        Ok(Self::consolidate(dims, indices, values))
    }

    /// Sorts, sums duplicates and drops zeros. Indices must already be in bounds.
    pub(crate) fn consolidate(dims: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Self {
        let q = dims.len();
        let nnz = values.len();
        let sorted = (1..nnz).all(|e| {
            indices[(e - 1) * q..e * q] < indices[e * q..(e + 1) * q]
        });
        if sorted && values.iter().all(|&v| v != 0.0) {
            return Self { dims, indices, values };
        }
        let radix: Option<u128> = dims.iter().try_fold(1u128, |acc, &n| acc.checked_mul(n as u128));
        if radix.is_some() {
            return Self::consolidate_by_key(dims, &indices, &values);
        }
        let mut order: Vec<usize> = (0..nnz).collect();
        order.sort_by(|&a, &b| indices[a * q..(a + 1) * q].cmp(&indices[b * q..(b + 1) * q]));
        let mut out_idx: Vec<usize> = Vec::with_capacity(indices.len());
        let mut out_val: Vec<f64> = Vec::with_capacity(nnz);
        let mut prev: Option<usize> = None;
        for e in order {
            let idx = &indices[e * q..(e + 1) * q];
            match prev {
                Some(p) if &indices[p * q..(p + 1) * q] == idx => {
                    *out_val.last_mut().expect("previous entry") += values[e];
                }
                _ => {
                    out_idx.extend_from_slice(idx);
                    out_val.push(values[e]);
                    prev = Some(e);
                }
            }
        }
        let mut indices = Vec::with_capacity(out_idx.len());
        let mut vals = Vec::with_capacity(out_val.len());
        for (idx, v) in out_idx.chunks_exact(q).zip(out_val) {
            if v != 0.0 {
                indices.extend_from_slice(idx);
                vals.push(v);
            }
        }
        Self { dims, indices, values: vals }
    }

    /// Row-major linear offsets fit in a `u128`, so entries are sorted as
    /// contiguous `(offset, value)` pairs instead of through an index permutation.
    fn consolidate_by_key(dims: Vec<usize>, indices: &[usize], values: &[f64]) -> Self {
        let q = dims.len();
        let mut keyed: Vec<(u128, f64)> = indices
            .chunks_exact(q.max(1))
            .zip(values)
            .map(|(idx, &v)| (idx.iter().zip(&dims).fold(0u128, |acc, (&i, &n)| acc * n as u128 + i as u128), v))
            .collect();
        if q == 0 {
            keyed = values.iter().map(|&v| (0, v)).collect();
        }
        keyed.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(u128, f64)> = Vec::with_capacity(keyed.len());
        for (k, v) in keyed {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        let mut out = vec![0usize; merged.len() * q];
        let mut vals = Vec::with_capacity(merged.len());
        for (e, (mut k, v)) in merged.into_iter().enumerate() {
            for m in (0..q).rev() {
                let n = dims[m] as u128;
                out[e * q + m] = (k % n) as usize;
                k /= n;
            }
            vals.push(v);
        }
        Self { dims, indices: out, values: vals }
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::from_coo(dims, Vec::new(), Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn index(&self, e: usize) -> &[usize] {
        let q = self.dims.len();
        &self.indices[e * q..(e + 1) * q]
    }

    pub fn value(&self, e: usize) -> f64 {
        self.values[e]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Merges modes `t` and `t + 1` into one mode of size `n_t · n_{t+1}`.
    pub fn merge_modes(&self, t: usize) -> Result<SparseTensor> {
        let q = self.ndim();
        if t + 1 >= q {
            return invalid(format!("cannot merge modes {t} and {} of a {q}-mode tensor", t + 1));
        }
        let mut dims = self.dims.clone();
        let n2 = dims.remove(t + 1);
        dims[t] *= n2;
        let mut indices = Vec::with_capacity(self.nnz() * (q - 1));
        for idx in self.indices.chunks_exact(q) {
            indices.extend_from_slice(&idx[..t]);
            indices.push(idx[t] * n2 + idx[t + 1]);
            indices.extend_from_slice(&idx[t + 2..]);
        }
        Ok(SparseTensor {
            dims,
            indices,
            values: self.values.clone(),
        })
    }

    pub fn fuse_first_two(&self) -> Result<SparseTensor> {
        self.merge_modes(0)
    }

    /// Splits mode `t` into `(n1, n2)` with `i = i_1·n2 + i_2`.
    pub fn split_mode(&self, t: usize, n1: usize, n2: usize) -> Result<SparseTensor> {
        let q = self.ndim();
        if t >= q || n1 * n2 != self.dims[t] || n1 == 0 || n2 == 0 {
            return invalid(format!("cannot split mode {t} of {:?} into {n1}x{n2}", self.dims));
        }
        let mut dims = self.dims.clone();
        dims[t] = n2;
        dims.insert(t, n1);
        let mut indices = Vec::with_capacity(self.nnz() * (q + 1));
        for idx in self.indices.chunks_exact(q) {
            indices.extend_from_slice(&idx[..t]);
            indices.push(idx[t] / n2);
            indices.push(idx[t] % n2);
            indices.extend_from_slice(&idx[t + 1..]);
        }
        Ok(SparseTensor {
            dims,
            indices,
            values: self.values.clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.dims.len())
            .zip(self.values.iter().copied())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn densify(&self, cap: DenseCap) -> Result<Tensor> {
        let len = cap.check(&self.dims)?;
        let mut data = vec![0.0; len];
        for (idx, v) in self.iter() {
            let mut off = 0;
            for (&i, &d) in idx.iter().zip(&self.dims) {
                off = off * d + i;
            }
            data[off] = v;
        }
        Tensor::new(self.dims.clone(), data)
    }

    /// Keeps entries with `|value| > tol`.
    pub fn sparsify(a: &Tensor, tol: f64) -> SparseTensor {
        let dims = a.dims().to_vec();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0usize; dims.len()];
        for &v in a.data() {
            if v.abs() > tol && v != 0.0 {
                indices.extend_from_slice(&idx);
                values.push(v);
            }
            super::next_index(&mut idx, &dims);
        }
        SparseTensor { dims, indices, values }
    }

    /// Number of entries a dense copy would hold, if it fits in `usize`.
    pub fn dense_len(&self) -> Option<usize> {
        checked_product(&self.dims)
    }
}

/// Either storage form, for routines that accept both.
#[derive(Debug, Clone, Copy)]
pub enum TensorRef<'a> {
    Dense(&'a Tensor),
    Sparse(&'a SparseTensor),
}

impl TensorRef<'_> {
    pub fn dims(&self) -> &[usize] {
        match self {
            TensorRef::Dense(t) => t.dims(),
            TensorRef::Sparse(s) => s.dims(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            TensorRef::Dense(t) => t.frobenius_norm(),
            TensorRef::Sparse(s) => s.frobenius_norm(),
        }
    }
}

impl Tensor {
    /// Frobenius distance to a dense or sparse tensor of the same shape.
    pub fn distance_to(&self, other: TensorRef<'_>) -> Result<f64> {
        match other {
            TensorRef::Dense(t) => self.distance(t),
            TensorRef::Sparse(s) => {
                if self.dims() != s.dims() {
                    return invalid(format!("shape mismatch: {:?} vs {:?}", self.dims(), s.dims()));
                }
                let mut diff = self.data().to_vec();
                for (idx, v) in s.iter() {
                    diff[self.offset(idx)] -= v;
                }
                Ok(diff.iter().map(|x| x * x).sum::<f64>().sqrt())
            }
        }
    }
}

impl<'a> From<&'a Tensor> for TensorRef<'a> {
    fn from(t: &'a Tensor) -> Self {
        TensorRef::Dense(t)
    }
}

impl<'a> From<&'a SparseTensor> for TensorRef<'a> {
    fn from(s: &'a SparseTensor) -> Self {
        TensorRef::Sparse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let s = SparseTensor::new(
            vec![2, 2],
            vec![(vec![1, 0], 1.0), (vec![0, 1], 2.0), (vec![1, 0], 3.0), (vec![1, 1], 0.0)],
        )
        .unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.index(0), &[0, 1]);
        assert_eq!(s.value(1), 4.0);
    }

    #[test]
    fn cancelling_duplicates_vanish() {
        let s = SparseTensor::new(vec![3], vec![(vec![2], 1.5), (vec![2], -1.5)]).unwrap();
        assert_eq!(s.nnz(), 0);
    }

    #[test]
    fn keyed_and_permutation_paths_agree() {
        let dims = vec![3usize, 4, 5];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for e in 0..200usize {
            indices.extend([e * 7 % 3, e * 5 % 4, e * 3 % 5]);
            values.push(if e % 11 == 0 { 0.0 } else { (e as f64).sin() });
        }
        let keyed = SparseTensor::consolidate_by_key(dims.clone(), &indices, &values);
        let big = vec![usize::MAX / 2; 3];
        let wide = SparseTensor::consolidate(big, indices, values);
        assert_eq!(keyed.indices, wide.indices);
        for (a, b) in keyed.values.iter().zip(&wide.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_to_own_sparsification_is_zero() {
        let t = Tensor::from_fn(&[3, 4, 2], |i| 1e4 * (i[0] as f64 + 0.1).sin() + (i[1] * i[2]) as f64 * 1e-3).unwrap();
        let s = SparseTensor::sparsify(&t, 0.0);
        assert_eq!(t.distance_to((&s).into()).unwrap(), 0.0);
        let other = Tensor::zeros(&[3, 4, 2]).unwrap();
        let want = t.frobenius_norm();
        assert!((other.distance_to((&s).into()).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![2, 0], 1.0)]).is_err());
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![0], 1.0)]).is_err());
    }

    #[test]
    fn empty_densifies_to_zero() {
        let s = SparseTensor::zeros(vec![2, 3]).unwrap();
        let d = s.densify(DenseCap::DEFAULT).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.frobenius_norm(), 0.0);
    }

    #[test]
    fn one_entry_is_one_hot() {
        let s = SparseTensor::new(vec![2, 3], vec![(vec![1, 2], 3.0)]).unwrap();
        let d = s.densify(DenseCap::DEFAULT).unwrap();
        assert_eq!(d.get(&[1, 2]), 3.0);
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(s.frobenius_norm(), 3.0);
    }

    #[test]
    fn densify_respects_cap() {
        let s = SparseTensor::zeros(vec![10, 10, 10]).unwrap();
        assert!(matches!(
            s.densify(DenseCap(999)),
            Err(crate::Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn merge_and_split_match_dense_reshape() {
        let s = SparseTensor::new(
            vec![2, 3, 2],
            vec![(vec![1, 2, 0], 1.0), (vec![0, 1, 1], -2.0), (vec![1, 0, 1], 4.0)],
        )
        .unwrap();
        let m = s.merge_modes(1).unwrap();
        assert_eq!(m.dims(), &[2, 6]);
        let d = s.densify(DenseCap::DEFAULT).unwrap();
        assert_eq!(m.densify(DenseCap::DEFAULT).unwrap().data(), d.data());
        assert_eq!(m.split_mode(1, 3, 2).unwrap(), s);
        assert!(s.merge_modes(2).is_err());
        assert!(s.split_mode(1, 2, 2).is_err());
    }

    #[test]
    fn sparsify_tolerance() {
        let t = Tensor::new(vec![4], vec![0.5, -2.0, 0.0, 1e-9]).unwrap();
        assert_eq!(SparseTensor::sparsify(&t, 1e-6).nnz(), 2);
        assert_eq!(SparseTensor::sparsify(&t, 0.0).nnz(), 3);
    }
}

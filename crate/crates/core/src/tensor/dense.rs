use super::{checked_product, next_index, strides, validate_dims, Matrix, ModeGroup};
use crate::error::{invalid, Result};
use crate::linalg::matmul_rm;

/// Dense q-mode tensor of 64-bit floats stored row-major over `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let expected = checked_product(&dims);
        if expected != Some(data.len()) {
            return invalid(format!(
                "dims {dims:?} need {expected:?} entries, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let len = checked_product(dims)
            .ok_or_else(|| crate::Error::ResourceLimit(format!("dims {dims:?} overflow")))?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut out = Self::zeros(dims)?;
        let mut idx = vec![0usize; dims.len()];
        for slot in out.data.iter_mut() {
            *slot = f(&idx);
            next_index(&mut idx, dims);
        }
        Ok(out)
    }

    /// A one-mode tensor of size 1 holding `value`.
    pub fn scalar(value: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(m.row(i).iter());
        }
        Self::new(vec![r, c], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(*i < d);
            off = off * d + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &Tensor, alpha: f64) -> Result<Tensor> {
        if self.dims != other.dims {
            return invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims, other.dims
            ));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add_scaled(other, -1.0)
    }

    /// Frobenius distance `‖self − other‖_F`.
    pub fn distance(&self, other: &Tensor) -> Result<f64> {
        if self.dims != other.dims {
            return invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims, other.dims
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn reshape(&self, dims: Vec<usize>) -> Result<Tensor> {
        Tensor::new(dims, self.data.clone())
    }

    pub fn into_reshaped(self, dims: Vec<usize>) -> Result<Tensor> {
        Tensor::new(dims, self.data)
    }

    /// Reorders modes so that output mode `j` is input mode `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let q = self.dims.len();
        if perm.len() != q {
            return invalid(format!("permutation of length {} for {q} modes", perm.len()));
        }
        let mut seen = vec![false; q];
        for &p in perm {
            if p >= q || seen[p] {
                return invalid(format!("{perm:?} is not a permutation of 0..{q}"));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.dims);
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; q];
        let mut off = 0usize;
        loop {
            data.push(self.data[off]);
            let mut pos = q;
            loop {
                if pos == 0 {
                    return Tensor::new(out_dims, data);
                }
                pos -= 1;
                idx[pos] += 1;
                off += step[pos];
                if idx[pos] < out_dims[pos] {
                    break;
                }
                off -= step[pos] * out_dims[pos];
                idx[pos] = 0;
            }
        }
    }

    /// Row-major `rows × cols` view of the data as a matrix.
    pub fn to_matrix(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.data.len() {
            return invalid(format!(
                "cannot view {} entries as {rows}x{cols}",
                self.data.len()
            ));
        }
        Ok(Matrix::from_row_slice(rows, cols, &self.data))
    }
}

/// Outer product `v_1 ⊗ … ⊗ v_q`.
pub fn outer_product(vectors: &[Vec<f64>]) -> Result<Tensor> {
    if vectors.is_empty() {
        return invalid("outer product of an empty list");
    }
    let dims: Vec<usize> = vectors.iter().map(Vec::len).collect();
    validate_dims(&dims)?;
    let mut data = vec![1.0];
    for v in vectors {
        let mut next = Vec::with_capacity(data.len() * v.len());
        for a in &data {
            next.extend(v.iter().map(|b| a * b));
        }
        data = next;
    }
    Tensor::new(dims, data)
}

/// Contracts mode `i` of `a` with mode `j` of `b`. The result has the modes of
/// `a` without `i` followed by the modes of `b` without `j`.
pub fn contract(a: &Tensor, i: usize, b: &Tensor, j: usize) -> Result<Tensor> {
    contract_modes(a, &[i], b, &[j])
}

/// Contracts `a_modes[k]` of `a` with `b_modes[k]` of `b` for every `k`.
///
/// Free modes of `a` come first, in order, followed by the free modes of `b`.
/// A fully contracted result is returned as a one-mode tensor of size 1.
pub fn contract_modes(
    a: &Tensor,
    a_modes: &[usize],
    b: &Tensor,
    b_modes: &[usize],
) -> Result<Tensor> {
    if a_modes.len() != b_modes.len() {
        return invalid("contracted mode lists differ in length");
    }
    for (&i, &j) in a_modes.iter().zip(b_modes) {
        if i >= a.ndim() || j >= b.ndim() {
            return invalid(format!("contracted mode ({i}, {j}) out of range"));
        }
        if a.dims[i] != b.dims[j] {
            return invalid(format!(
                "dimension mismatch contracting mode {i} (size {}) with mode {j} (size {})",
                a.dims[i], b.dims[j]
            ));
        }
    }
    let a_free: Vec<usize> = (0..a.ndim()).filter(|m| !a_modes.contains(m)).collect();
    let b_free: Vec<usize> = (0..b.ndim()).filter(|m| !b_modes.contains(m)).collect();
    if a_free.len() + a_modes.len() != a.ndim() || b_free.len() + b_modes.len() != b.ndim() {
        return invalid("repeated mode in contraction");
    }
    let a_perm: Vec<usize> = a_free.iter().chain(a_modes).copied().collect();
    let b_perm: Vec<usize> = b_modes.iter().chain(&b_free).copied().collect();
    let ap = a.permute(&a_perm)?;
    let bp = b.permute(&b_perm)?;
    let m: usize = a_free.iter().map(|&x| a.dims[x]).product();
    let k: usize = a_modes.iter().map(|&x| a.dims[x]).product();
    let n: usize = b_free.iter().map(|&x| b.dims[x]).product();
    let data = matmul_rm(&ap.data, m, k, &bp.data, n);
    let mut dims: Vec<usize> = a_free
        .iter()
        .map(|&x| a.dims[x])
        .chain(b_free.iter().map(|&x| b.dims[x]))
        .collect();
    if dims.is_empty() {
        dims.push(1);
    }
    Tensor::new(dims, data)
}

/// Mode-`t` matricization: `n_t × ∏_{j≠t} n_j`, remaining modes in order.
pub fn matricize(a: &Tensor, t: usize) -> Result<Matrix> {
    if t >= a.ndim() {
        return invalid(format!("mode {t} out of range for {} modes", a.ndim()));
    }
    matricize_group(a, &ModeGroup::new(vec![t], a.ndim())?)
}

/// Grouped matricization. Rows enumerate `rows` in the supplied order; columns
/// enumerate the remaining modes in their original relative order.
pub fn matricize_group(a: &Tensor, rows: &ModeGroup) -> Result<Matrix> {
    let q = a.ndim();
    if rows.modes().iter().any(|&m| m >= q) {
        return invalid("mode group does not fit the tensor");
    }
    let cols = rows.complement(q);
    let perm: Vec<usize> = rows.modes().iter().chain(&cols).copied().collect();
    let r: usize = rows.modes().iter().map(|&m| a.dims[m]).product();
    let c: usize = cols.iter().map(|&m| a.dims[m]).product();
    a.permute(&perm)?.to_matrix(r, c)
}

/// Kronecker product: entry `((i, j), (k, l))` is `A[i, k] · B[j, l]`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |row, col| {
        a[(row / br, col / bc)] * b[(row % br, col % bc)]
    })
}

/// Fuses the first two modes: `(i_1, i_2) ↦ i_1·n_2 + i_2`.
pub fn fuse_first_two(a: &Tensor) -> Result<Tensor> {
    if a.ndim() < 2 {
        return invalid("fusing needs at least two modes");
    }
    let mut dims = vec![a.dims[0] * a.dims[1]];
    dims.extend_from_slice(&a.dims[2..]);
    a.reshape(dims)
}

/// Inverse of [`fuse_first_two`].
pub fn unfuse_first_two(a: &Tensor, n1: usize, n2: usize) -> Result<Tensor> {
    if a.dims[0] != n1 * n2 {
        return invalid(format!("leading mode {} is not {n1}x{n2}", a.dims[0]));
    }
    let mut dims = vec![n1, n2];
    dims.extend_from_slice(&a.dims[1..]);
    a.reshape(dims)
}

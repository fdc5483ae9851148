//! Small dense linear algebra on top of nalgebra.

use nalgebra::DMatrixView;

use crate::tensor::Matrix;

/// Relative singular-value cutoff for ranks, orthonormal bases and pseudo-inverses.
pub const RANK_RTOL: f64 = 1e-10;

/// Product of row-major `a` (m × k) and row-major `b` (k × n), row-major result.
pub fn matmul_rm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    // A row-major m×k buffer is the column-major k×m matrix Aᵀ, so Cᵀ = Bᵀ·Aᵀ.
    let at = DMatrixView::from_slice(a, k, m);
    let bt = DMatrixView::from_slice(b, n, k);
    let ct = bt * at;
    ct.data.into()
}

/// Thin SVD with singular values sorted in decreasing order.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

pub fn svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        let k = rows.min(cols);
        return Svd {
            u: Matrix::zeros(rows, k),
            s: Vec::new(),
            vt: Matrix::zeros(k, cols),
        };
    }
    // nalgebra's bidiagonal SVD can return an inaccurate factorization for
    // rank-deficient inputs, so the decomposition itself goes through faer.
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let dec = f.thin_svd().expect("SVD converges on finite input");
    let (u, v) = (dec.U(), dec.V());
    let sd = dec.S().column_vector();
    let k = rows.min(cols);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sd[b].total_cmp(&sd[a]));
    Svd {
        u: Matrix::from_fn(rows, k, |r, c| u[(r, order[c])]),
        s: order.iter().map(|&i| sd[i]).collect(),
        vt: Matrix::from_fn(k, cols, |r, c| v[(c, order[r])]),
    }
}

/// Number of singular values above `rtol · σ_max`.
pub fn numerical_rank(s: &[f64], rtol: f64) -> usize {
    let max = s.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    s.iter().take_while(|&&x| x > rtol * max).count()
}

/// Orthonormal basis of the column span, at most `max_rank` columns and never
/// fewer than one (a zero matrix yields an arbitrary unit column).
pub fn orth(m: &Matrix, max_rank: usize) -> Matrix {
    let d = svd(m);
    let r = numerical_rank(&d.s, RANK_RTOL).min(max_rank).max(1);
    d.u.columns(0, r).into_owned()
}

/// Moore–Penrose pseudo-inverse with the shared relative cutoff.
pub fn pinv(m: &Matrix) -> Matrix {
    let d = svd(m);
    let r = numerical_rank(&d.s, RANK_RTOL);
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for i in 0..r {
        let inv = 1.0 / d.s[i];
        out += d.vt.row(i).transpose() * d.u.column(i).transpose() * inv;
    }
    out
}

/// Minimum-norm least-squares solution of `a·x ≈ b`.
pub fn lstsq(a: &Matrix, b: &Matrix) -> Matrix {
    pinv(a) * b
}

/// Orthonormal basis from a thin QR (columns beyond `min(rows, cols)` dropped).
pub fn qr_q(m: &Matrix) -> Matrix {
    m.clone().qr().q()
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    svd(m).s.first().copied().unwrap_or(0.0)
}

/// Best rank-`k` approximation by truncated SVD: returns `(U_k Σ_k, V_kᵀ)`.
pub fn truncated_svd(m: &Matrix, k: usize) -> (Matrix, Matrix) {
    let d = svd(m);
    let r = k.min(d.s.len()).max(1);
    let mut us = d.u.columns(0, r).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= d.s[j];
    }
    (us, d.vt.rows(0, r).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_rank_one_reconstructs() {
        let data = [
            -0.021248814859686715, 2.9455321270526635, -0.46625192080085665, 0.016376123049145652,
            -2.2700746783454857, 0.3593329264410521, 0.048816873924449666, -6.767044253350235,
            1.0711637983137619, -0.004286888009373782, 0.5942527355087259, -0.09406499994598538,
            0.03344354923142312, -4.635978493591921, 0.7338347653982493, -0.030342978746149996,
            4.206174288657648, -0.6658005266003133,
        ];
        let m = Matrix::from_row_slice(6, 3, &data);
        let d = svd(&m);
        let s = Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.s.clone()));
        assert!((&d.u * s * &d.vt - &m).norm() < 1e-12 * m.norm());
        assert_eq!(numerical_rank(&d.s, RANK_RTOL), 1);
    }

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 - 2.5).collect();
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect();
        let c = matmul_rm(&a, 2, 3, &b, 4);
        for (x, y) in c.iter().zip(naive(&a, 2, 3, &b, 4)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pinv(&m);
        let back = &m * &p * &m;
        assert!((back - &m).norm() < 1e-12);
        assert_eq!(orth(&m, 5).ncols(), 1);
    }

    #[test]
    fn svd_sorted_and_reconstructs() {
        let m = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).cos());
        let d = svd(&m);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = &d.u * Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.s.clone())) * &d.vt;
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix_orth_is_unit_column() {
        let q = orth(&Matrix::zeros(3, 2), 2);
        assert_eq!(q.ncols(), 1);
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }
}

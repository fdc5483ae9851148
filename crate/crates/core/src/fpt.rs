//! Exactly-k Gaussian regression and guess-and-verify Tucker approximation.
//!
//! [`fpt_tucker`] fixes the first `p` modes of a tensor. For each of them it
//! sketches the mode-`m` flattening down to a few columns, draws `T` Gaussian
//! combinations of those columns as candidate `n × k` factors, and then scores
//! every tuple of candidates by the exact projection residual (or the residual
//! of a Countsketch-compressed tensor in PCP mode).

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq, numerical_rank, svd, RANK_RTOL};
use crate::sketching::{derive_seed, sketch_group_dense, stream, Constants, SketchOp};
use crate::tensor::{contract, kronecker, DenseCap, Matrix, SparseTensor, Tensor};

/// Relative size below which a sketched `k × k` system counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

fn is_singular(m: &Matrix) -> bool {
    let s = svd(m).s;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) => hi <= 0.0 || lo <= SINGULAR_RTOL * hi || s.len() < m.ncols(),
        _ => true,
    }
}

/// One draw of a `k × n` Gaussian with `N(0, 1/k)` entries.
pub fn gaussian_matrix(k: usize, n: usize, seed: u64) -> Result<Matrix> {
    SketchOp::gaussian(k, n, seed).to_matrix()
}

/// Solves `min ‖R A X − R B‖` for one `k × n` Gaussian `R`, which makes the
/// sketched system square. Returns [`Error::Retry`] when `R A` is singular.
pub fn gaussian_exact_k_regress(a: &Matrix, b: &Matrix, seed: u64) -> Result<Matrix> {
    let (n, k) = a.shape();
    if k == 0 || k > n {
        return invalid(format!("need 0 < k <= n, got {n} x {k}"));
    }
    if b.nrows() != n {
        return invalid(format!("right-hand side has {} rows, expected {n}", b.nrows()));
    }
    let r = gaussian_matrix(k, n, seed)?;
    let ra = &r * a;
    if is_singular(&ra) {
        return Err(Error::Retry);
    }
    ra.lu().solve(&(&r * b)).ok_or(Error::Retry)
}

/// Multiple-response Kronecker regression `min ‖(I ⊗ R)(A1 ⊗ A2) X − (I ⊗ R) B‖`
/// with `R` a `k × n` Gaussian, `k = A2.ncols()`. Rows of `B` are indexed
/// `i · n + j` for `i` over `A1` and `j` over `A2`.
pub fn kron_gaussian_regress(a1: &Matrix, a2: &Matrix, b: &Matrix, seed: u64) -> Result<Matrix> {
    let m = a1.nrows();
    let (n, k) = a2.shape();
    if k == 0 || k > n || a1.ncols() == 0 || m == 0 {
        return invalid(format!("bad factor shapes {:?} and {:?}", a1.shape(), a2.shape()));
    }
    if b.nrows() != m * n {
        return invalid(format!("right-hand side has {} rows, expected {}", b.nrows(), m * n));
    }
    let r = gaussian_matrix(k, n, seed)?;
    let ra2 = &r * a2;
    if is_singular(&ra2) {
        return Err(Error::Retry);
    }
    let mut rb = Matrix::zeros(m * k, b.ncols());
    for i in 0..m {
        rb.rows_mut(i * k, k).copy_from(&(&r * b.rows(i * n, n)));
    }
    Ok(lstsq(&kronecker(a1, &ra2), &rb))
}

/// Fraction of `draws` seeds for which one Gaussian regression draw is a
/// `(1 + eps)`-approximation of the exact least-squares residual on
/// `min ‖A X − B‖`. Seeds are derived from `bank`.
pub fn gaussian_success_rate(a: &Matrix, b: &Matrix, eps: f64, draws: usize, bank: u64) -> Result<f64> {
    let opt = (a * lstsq(a, b) - b).norm();
    let hits = (0..draws)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(bank, stream::RESTART, i as u64);
            match gaussian_exact_k_regress(a, b, seed) {
                Ok(x) => Ok(((a * x - b).norm() <= (1.0 + eps) * opt) as usize),
                Err(Error::Retry) => Ok(0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / draws.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    Pcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FptParams {
    /// Number of leading modes that receive a factor.
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub eval: EvalMode,
    pub constants: Constants,
    /// Largest number of tuples `trials^p` the search may enumerate.
    pub max_tuples: u64,
}

impl FptParams {
    pub const DEFAULT_TRIALS: usize = 200;
    pub const DEFAULT_MAX_TUPLES: u64 = 100_000_000;

    pub fn new(p: usize, q: usize, k: usize, eps: f64, trials: usize, seed: u64) -> Result<Self> {
        let params = Self {
            p,
            q,
            k,
            eps,
            trials,
            seed,
            eval: EvalMode::Exact,
            constants: Constants::default(),
            max_tuples: Self::DEFAULT_MAX_TUPLES,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p > self.q {
            return invalid(format!("need 1 <= p <= q, got p = {}, q = {}", self.p, self.q));
        }
        if self.k == 0 || self.trials == 0 {
            return invalid("k and trials must be positive");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return invalid(format!("eps must be in (0, 1], got {}", self.eps));
        }
        let c = self.constants;
        if ![c.c_cs, c.c_sign, c.c_sv].iter().all(|x| x.is_finite() && *x > 0.0) {
            return invalid("sketch constants must be positive and finite");
        }
        Ok(())
    }

    pub fn sizes(&self) -> FptSketchSizes {
        let (p, k, eps) = (self.p as f64, self.k as f64, self.eps);
        let rows = |x: f64| {
            if !x.is_finite() || x >= usize::MAX as f64 {
                usize::MAX
            } else {
                (x.ceil() as usize).max(1)
            }
        };
        FptSketchSizes {
            countsketch_rows: rows(self.constants.c_cs * p.powi(3) * k * k / (eps * eps)),
            sign_rows: rows(self.constants.c_sign * p * k * p.ln().max(1.0) / eps).max(self.k),
            projection_rows: rows(self.constants.c_cs * k.powf(2.0 * p) / (eps * eps)),
        }
    }

    fn tuples(&self) -> Option<u64> {
        (0..self.p).try_fold(1u64, |acc, _| acc.checked_mul(self.trials as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FptSketchSizes {
    /// Rows of the Countsketch on each mode's complement.
    pub countsketch_rows: usize,
    /// Rows `s` of the sign sketch that follows it; at least `k`.
    pub sign_rows: usize,
    /// Rows of the Countsketch over the unfactored modes in PCP mode.
    pub projection_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSketch {
    pub countsketch: SketchOp,
    pub sign: SketchOp,
}

/// The selected tuple of factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerCandidate {
    /// `U^1 … U^p`, each `n_m × k`.
    #[serde(skip)]
    pub factors: Vec<Matrix>,
    /// Winning trial index per mode.
    pub trials: Vec<usize>,
    /// Gaussian seed behind each winning factor.
    pub seeds: Vec<u64>,
    pub sketches: Vec<ModeSketch>,
    pub projection: Option<SketchOp>,
    pub eval: EvalMode,
    /// Residual used for selection (exact or PCP estimate).
    pub cost: f64,
    /// Exact residual of the winner, when the dense intermediates fit the cap.
    pub exact_cost: Option<f64>,
    pub norm_sq: f64,
}

fn gaussian_seed(root: u64, mode: usize, trial: usize) -> u64 {
    derive_seed(root, stream::FPT_GAUSS, ((mode as u64) << 32) | trial as u64)
}

/// Orthonormal basis of the column span; a zero matrix gives one zero column
/// so that it projects everything away.
fn span_basis(u: &Matrix) -> Matrix {
    let d = svd(u);
    let r = numerical_rank(&d.s, RANK_RTOL);
    if r == 0 {
        Matrix::zeros(u.nrows(), 1)
    } else {
        d.u.columns(0, r).into_owned()
    }
}

/// Contracts mode 0 of a sparse tensor with `basis`, moving the new mode last.
fn project_first(a: &SparseTensor, basis: &Matrix, cap: DenseCap) -> Result<Tensor> {
    let r = basis.ncols();
    let mut dims = a.dims()[1..].to_vec();
    dims.push(r);
    let len = cap.check(&dims)?;
    let rest_dims = &a.dims()[1..];
    let mut data = vec![0.0; len];
    for (idx, v) in a.iter() {
        let mut off = 0;
        for (i, &d) in idx[1..].iter().zip(rest_dims) {
            off = off * d + i;
        }
        let row = basis.row(idx[0]);
        for (c, slot) in data[off * r..(off + 1) * r].iter_mut().enumerate() {
            *slot += v * row[c];
        }
    }
    Tensor::new(dims, data)
}

struct Search<'a> {
    bases: &'a [Vec<Tensor>],
    norm_sq: f64,
    trials: usize,
}

type Best = Option<(f64, Vec<usize>)>;

impl Search<'_> {
    fn cost(&self, projected: &Tensor) -> f64 {
        let kept: f64 = projected.data().iter().map(|x| x * x).sum();
        let c = (self.norm_sq - kept).max(0.0);
        if c <= 1e-12 * self.norm_sq {
            0.0
        } else {
            c
        }
    }

    /// Depth-first over modes `level..p` in lexicographic trial order; `x` has
    /// mode `level` first. Stops as soon as a zero-cost tuple is found.
    fn descend(&self, level: usize, x: &Tensor, prefix: &mut Vec<usize>, best: &mut Best) -> Result<()> {
        if level == self.bases.len() {
            let c = self.cost(x);
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                *best = Some((c, prefix.clone()));
            }
            return Ok(());
        }
        for t in 0..self.trials {
            let y = contract(x, 0, &self.bases[level][t], 0)?;
            prefix.push(t);
            self.descend(level + 1, &y, prefix, best)?;
            prefix.pop();
            if matches!(best, Some((c, _)) if *c == 0.0) {
                break;
            }
        }
        Ok(())
    }
}

/// Smallest residual `min_G ‖A − G ×₁ U¹ ⋯ ×ₚ Uᵖ‖²` over cores `G`, computed as
/// `‖A‖² − ‖A ×₁ Q₁ᵀ ⋯ ×ₚ Qₚᵀ‖²` with orthonormal bases `Q_m` of the factors.
pub fn evaluate_candidate(factors: &[Matrix], target: &SparseTensor, cap: DenseCap) -> Result<f64> {
    let dims = target.dims();
    if factors.is_empty() || factors.len() > dims.len() {
        return invalid(format!("{} factors for a {}-mode tensor", factors.len(), dims.len()));
    }
    for (m, f) in factors.iter().enumerate() {
        if f.nrows() != dims[m] {
            return invalid(format!("factor {m} has {} rows, mode size is {}", f.nrows(), dims[m]));
        }
    }
    let bases: Vec<Vec<Tensor>> = factors
        .iter()
        .map(|f| Tensor::from_matrix(&span_basis(f)).map(|t| vec![t]))
        .collect::<Result<_>>()?;
    let search = Search {
        bases: &bases,
        norm_sq: target.frobenius_norm().powi(2),
        trials: 1,
    };
    let x = project_first(target, &span_basis(&factors[0]), cap)?;
    let mut best = None;
    search.descend(1, &x, &mut vec![0], &mut best)?;
    Ok(best.map_or(search.norm_sq, |(c, _)| c))
}

/// Compresses the modes after `p` with a Countsketch of `rows` rows, returning
/// a `(p + 1)`-mode tensor whose last mode is the sketch output.
pub fn pcp_target(a: &SparseTensor, p: usize, rows: usize, seed: u64, cap: DenseCap) -> Result<(SparseTensor, SketchOp)> {
    let q = a.ndim();
    let group: Vec<usize> = (p..q).collect();
    let cols: usize = a.dims()[p..].iter().product();
    let cs = SketchOp::countsketch_capped(rows, cols, derive_seed(seed, stream::FPT_PROJ, 0));
    let mid = cs.out_dim(cols)?;
    let c = sketch_group_dense(a, &group, &cs, &SketchOp::Identity { dim: mid }, cap)?;
    let mut perm: Vec<usize> = (1..=p).collect();
    perm.push(0);
    let m = c.permute(&perm)?;
    Ok((SparseTensor::sparsify(&m, 0.0), cs))
}

/// Guess-and-verify Tucker approximation with exactly `k` columns per factor.
pub fn fpt_tucker(a: &SparseTensor, params: &FptParams, cap: DenseCap) -> Result<TuckerCandidate> {
    params.validate()?;
    let q = a.ndim();
    if q != params.q {
        return invalid(format!("parameters are for q = {}, tensor has {q} modes", params.q));
    }
    if a.dims().contains(&0) {
        return invalid("tensor has an empty mode");
    }
    let tuples = params.tuples().unwrap_or(u64::MAX);
    if tuples > params.max_tuples {
        return Err(Error::ResourceLimit(format!(
            "{tuples} candidate tuples exceed the enumeration cap {}",
            params.max_tuples
        )));
    }
    let (p, k, trials, seed) = (params.p, params.k, params.trials, params.seed);
    let sizes = params.sizes();
    let dims = a.dims().to_vec();

    let mut sketches = Vec::with_capacity(p);
    let mut candidates: Vec<Vec<Matrix>> = Vec::with_capacity(p);
    for m in 0..p {
        let group: Vec<usize> = (0..q).filter(|&j| j != m).collect();
        let cols: usize = group.iter().map(|&j| dims[j]).product();
        let cs = SketchOp::countsketch_capped(sizes.countsketch_rows, cols, derive_seed(seed, stream::FPT_CS, m as u64));
        let mid = cs.out_dim(cols)?;
        let sign = SketchOp::sign_capped(sizes.sign_rows, mid, derive_seed(seed, stream::FPT_SIGN, m as u64));
        let c = sketch_group_dense(a, &group, &cs, &sign, cap)?;
        let s = c.dims()[0];
        let ahat = c.to_matrix(s, dims[m])?.transpose();
        let draws = (0..trials)
            .into_par_iter()
            .map(|t| Ok(&ahat * gaussian_matrix(k, s, gaussian_seed(seed, m, t))?.transpose()))
            .collect::<Result<Vec<_>>>()?;
        candidates.push(draws);
        sketches.push(ModeSketch { countsketch: cs, sign });
    }

    let (target, projection) = match params.eval {
        EvalMode::Exact => (a.clone(), None),
        EvalMode::Pcp => {
            let (m, op) = pcp_target(a, p, sizes.projection_rows, seed, cap)?;
            (m, Some(op))
        }
    };
    let bases: Vec<Vec<Matrix>> = candidates.iter().map(|c| c.par_iter().map(span_basis).collect()).collect();
    let tensors: Vec<Vec<Tensor>> = bases
        .iter()
        .map(|b| b.iter().map(Tensor::from_matrix).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let search = Search {
        bases: &tensors,
        norm_sq: target.frobenius_norm().powi(2),
        trials,
    };

    let first_zero = AtomicUsize::new(usize::MAX);
    let found = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Best> {
            if first_zero.load(Ordering::Relaxed) < t {
                return Ok(None);
            }
            let x = project_first(&target, &bases[0][t], cap)?;
            let mut best = None;
            search.descend(1, &x, &mut vec![t], &mut best)?;
            if matches!(best, Some((c, _)) if c == 0.0) {
                first_zero.fetch_min(t, Ordering::Relaxed);
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let (cost, tuple) = found
        .into_iter()
        .flatten()
        .min_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)))
        .expect("at least one tuple");

    let factors: Vec<Matrix> = tuple.iter().enumerate().map(|(m, &t)| candidates[m][t].clone()).collect();
    let exact_cost = match params.eval {
        EvalMode::Exact => Some(cost),
        EvalMode::Pcp => match evaluate_candidate(&factors, a, cap) {
            Ok(c) => Some(c),
            Err(Error::ResourceLimit(_)) => None,
            Err(e) => return Err(e),
        },
    };
    Ok(TuckerCandidate {
        seeds: tuple.iter().enumerate().map(|(m, &t)| gaussian_seed(seed, m, t)).collect(),
        trials: tuple,
        factors,
        sketches,
        projection,
        eval: params.eval,
        cost,
        exact_cost,
        norm_sq: search.norm_sq,
    })
}

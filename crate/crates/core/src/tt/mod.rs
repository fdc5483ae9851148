//! Tensor trains and the sketched right-to-left bicriteria sweep.

mod bicriteria;
mod embedding;

pub use bicriteria::{tt_bicriteria, tt_sketch_sizes, TtSketchSizes};
pub use embedding::ContractionEmbedding;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{io, DenseCap, Tensor, TensorRef};

/// Cores `U^1 … U^q`, stored uniformly as `r_{i−1} × n_i × r_i` with
/// `r_0 = r_q = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Tensor>,
}

impl TensorTrain {
    /// Accepts either uniform three-mode cores or the boundary cores as
    /// matrices (`n_1 × r_1` first, `r_{q−1} × n_q` last).
    pub fn new(cores: Vec<Tensor>) -> Result<Self> {
        let q = cores.len();
        if q < 2 {
            return invalid("a tensor train needs at least two cores");
        }
        let mut out = Vec::with_capacity(q);
        for (i, c) in cores.into_iter().enumerate() {
            let d = c.dims().to_vec();
            let core = match (i, d.len()) {
                (_, 3) => c,
                (0, 2) => c.into_reshaped(vec![1, d[0], d[1]])?,
                (i, 2) if i == q - 1 => c.into_reshaped(vec![d[0], d[1], 1])?,
                _ => return invalid(format!("core {i} has dims {d:?}")),
            };
            out.push(core);
        }
        if out[0].dims()[0] != 1 || out[q - 1].dims()[2] != 1 {
            return invalid("boundary ranks must be 1");
        }
        for i in 1..q {
            let (l, r) = (out[i - 1].dims()[2], out[i].dims()[0]);
            if l != r {
                return invalid(format!("rank mismatch between cores {} and {i}: {l} vs {r}", i - 1));
            }
        }
        Ok(Self { cores: out })
    }

    pub fn q(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[1]).collect()
    }

    /// Internal ranks `r_1 … r_{q−1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.q() - 1].iter().map(|c| c.dims()[2]).collect()
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn core(&self, i: usize) -> &Tensor {
        &self.cores[i]
    }

    /// Core `i` in its natural shape: a matrix at either end, three modes inside.
    pub fn core_natural(&self, i: usize) -> Tensor {
        let c = &self.cores[i];
        let d = c.dims();
        if i == 0 {
            c.reshape(vec![d[1], d[2]]).expect("same size")
        } else if i == self.q() - 1 {
            c.reshape(vec![d[0], d[1]]).expect("same size")
        } else {
            c.clone()
        }
    }

    /// Contracts all cores into a dense tensor.
    pub fn materialize(&self, cap: DenseCap) -> Result<Tensor> {
        let dims = self.dims();
        cap.check(&dims)?;
        let first = &self.cores[0];
        let mut acc = first.reshape(vec![first.dims()[1], first.dims()[2]])?;
        let mut rows = first.dims()[1];
        for core in &self.cores[1..] {
            let (n, r) = (core.dims()[1], core.dims()[2]);
            cap.check(&[rows, n, r])?;
            acc = crate::tensor::contract(&acc, 1, core, 0)?;
            rows *= n;
            acc = acc.into_reshaped(vec![rows, r])?;
        }
        acc.into_reshaped(dims)
    }

    /// `‖materialize(self) − A‖_F`.
    pub fn error<'a>(&self, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
        let a = a.into();
        if a.dims() != self.dims().as_slice() {
            return invalid(format!("train dims {:?} differ from tensor dims {:?}", self.dims(), a.dims()));
        }
        let m = self.materialize(cap)?;
        m.distance_to(a)
    }

    /// Writes `core_<i>.tns` files and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for i in 0..self.q() {
            io::write_dense(&dir.join(format!("core_{i}.tns")), &self.core_natural(i))?;
        }
        let manifest = TtManifest {
            q: self.q(),
            dims: self.dims(),
            ranks: self.ranks(),
            extra,
        };
        io::write_atomic(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: TtManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let cores = (0..manifest.q)
            .map(|i| io::read_tns(&dir.join(format!("core_{i}.tns")))?.densify(DenseCap::DEFAULT))
            .collect::<Result<Vec<_>>>()?;
        let tt = Self::new(cores)?;
        if tt.dims() != manifest.dims || tt.ranks() != manifest.ranks {
            return invalid("manifest disagrees with the core files");
        }
        Ok(tt)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TtManifest {
    q: usize,
    dims: Vec<usize>,
    ranks: Vec<usize>,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn tt_materialize(tt: &TensorTrain, cap: DenseCap) -> Result<Tensor> {
    tt.materialize(cap)
}

pub fn tt_error<'a>(tt: &TensorTrain, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
    tt.error(a, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Matrix, SparseTensor};

    fn train() -> TensorTrain {
        let u1 = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let u2 = Tensor::from_fn(&[2, 3, 2], |i| (i[0] + 2 * i[1]) as f64 - i[2] as f64).unwrap();
        let u3 = Tensor::new(vec![2, 2], vec![0.3, 1.0, 2.0, -1.0]).unwrap();
        TensorTrain::new(vec![u1, u2, u3]).unwrap()
    }

    #[test]
    fn two_cores_materialize_to_product() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 2.0, 0.5, 1.0, 1.0, 0.0]);
        let tt = TensorTrain::new(vec![Tensor::from_matrix(&a).unwrap(), Tensor::from_matrix(&b).unwrap()]).unwrap();
        let m = tt.materialize(DenseCap::DEFAULT).unwrap();
        assert_eq!(m, Tensor::from_matrix(&(a * b)).unwrap());
    }

    #[test]
    fn materialize_matches_index_sum() {
        let tt = train();
        let m = tt.materialize(DenseCap::DEFAULT).unwrap();
        assert_eq!(m.dims(), &[2, 3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    let mut s = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            s += tt.core(0).get(&[0, i, a]) * tt.core(1).get(&[a, j, b]) * tt.core(2).get(&[b, k, 0]);
                        }
                    }
                    assert!((m.get(&[i, j, k]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn self_distance_is_zero() {
        let tt = train();
        let m = tt.materialize(DenseCap::DEFAULT).unwrap();
        assert!(tt.error(&m, DenseCap::DEFAULT).unwrap() < 1e-12);
        let s = SparseTensor::sparsify(&m, 0.0);
        assert!(tt.error(&s, DenseCap::DEFAULT).unwrap() < 1e-6);
    }

    #[test]
    fn sparse_and_dense_errors_agree() {
        let tt = train();
        let a = Tensor::from_fn(&[2, 3, 2], |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64 * 0.1).unwrap();
        let d = tt.error(&a, DenseCap::DEFAULT).unwrap();
        let s = tt.error(&SparseTensor::sparsify(&a, 0.0), DenseCap::DEFAULT).unwrap();
        assert!((d - s).abs() < 1e-9 * d.max(1.0));
    }

    #[test]
    fn rejects_mismatched_ranks() {
        let u1 = Tensor::zeros(&[2, 2]).unwrap();
        let u2 = Tensor::zeros(&[3, 2]).unwrap();
        assert!(TensorTrain::new(vec![u1.clone(), u2]).is_err());
        assert!(TensorTrain::new(vec![u1]).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            train().materialize(DenseCap(5)),
            Err(crate::Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tt = train();
        tt.write_dir(dir.path(), serde_json::json!({"seed": 3})).unwrap();
        assert_eq!(TensorTrain::read_dir(dir.path()).unwrap(), tt);
    }
}

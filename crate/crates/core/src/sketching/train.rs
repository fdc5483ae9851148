use super::{apply_mode, apply_mode_sparse, SketchOp};
use crate::error::{invalid, Result};
use crate::tensor::{SparseTensor, Tensor};
use crate::tt::{ContractionEmbedding, TensorTrain};

/// The chained sketch `L_q(S_1, …, S_q)`: `S_1` maps mode 1, and each later
/// `S_i` maps the fusion of the previous sketch output with mode `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTSketch {
    stages: Vec<SketchOp>,
    dims: Vec<usize>,
    sizes: Vec<usize>,
}

impl TTSketch {
    pub fn new(stages: Vec<SketchOp>, dims: &[usize]) -> Result<Self> {
        if stages.len() != dims.len() || stages.is_empty() {
            return invalid(format!("{} stages for {} modes", stages.len(), dims.len()));
        }
        let mut sizes = Vec::with_capacity(stages.len());
        let mut prev = 1usize;
        for (s, &n) in stages.iter().zip(dims) {
            s.validate()?;
            prev = s.out_dim(prev * n)?;
            sizes.push(prev);
        }
        Ok(Self {
            stages,
            dims: dims.to_vec(),
            sizes,
        })
    }

    /// Countsketch stages with the given row counts; stage `i` gets seed
    /// `derive_seed(seed, TT_SKETCH, i)`.
    pub fn countsketch(dims: &[usize], rows: &[usize], seed: u64) -> Result<Self> {
        if rows.len() != dims.len() {
            return invalid("one row count per mode is required");
        }
        let mut stages = Vec::with_capacity(dims.len());
        let mut prev = 1usize;
        for (i, (&n, &r)) in dims.iter().zip(rows).enumerate() {
            let s = super::derive_seed(seed, super::stream::TT_SKETCH, i as u64);
            stages.push(SketchOp::countsketch(r, prev * n, s));
            prev = r;
        }
        Self::new(stages, dims)
    }

    pub fn stages(&self) -> &[SketchOp] {
        &self.stages
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Output dimension of each prefix `L_1, …, L_q`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if dims != self.dims.as_slice() {
            return invalid(format!("sketch built for {:?}, input has {:?}", self.dims, dims));
        }
        Ok(())
    }
}

/// Applies `L` to `vec(tt)` through the core-by-core recursion, never forming
/// the full tensor.
pub fn tt_sketch_apply_tt(l: &TTSketch, tt: &TensorTrain) -> Result<Vec<f64>> {
    l.check_dims(&tt.dims())?;
    let first = tt.core(0);
    let u1 = first.to_matrix(first.dims()[1], first.dims()[2])?;
    let mut emb = ContractionEmbedding::new(l.stages[0].clone(), &u1)?;
    for (stage, core) in l.stages[1..].iter().zip(&tt.cores()[1..]) {
        emb = emb.extend(stage.clone(), core)?;
    }
    Ok(emb.current().as_slice().to_vec())
}

/// Applies `L` to an explicit dense tensor.
pub fn tt_sketch_apply_dense(l: &TTSketch, a: &Tensor) -> Result<Vec<f64>> {
    l.check_dims(a.dims())?;
    let mut cur = apply_mode(&l.stages[0], a, 0)?;
    for stage in &l.stages[1..] {
        cur = apply_mode(stage, &crate::tensor::fuse_first_two(&cur)?, 0)?;
    }
    Ok(cur.into_data())
}

/// Applies `L` to a sparse tensor; Countsketch stages run in time linear in
/// the current number of nonzeros.
pub fn tt_sketch_apply_sparse(l: &TTSketch, a: &SparseTensor) -> Result<Vec<f64>> {
    l.check_dims(a.dims())?;
    let mut cur = apply_mode_sparse(&l.stages[0], a, 0)?;
    for stage in &l.stages[1..] {
        cur = apply_mode_sparse(stage, &cur.fuse_first_two()?, 0)?;
    }
    let mut out = vec![0.0; cur.dims()[0]];
    for (idx, v) in cur.iter() {
        out[idx[0]] = v;
    }
    Ok(out)
}

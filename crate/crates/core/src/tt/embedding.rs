use crate::error::{invalid, Result};
use crate::sketching::{apply_left, apply_mode, SketchOp};
use crate::tensor::{contract, fuse_first_two, Matrix, Tensor};

/// Sketch of the flattening `M_{1..i}(U^1 ∘ … ∘ U^i)` built one core at a time.
///
/// `W_1 = S^1 U^1` and `W_{i+1} = S^{i+1} · M_{12}(W_i ∘ U^{i+1})`, where the
/// fused row index is `σ · n_{i+1} + a`. Each update costs time independent of
/// `n^i`.
#[derive(Debug, Clone)]
pub struct ContractionEmbedding {
    stages: Vec<SketchOp>,
    w: Vec<Matrix>,
}

impl ContractionEmbedding {
    /// `u1` is the first core as an `n_1 × r_1` matrix.
    pub fn new(s1: SketchOp, u1: &Matrix) -> Result<Self> {
        let w1 = apply_left(&s1, u1)?;
        Ok(Self {
            stages: vec![s1],
            w: vec![w1],
        })
    }

    /// Folds in the next core (`r × n × r′`) with the sketch `s`.
    pub fn extend(mut self, s: SketchOp, core: &Tensor) -> Result<Self> {
        let w = self.current();
        if core.ndim() != 3 || core.dims()[0] != w.ncols() {
            return invalid(format!(
                "core {:?} does not chain onto an embedding with {} columns",
                core.dims(),
                w.ncols()
            ));
        }
        let wt = Tensor::from_matrix(w)?;
        let v = fuse_first_two(&contract(&wt, 1, core, 0)?)?;
        let sketched = apply_mode(&s, &v, 0)?;
        let (rows, cols) = (sketched.dims()[0], sketched.dims()[1]);
        self.w.push(sketched.to_matrix(rows, cols)?);
        self.stages.push(s);
        Ok(self)
    }

    /// The latest `W_i`.
    pub fn current(&self) -> &Matrix {
        self.w.last().expect("embedding has at least one step")
    }

    pub fn steps(&self) -> usize {
        self.w.len()
    }

    pub fn w(&self, i: usize) -> &Matrix {
        &self.w[i]
    }

    pub fn stages(&self) -> &[SketchOp] {
        &self.stages
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketching::derive_seed;
    use crate::tensor::{matricize_group, ModeGroup};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(dims, |_| rng.sample(StandardNormal)).unwrap()
    }

    #[test]
    fn base_case_is_direct_sketch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = gaussian(&[6, 2], &mut rng).to_matrix(6, 2).unwrap();
        let s = SketchOp::countsketch(4, 6, 3);
        let e = ContractionEmbedding::new(s.clone(), &u).unwrap();
        assert_eq!(e.current(), &(s.to_matrix().unwrap() * &u));
    }

    #[test]
    fn two_cores_match_composed_sketch_of_flattening() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u1 = gaussian(&[5, 2], &mut rng);
        let u2 = gaussian(&[2, 4, 3], &mut rng);
        let s1 = SketchOp::countsketch(3, 5, 7);
        let s2 = SketchOp::countsketch(6, 12, 8);
        let e = ContractionEmbedding::new(s1.clone(), &u1.to_matrix(5, 2).unwrap())
            .unwrap()
            .extend(s2.clone(), &u2)
            .unwrap();
        let joined = contract(&u1, 1, &u2, 0).unwrap();
        let m = matricize_group(&joined, &ModeGroup::new(vec![0, 1], 3).unwrap()).unwrap();
        // (S1 ⊗ I_4) acts on the leading index of the fused (n_1, n_2) rows.
        let lifted = SketchOp::compose(vec![
            SketchOp::kron_with_identity(s1, 4, crate::sketching::Side::Left).unwrap(),
            s2,
        ])
        .unwrap();
        let expected = apply_left(&lifted, &m).unwrap();
        assert!((e.current() - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_core_gives_zero() {
        let u1 = Matrix::zeros(4, 2);
        let e = ContractionEmbedding::new(SketchOp::countsketch(3, 4, 1), &u1).unwrap();
        assert!(e.current().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_preserves_norms() {
        // Random 3-core prefix; every W_i x should track the flattening's x.
        let eps_step = 0.25;
        let mut good = 0;
        let seeds = 40;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let dims = [8, 8, 8];
            let r = 2;
            let u1 = gaussian(&[8, r], &mut rng);
            let u2 = gaussian(&[r, 8, r], &mut rng);
            let u3 = gaussian(&[r, 8, r], &mut rng);
            let rows = 400;
            let mk = |i: u64, cols: usize| SketchOp::countsketch(rows, cols, derive_seed(seed, 99, i));
            let mut e = ContractionEmbedding::new(mk(0, dims[0]), &u1.to_matrix(8, r).unwrap()).unwrap();
            let mut prefix = u1.clone();
            let mut ok = true;
            for (i, core) in [&u2, &u3].into_iter().enumerate() {
                e = e.extend(mk(i as u64 + 1, rows * 8), core).unwrap();
                prefix = contract(&prefix, prefix.ndim() - 1, core, 0).unwrap();
                let q = prefix.ndim();
                let m = matricize_group(&prefix, &ModeGroup::new((0..q - 1).collect(), q).unwrap()).unwrap();
                let budget = eps_step * (i + 2) as f64;
                for _ in 0..100 {
                    let x = Matrix::from_fn(r, 1, |_, _| rng.sample(StandardNormal));
                    let ratio = (e.current() * &x).norm() / (&m * &x).norm();
                    ok &= (1.0 - budget..=1.0 + budget).contains(&ratio);
                }
            }
            good += ok as u32;
        }
        assert!(good as f64 >= 0.9 * seeds as f64, "{good}/{seeds}");
    }
}

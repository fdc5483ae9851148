use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tnsketch::fpt::{evaluate_candidate, fpt_tucker, FptParams};
use tnsketch::harness::{generate, tt_svd_oracle, InstanceSpec, Kind};
use tnsketch::linalg::lstsq;
use tnsketch::net::{contract_to_tree, plan_contraction, ContractionPlan, GeneralNetwork};
use tnsketch::sketching::{tt_sketch_apply_dense, tt_sketch_apply_sparse, tt_sketch_apply_tt, SketchParams, TTSketch};
use tnsketch::tensor::kronecker;
use tnsketch::tree::{random_tree_network, tree_bicriteria, ShapeVertex, TreeOptions, TreeShape};
use tnsketch::tt::{tt_bicriteria, TensorTrain};
use tnsketch::{DenseCap, Matrix, SparseTensor, Tensor};

const CAP: DenseCap = DenseCap::DEFAULT;

fn random_train(dims: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> TensorTrain {
    let q = dims.len();
    let cores = (0..q)
        .map(|i| {
            let l = if i == 0 { 1 } else { rank };
            let r = if i == q - 1 { 1 } else { rank };
            Tensor::from_fn(&[l, dims[i], r], |_| rng.sample(StandardNormal)).unwrap()
        })
        .collect();
    TensorTrain::new(cores).unwrap()
}

/// Random tree on `n` vertices: vertex `i > 0` hangs off a random earlier
/// vertex, every leaf gets an open mode and other vertices get one with
/// probability one half.
fn random_shape(n: usize, rng: &mut ChaCha8Rng) -> TreeShape {
    let parents: Vec<Option<usize>> = (0..n).map(|i| (i > 0).then(|| rng.random_range(0..i))).collect();
    let degree: Vec<usize> = (0..n)
        .map(|i| parents.iter().filter(|p| **p == Some(i)).count() + usize::from(parents[i].is_some()))
        .collect();
    let vertices = (0..n)
        .map(|i| ShapeVertex {
            id: i,
            open_mode_size: (degree[i] <= 1 || rng.random_bool(0.5)).then(|| rng.random_range(2..=3)),
            parent: parents[i],
            mode: None,
        })
        .collect();
    TreeShape::new(vertices).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn compiled_trees_contract_to_the_network(seed in any::<u64>(), n in 1usize..=6, extra in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneralNetwork::random_shape(&mut rng, n, 4, 3, extra).unwrap().with_random_factors(&mut rng).unwrap();
        let plan = plan_contraction(&g).unwrap();
        let tn = contract_to_tree(&g, &plan, CAP).unwrap();
        let want = g.contract(CAP).unwrap();
        let got = tn.contract(CAP).unwrap();
        prop_assert!(got.distance(&want).unwrap() <= 1e-9 * want.frobenius_norm().max(1e-300));
        prop_assert!(tn.vertices.iter().all(|v| v.edges.len() <= 3));
    }

    #[test]
    fn plans_replay_to_the_same_degrees(seed in any::<u64>(), n in 2usize..=6, extra in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneralNetwork::random_shape(&mut rng, n, 3, 2, extra).unwrap();
        let plan = plan_contraction(&g).unwrap();
        let back = ContractionPlan::from_json(&plan.to_json()).unwrap();
        prop_assert!(back.validate_for(&g).is_ok());
        prop_assert_eq!(back.t_deg, plan.t_deg);
    }

    #[test]
    fn tree_contraction_ignores_edge_order(seed in any::<u64>(), n in 2usize..=7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(n, &mut rng);
        let tn = random_tree_network(&shape, 2, &mut rng).unwrap();
        let base = tn.contract(CAP).unwrap();
        let mut order: Vec<usize> = (0..tn.edges.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let other = tn.contract_in_order(&order, CAP).unwrap();
        prop_assert!(other.distance(&base).unwrap() <= 1e-12 * base.frobenius_norm().max(1e-300));
    }

    #[test]
    fn tree_output_keeps_topology_and_rank_bound(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(n, &mut rng);
        let a = Tensor::from_fn(&shape.dims(), |_| rng.sample(StandardNormal)).unwrap();
        let params = SketchParams::new(0.5, 0.1, shape.q(), 1).unwrap();
        let tn = tree_bicriteria(&SparseTensor::sparsify(&a, 0.0), &shape, &params, seed, TreeOptions::default(), CAP).unwrap();
        let t = params.rows_sign_regression();
        prop_assert!(tn.ranks().iter().all(|&r| r <= t));
        prop_assert_eq!(tn.vertices.len(), shape.len());
        let mut got: Vec<(usize, usize)> = tn.edges.iter().map(|e| {
            let (u, v) = (tn.vertices[e.u].id, tn.vertices[e.v].id);
            (u.min(v), u.max(v))
        }).collect();
        let mut want: Vec<(usize, usize)> = shape.edges().iter().map(|&(u, v)| {
            let (u, v) = (shape.vertex(u).id, shape.vertex(v).id);
            (u.min(v), u.max(v))
        }).collect();
        got.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn tt_ranks_never_exceed_t(seed in any::<u64>(), q in 2usize..=4, k in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..q).map(|_| rng.random_range(2..=5)).collect();
        let a = Tensor::from_fn(&dims, |_| rng.sample(StandardNormal)).unwrap();
        let c = tnsketch::sketching::Constants { c_cs: 0.05, c_sign: 0.2, c_sv: 1.0 };
        let params = SketchParams::with_constants(0.5, 0.2, q, k, c).unwrap();
        let tt = tt_bicriteria(&SparseTensor::sparsify(&a, 0.0), &params, seed, CAP).unwrap();
        let t = params.rows_sign_regression();
        prop_assert!(tt.ranks().iter().all(|&r| r <= t));
    }

    #[test]
    fn tt_sketch_paths_agree(seed in any::<u64>(), q in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..q).map(|_| rng.random_range(2..=6)).collect();
        let rows: Vec<usize> = (0..q).map(|_| rng.random_range(2..=10)).collect();
        let l = TTSketch::countsketch(&dims, &rows, seed).unwrap();
        let tt = if q >= 2 { Some(random_train(&dims, 2, &mut rng)) } else { None };
        let a = match &tt {
            Some(t) => t.materialize(CAP).unwrap(),
            None => Tensor::from_fn(&dims, |_| rng.sample(StandardNormal)).unwrap(),
        };
        let dense = tt_sketch_apply_dense(&l, &a).unwrap();
        let sparse = tt_sketch_apply_sparse(&l, &SparseTensor::sparsify(&a, 0.0)).unwrap();
        let scale = a.frobenius_norm().max(1.0);
        for (x, y) in dense.iter().zip(&sparse) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
        if let Some(t) = &tt {
            let via_tt = tt_sketch_apply_tt(&l, t).unwrap();
            for (x, y) in dense.iter().zip(&via_tt) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn planted_witness_error_is_eta(seed in any::<u64>(), kind in 0usize..5, noise in 0.0f64..0.5) {
        let kind = [Kind::Tt, Kind::Tree, Kind::Ring, Kind::Tucker, Kind::Random][kind];
        let spec = InstanceSpec { kind, dims: vec![3, 2, 3, 2], rank: 2, noise, seed };
        let inst = generate(&spec, None, CAP).unwrap();
        let w = inst.witness_error(CAP).unwrap();
        prop_assert!((w - inst.eta()).abs() <= 1e-10 * inst.eta().max(1.0));
    }

    #[test]
    fn tt_svd_errors_are_monotone_in_rank(seed in any::<u64>()) {
        let spec = InstanceSpec { kind: Kind::Tt, dims: vec![3, 4, 3, 3], rank: 3, noise: 0.2, seed };
        let a = generate(&spec, None, CAP).unwrap().tensor.densify(CAP).unwrap();
        let errs: Vec<f64> = (1..=5).map(|k| tt_svd_oracle(&a, k, CAP).unwrap().error(&a, CAP).unwrap()).collect();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-10 * a.frobenius_norm()));
    }

    #[test]
    fn fpt_factors_have_exactly_k_columns(seed in any::<u64>(), k in 1usize..=3, p in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SparseTensor::sparsify(&Tensor::from_fn(&[4, 3, 3], |_| rng.sample(StandardNormal)).unwrap(), 0.0);
        let params = FptParams::new(p, 3, k, 0.5, 3, seed).unwrap();
        let c = fpt_tucker(&a, &params, CAP).unwrap();
        prop_assert_eq!(c.factors.len(), p);
        prop_assert!(c.factors.iter().all(|f| f.ncols() == k));
        prop_assert!(c.cost >= 0.0);
    }

    #[test]
    fn exact_candidate_cost_matches_least_squares(seed in any::<u64>(), n0 in 2usize..=5, n1 in 2usize..=5, k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SparseTensor::sparsify(&Tensor::from_fn(&[n0, n1], |_| rng.sample(StandardNormal)).unwrap(), 0.0);
        let factors: Vec<Matrix> = [n0, n1].iter().map(|&n| Matrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))).collect();
        let design = kronecker(&factors[0], &factors[1]);
        let dense = a.densify(CAP).unwrap();
        let b = Matrix::from_column_slice(dense.len(), 1, dense.data());
        let want = (&design * lstsq(&design, &b) - &b).norm_squared();
        let got = evaluate_candidate(&factors, &a, CAP).unwrap();
        prop_assert!((got - want).abs() <= 1e-8 * want.max(1.0));
    }
}

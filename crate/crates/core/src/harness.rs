//! Planted instances, the TT-SVD baseline, run reports and timing helpers.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::svd;
use crate::net::{GeneralNetwork, NetEdgeSpec, NetVertexSpec};
use crate::sketching::{derive_seed, stream, SketchParams};
use crate::tensor::{io, DenseCap, Matrix, SparseTensor, Tensor, TensorRef};
use crate::tree::{random_tree_network, ShapeVertex, TreeNetwork, TreeShape};
use crate::tt::{tt_bicriteria, TensorTrain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Tt,
    Tree,
    Ring,
    Tucker,
    Random,
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tt" => Kind::Tt,
            "tree" => Kind::Tree,
            "ring" => Kind::Ring,
            "tucker" => Kind::Tucker,
            "random" => Kind::Random,
            _ => return invalid(format!("unknown instance kind `{s}`")),
        })
    }
}

/// A factored tensor read from or written to a directory.
#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Tt(TensorTrain),
    Tree(TreeNetwork),
    Net(GeneralNetwork),
    Dense(Tensor),
}

impl Structure {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Structure::Tt(t) => t.dims(),
            Structure::Tree(t) => t.dims(),
            Structure::Net(g) => g.dims(),
            Structure::Dense(t) => t.dims().to_vec(),
        }
    }

    pub fn materialize(&self, cap: DenseCap) -> Result<Tensor> {
        match self {
            Structure::Tt(t) => t.materialize(cap),
            Structure::Tree(t) => t.contract(cap),
            Structure::Net(g) => g.contract(cap),
            Structure::Dense(t) => Ok(t.clone()),
        }
    }

    pub fn error<'a>(&self, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
        let a = a.into();
        match self {
            Structure::Tt(t) => t.error(a, cap),
            Structure::Tree(t) => t.error(a, cap),
            Structure::Net(g) => g.error(a, cap),
            Structure::Dense(t) => {
                if t.dims() != a.dims() {
                    return invalid(format!("dims {:?} differ from {:?}", t.dims(), a.dims()));
                }
                t.distance_to(a)
            }
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        match self {
            Structure::Tt(t) => t.write_dir(dir, serde_json::Value::Null),
            Structure::Tree(t) => t.write_dir(dir, serde_json::Value::Null),
            Structure::Net(g) => g.write_dir(dir),
            Structure::Dense(t) => {
                std::fs::create_dir_all(dir)?;
                io::write_dense(&dir.join("tensor.tns"), t)
            }
        }
    }

    /// Recognizes a tensor-train, tree-network or general-network directory,
    /// or a bare `.tns` file.
    pub fn read(path: &Path) -> Result<Self> {
        if path.is_file() {
            return Ok(Structure::Dense(io::read_tns(path)?.densify(DenseCap::DEFAULT)?));
        }
        if path.join("network.json").exists() {
            return Ok(Structure::Net(GeneralNetwork::read_dir(path)?));
        }
        if path.join("core_0.tns").exists() {
            return Ok(Structure::Tt(TensorTrain::read_dir(path)?));
        }
        if path.join("manifest.json").exists() {
            return Ok(Structure::Tree(TreeNetwork::read_dir(path)?));
        }
        if path.join("tensor.tns").exists() {
            return Ok(Structure::Dense(io::read_tns(&path.join("tensor.tns"))?.densify(DenseCap::DEFAULT)?));
        }
        invalid(format!("{} holds no recognizable tensor structure", path.display()))
    }
}

/// A tree on `dims.len()` vertices where vertex `i` has parent `(i − 1) / 2`
/// and carries mode `i`.
pub fn balanced_binary_shape(dims: &[usize]) -> Result<TreeShape> {
    TreeShape::new(
        dims.iter()
            .enumerate()
            .map(|(i, &n)| ShapeVertex {
                id: i,
                open_mode_size: Some(n),
                parent: (i > 0).then(|| (i - 1) / 2),
                mode: None,
            })
            .collect(),
    )
}

/// A cycle through one open vertex per mode, every bond of rank `rank`.
pub fn ring_shape(dims: &[usize], rank: usize) -> Result<GeneralNetwork> {
    let q = dims.len();
    let vertices = dims
        .iter()
        .enumerate()
        .map(|(id, &n)| NetVertexSpec {
            id,
            open_mode_size: Some(n),
            mode: None,
        })
        .collect();
    let edges: Vec<NetEdgeSpec> = (0..q).map(|i| NetEdgeSpec { u: i, v: (i + 1) % q, rank }).collect();
    GeneralNetwork::from_specs(vertices, &edges)
}

/// A star whose centre (id `q`, no open mode) is the core and whose leaves
/// are the factor matrices.
pub fn tucker_shape(dims: &[usize], rank: usize) -> Result<GeneralNetwork> {
    let q = dims.len();
    let mut vertices: Vec<NetVertexSpec> = dims
        .iter()
        .enumerate()
        .map(|(id, &n)| NetVertexSpec {
            id,
            open_mode_size: Some(n),
            mode: None,
        })
        .collect();
    vertices.push(NetVertexSpec {
        id: q,
        open_mode_size: None,
        mode: None,
    });
    let edges: Vec<NetEdgeSpec> = (0..q).map(|i| NetEdgeSpec { u: i, v: q, rank }).collect();
    GeneralNetwork::from_specs(vertices, &edges)
}

fn random_tt(dims: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> Result<TensorTrain> {
    let q = dims.len();
    if q < 2 {
        return invalid("a tensor train needs at least two modes");
    }
    let mut ranks = vec![1usize; q + 1];
    for i in 1..q {
        let left: usize = dims[..i].iter().product();
        let right: usize = dims[i..].iter().product();
        ranks[i] = rank.min(left).min(right);
    }
    let cores = (0..q)
        .map(|i| Tensor::from_fn(&[ranks[i], dims[i], ranks[i + 1]], |_| rng.sample(StandardNormal)))
        .collect::<Result<Vec<_>>>()?;
    TensorTrain::new(cores)
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: Kind,
    pub dims: Vec<usize>,
    pub rank: usize,
    /// Noise norm as a fraction of the signal norm.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    #[serde(flatten)]
    pub spec: InstanceSpec,
    /// Absolute noise norm `η`.
    pub eta: f64,
    pub signal_norm: f64,
    pub tensor_norm: f64,
    pub nnz: usize,
}

/// A planted structure plus Gaussian noise of norm exactly `eta`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub manifest: InstanceManifest,
    pub tensor: SparseTensor,
    pub planted: Structure,
    /// Tree shape used for `tree` instances.
    pub shape: Option<TreeShape>,
}

impl Instance {
    pub fn eta(&self) -> f64 {
        self.manifest.eta
    }

    /// `‖A − planted‖_F`, which equals `eta` up to rounding.
    pub fn witness_error(&self, cap: DenseCap) -> Result<f64> {
        self.planted.error(&self.tensor, cap)
    }

    /// Writes `tensor.tns`, `instance.json`, `planted/` and, for tree
    /// instances, `shape.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_sparse(&dir.join("tensor.tns"), &self.tensor)?;
        self.planted.write_dir(&dir.join("planted"))?;
        if let Some(shape) = &self.shape {
            io::write_atomic(&dir.join("shape.json"), &shape.to_json())?;
        }
        io::write_atomic(&dir.join("instance.json"), &serde_json::to_string_pretty(&self.manifest)?)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: InstanceManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("instance.json"))?)?;
        let tensor = io::read_tns(&dir.join("tensor.tns"))?;
        let planted = Structure::read(&dir.join("planted"))?;
        let shape_path = dir.join("shape.json");
        let shape = if shape_path.exists() {
            Some(TreeShape::from_json(&std::fs::read_to_string(shape_path)?)?)
        } else {
            None
        };
        Ok(Self {
            manifest,
            tensor,
            planted,
            shape,
        })
    }
}

/// Generates a planted instance. `shape` overrides the default balanced
/// binary tree for `tree` instances. All randomness comes from `spec.seed`.
pub fn generate(spec: &InstanceSpec, shape: Option<&TreeShape>, cap: DenseCap) -> Result<Instance> {
    let mut spec = spec.clone();
    if let Some(s) = shape {
        if spec.kind != Kind::Tree {
            return invalid("a tree shape only applies to tree instances");
        }
        spec.dims = s.dims();
    }
    if spec.dims.is_empty() || spec.dims.contains(&0) {
        return invalid(format!("bad dims {:?}", spec.dims));
    }
    if spec.rank == 0 {
        return invalid("rank must be positive");
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return invalid(format!("noise must be a nonnegative fraction, got {}", spec.noise));
    }
    cap.check(&spec.dims)?;
    let dims = spec.dims.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream::INSTANCE, 0));
    let (planted, tree_shape) = match spec.kind {
        Kind::Tt => (Structure::Tt(random_tt(&dims, spec.rank, &mut rng)?), None),
        Kind::Tree => {
            let s = match shape {
                Some(s) => s.clone(),
                None => balanced_binary_shape(&dims)?,
            };
            (Structure::Tree(random_tree_network(&s, spec.rank, &mut rng)?), Some(s))
        }
        Kind::Ring => (Structure::Net(ring_shape(&dims, spec.rank)?.with_random_factors(&mut rng)?), None),
        Kind::Tucker => (Structure::Net(tucker_shape(&dims, spec.rank)?.with_random_factors(&mut rng)?), None),
        Kind::Random => (Structure::Dense(Tensor::from_fn(&dims, |_| rng.sample(StandardNormal))?), None),
    };
    let signal = planted.materialize(cap)?;
    let signal_norm = signal.frobenius_norm();
    let eta = spec.noise * signal_norm;
    let tensor = if eta > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream::INSTANCE, 1));
        let z = Tensor::from_fn(&dims, |_| noise_rng.sample(StandardNormal))?;
        let scale = eta / z.frobenius_norm();
        signal.add_scaled(&z, scale)?
    } else {
        signal
    };
    let tensor = SparseTensor::sparsify(&tensor, 0.0);
    let eta = match &planted {
        Structure::Dense(t) => t.distance(&tensor.densify(cap)?)?,
        _ => eta,
    };
    Ok(Instance {
        manifest: InstanceManifest {
            spec,
            eta,
            signal_norm,
            tensor_norm: tensor.frobenius_norm(),
            nnz: tensor.nnz(),
        },
        tensor,
        planted,
        shape: tree_shape,
    })
}

/// Sequential truncated-SVD tensor-train sweep with every rank at most `k`.
pub fn tt_svd_oracle(a: &Tensor, k: usize, cap: DenseCap) -> Result<TensorTrain> {
    let dims = a.dims().to_vec();
    let q = dims.len();
    if q < 2 {
        return invalid("TT-SVD needs at least two modes");
    }
    if k == 0 {
        return invalid("rank must be positive");
    }
    cap.check(&dims)?;
    let mut cores = Vec::with_capacity(q);
    let mut r_prev = 1;
    let mut rest: usize = dims[1..].iter().product();
    let mut c = a.to_matrix(dims[0], rest)?;
    for i in 0..q - 1 {
        let d = svd(&c);
        let r = k.min(d.s.len()).max(1);
        let u = d.u.columns(0, r).into_owned();
        cores.push(Tensor::from_matrix(&u)?.into_reshaped(vec![r_prev, dims[i], r])?);
        let mut sv = d.vt.rows(0, r).into_owned();
        for (j, mut row) in sv.row_iter_mut().enumerate() {
            row *= d.s[j];
        }
        rest /= dims[i + 1];
        c = Tensor::from_matrix(&sv)?.to_matrix(r * dims[i + 1], rest)?;
        r_prev = r;
    }
    cores.push(Tensor::from_matrix(&c)?.into_reshaped(vec![r_prev, dims[q - 1], 1])?);
    TensorTrain::new(cores)
}

/// Everything a CLI command reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub params: serde_json::Value,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_seed: Option<u64>,
    /// Best achieved Frobenius error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_seed_errors: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub oracle_errors: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_bound: Option<usize>,
    #[serde(default)]
    pub sketch_sizes: serde_json::Value,
    /// Wall-clock seconds per phase.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(phase.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }
}

/// `nnz` entries at uniform random positions (duplicates summed) with
/// standard Gaussian values.
pub fn random_sparse(dims: &[usize], nnz: usize, seed: u64) -> Result<SparseTensor> {
    if dims.is_empty() || dims.contains(&0) {
        return invalid(format!("bad dims {dims:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INSTANCE, 2));
    let mut indices = Vec::with_capacity(nnz * dims.len());
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        indices.extend(dims.iter().map(|&n| rng.random_range(0..n)));
        values.push(rng.sample(StandardNormal));
    }
    SparseTensor::from_coo(dims.to_vec(), indices, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub nnz: usize,
    /// Median wall time of the tensor-train sweep in seconds.
    pub seconds: f64,
    pub runs: usize,
}

/// Times `tt_bicriteria` on `scale` random sparse tensors with `q` modes.
/// Row `i` has `base_nnz · 2^i` nonzeros and mode size `⌈base_n · 2^{i/q}⌉`,
/// so the density stays roughly fixed while nnz doubles.
pub fn bench_tt(
    scale: usize,
    base_nnz: usize,
    base_n: usize,
    runs: usize,
    params: &SketchParams,
    seed: u64,
    cap: DenseCap,
) -> Result<Vec<BenchRow>> {
    let q = params.q;
    if runs == 0 || base_n == 0 {
        return invalid("runs and base_n must be positive");
    }
    let mut rows = Vec::with_capacity(scale);
    for i in 0..scale {
        let n = (base_n as f64 * 2f64.powf(i as f64 / q as f64)).ceil() as usize;
        let target = base_nnz << i;
        let a = random_sparse(&vec![n; q], target, derive_seed(seed, stream::INSTANCE, 100 + i as u64))?;
        let mut times = Vec::with_capacity(runs);
        for r in 0..runs {
            let start = Instant::now();
            tt_bicriteria(&a, params, derive_seed(seed, stream::RESTART, r as u64), cap)?;
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            n,
            nnz: a.nnz(),
            seconds: times[runs / 2],
            runs,
        });
    }
    Ok(rows)
}

/// Best rank-`k` approximation error of a matrix.
pub fn eckart_young_error(m: &Matrix, k: usize) -> f64 {
    svd(m).s.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
}

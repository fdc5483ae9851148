//! Command-line front end for `tnsketch`.
//!
//! Every command prints a [`RunReport`] as JSON on stdout. Exit codes: 0 on
//! success, 2 for invalid input, 3 when a resource limit is hit, 1 otherwise.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use tnsketch::fpt::{fpt_tucker, EvalMode, FptParams};
use tnsketch::harness::{bench_tt, generate, tt_svd_oracle, Instance, InstanceSpec, Kind, RunReport, Structure};
use tnsketch::net::{approx_by_tree, compile_shape, contract_to_tree, plan_contraction, ContractionPlan, GeneralNetwork};
use tnsketch::sketching::{derive_seed, stream, Constants, SketchParams};
use tnsketch::tensor::io;
use tnsketch::tree::{tree_bicriteria, tree_sketch_sizes, TreeOptions, TreeShape};
use tnsketch::tt::{tt_bicriteria, tt_sketch_sizes};
use tnsketch::{DenseCap, Error, Result, SparseTensor};

#[derive(Debug, Parser)]
#[command(name = "tnsketch", version, about = "Sketching-based low-rank tensor approximation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Not every command reads all of them.
#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Target rank k.
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    /// Number of independent restarts; the best is kept.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest dense tensor, in entries.
    #[arg(long, env = "TNSKETCH_DENSE_CAP", default_value_t = DenseCap::DEFAULT.0)]
    pub dense_cap: usize,
    /// Sketch-size constants `c_cs,c_sign,c_sv`.
    #[arg(long, value_parser = parse_constants)]
    pub constants: Option<Constants>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalModeArg {
    Exact,
    Pcp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted instance (tensor.tns, instance.json, planted/).
    Generate {
        #[arg(long, value_parser = parse_kind)]
        kind: Kind,
        /// Mode sizes, comma separated.
        #[arg(long, value_delimiter = ',', required_unless_present = "tree")]
        dims: Vec<usize>,
        /// Noise norm as a fraction of the signal norm.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Tree shape for `--kind tree`.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Bicriteria tensor-train decomposition.
    DecomposeTt {
        /// A `.tns` file or an instance directory.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bicriteria tree tensor network decomposition.
    DecomposeTree {
        input: PathBuf,
        /// Tree shape JSON; defaults to the instance's shape.json.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Root vertex id.
        #[arg(long)]
        root: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Compile a general network into a tree network.
    CompileNet {
        /// Network shape JSON, or a directory with network.json and factors.
        #[arg(long)]
        net: PathBuf,
        /// Contraction plan JSON; planned greedily when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Approximate a tensor under a general network shape through a compiled tree.
    DecomposeNet {
        input: PathBuf,
        /// Network shape; defaults to the instance's planted network.
        #[arg(long)]
        net: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Guess-and-verify Tucker approximation with exactly k columns per factor.
    FptTucker {
        input: PathBuf,
        /// Number of leading modes that get a factor; defaults to all.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = FptParams::DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = EvalModeArg::Exact)]
        eval_mode: EvalModeArg,
        #[arg(long, default_value_t = FptParams::DEFAULT_MAX_TUPLES)]
        max_tuples: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Error of a stored model against a tensor.
    Eval {
        input: PathBuf,
        /// Tensor-train, tree or network directory, or a `.tns` file.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time the tensor-train sweep while nnz doubles.
    Bench {
        #[arg(long, default_value_t = 4)]
        scale_nnz: usize,
        #[arg(long, default_value_t = 4)]
        q: usize,
        #[arg(long, default_value_t = 20_000)]
        base_nnz: usize,
        #[arg(long, default_value_t = 16)]
        base_n: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_constants(s: &str) -> std::result::Result<Constants, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [c_cs, c_sign, c_sv] => Ok(Constants { c_cs, c_sign, c_sv }),
        _ => Err("expected three comma-separated constants".into()),
    }
}

fn parse_kind(s: &str) -> std::result::Result<Kind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) | Error::Io(_) => 2,
        Error::ResourceLimit(_) => 3,
        Error::InvalidState(_) | Error::Retry => 1,
    }
}

impl Common {
    fn cap(&self) -> DenseCap {
        DenseCap(self.dense_cap)
    }

    fn params(&self, q: usize) -> Result<SketchParams> {
        SketchParams::with_constants(self.eps, self.delta, q, self.rank, self.constants.unwrap_or_default())
    }

    fn restart_seeds(&self) -> Result<Vec<u64>> {
        if self.seeds == 0 {
            return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
        }
        Ok((0..self.seeds as u64).map(|i| derive_seed(self.seed, stream::RESTART, i)).collect())
    }

    fn report(&self, command: &str) -> RunReport {
        let mut r = RunReport::new(command);
        r.params = json!({
            "eps": self.eps,
            "delta": self.delta,
            "rank": self.rank,
            "seeds": self.seeds,
            "seed": self.seed,
            "dense_cap": self.dense_cap,
            "constants": self.constants.unwrap_or_default(),
        });
        r
    }
}

struct Input {
    tensor: SparseTensor,
    instance: Option<Instance>,
}

fn load_input(path: &Path) -> Result<Input> {
    if path.is_dir() {
        let instance = Instance::read_dir(path)?;
        Ok(Input {
            tensor: instance.tensor.clone(),
            instance: Some(instance),
        })
    } else {
        Ok(Input {
            tensor: io::read_tns(path)?,
            instance: None,
        })
    }
}

/// Runs `f` on every restart seed in parallel and keeps the lowest error,
/// breaking ties by seed position.
fn best_of<M: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<(f64, M)> + Sync) -> Result<(usize, f64, M, Vec<f64>)> {
    let results = seeds.par_iter().map(|&s| f(s)).collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (best, (err, model)) = results
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .expect("at least one seed");
    Ok((best, err, model, errors))
}

fn fill_errors(r: &mut RunReport, input: &Input, seeds: Vec<u64>, best: usize, err: f64, errors: Vec<f64>) {
    let norm = input.tensor.frobenius_norm();
    r.best_seed = Some(seeds[best]);
    r.seeds = seeds;
    r.error = Some(err);
    r.relative_error = Some(if norm > 0.0 { err / norm } else { err });
    r.per_seed_errors = errors;
    r.witness_eta = input.instance.as_ref().map(Instance::eta);
}

fn write_report(dir: &Path, r: &RunReport) -> Result<()> {
    io::write_atomic(&dir.join("report.json"), &serde_json::to_string_pretty(r)?)
}

pub fn run(cli: Cli) -> Result<RunReport> {
    match cli.command {
        Command::Generate {
            kind,
            dims,
            noise,
            tree,
            common,
        } => cmd_generate(kind, dims, noise, tree, &common),
        Command::DecomposeTt { input, common } => cmd_decompose_tt(&input, &common),
        Command::DecomposeTree {
            input,
            tree,
            root,
            common,
        } => cmd_decompose_tree(&input, tree.as_deref(), root, &common),
        Command::CompileNet { net, plan, common } => cmd_compile_net(&net, plan.as_deref(), &common),
        Command::DecomposeNet { input, net, common } => cmd_decompose_net(&input, net.as_deref(), &common),
        Command::FptTucker {
            input,
            p,
            trials,
            eval_mode,
            max_tuples,
            common,
        } => cmd_fpt(&input, p, trials, eval_mode, max_tuples, &common),
        Command::Eval { input, model, common } => cmd_eval(&input, &model, &common),
        Command::Bench {
            scale_nnz,
            q,
            base_nnz,
            base_n,
            runs,
            common,
        } => cmd_bench(scale_nnz, q, base_nnz, base_n, runs, &common),
    }
}

fn cmd_generate(kind: Kind, dims: Vec<usize>, noise: f64, tree: Option<PathBuf>, c: &Common) -> Result<RunReport> {
    let mut r = c.report("generate");
    let shape = tree
        .map(|p| TreeShape::from_json(&std::fs::read_to_string(p)?))
        .transpose()?;
    let spec = InstanceSpec {
        kind,
        dims,
        rank: c.rank,
        noise,
        seed: c.seed,
    };
    let inst = r.time("generate", || generate(&spec, shape.as_ref(), c.cap()))?;
    r.seeds = vec![c.seed];
    r.witness_eta = Some(inst.eta());
    r.error = Some(r.time("witness", || inst.witness_error(c.cap()))?);
    r.extra = serde_json::to_value(&inst.manifest)?;
    if let Some(out) = &c.out {
        r.time("write", || inst.write_dir(out))?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn cmd_decompose_tt(input: &Path, c: &Common) -> Result<RunReport> {
    let mut r = c.report("decompose-tt");
    let input = r.time("read", || load_input(input))?;
    let a = &input.tensor;
    let params = c.params(a.ndim())?;
    let seeds = c.restart_seeds()?;
    let cap = c.cap();
    let (best, err, tt, errors) = r.time("decompose", || {
        best_of(&seeds, |s| {
            let tt = tt_bicriteria(a, &params, s, cap)?;
            Ok((tt.error(a, cap)?, tt))
        })
    })?;
    fill_errors(&mut r, &input, seeds, best, err, errors);
    r.ranks = Some(tt.ranks());
    r.rank_bound = Some(params.rows_sign_regression());
    r.sketch_sizes = serde_json::to_value(tt_sketch_sizes(&params))?;
    if input.instance.is_some() {
        if let Ok(dense) = a.densify(cap) {
            let oracle = r.time("oracle", || tt_svd_oracle(&dense, c.rank, cap).and_then(|o| o.error(&dense, cap)))?;
            r.oracle_errors.insert(format!("tt_svd_k{}", c.rank), oracle);
        }
    }
    if let Some(out) = &c.out {
        tt.write_dir(out, json!({ "seed": r.best_seed }))?;
        write_report(out, &r)?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn read_shape(path: &Path) -> Result<TreeShape> {
    TreeShape::from_json(&std::fs::read_to_string(path)?)
}

fn cmd_decompose_tree(input: &Path, tree: Option<&Path>, root: Option<usize>, c: &Common) -> Result<RunReport> {
    let mut r = c.report("decompose-tree");
    let input = r.time("read", || load_input(input))?;
    let shape = match (tree, input.instance.as_ref().and_then(|i| i.shape.clone())) {
        (Some(p), _) => read_shape(p)?,
        (None, Some(s)) => s,
        (None, None) => return Err(Error::InvalidArgument("--tree is required for this input".into())),
    };
    let a = &input.tensor;
    let params = c.params(a.ndim())?;
    let seeds = c.restart_seeds()?;
    let cap = c.cap();
    let opts = TreeOptions { root };
    let (best, err, tn, errors) = r.time("decompose", || {
        best_of(&seeds, |s| {
            let tn = tree_bicriteria(a, &shape, &params, s, opts, cap)?;
            Ok((tn.error(a, cap)?, tn))
        })
    })?;
    fill_errors(&mut r, &input, seeds, best, err, errors);
    r.ranks = Some(tn.ranks());
    r.rank_bound = Some(params.rows_sign_regression());
    r.sketch_sizes = serde_json::to_value(tree_sketch_sizes(&params, shape.max_degree()))?;
    if let Some(out) = &c.out {
        tn.write_dir(out, json!({ "seed": r.best_seed }))?;
        write_report(out, &r)?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn read_network(path: &Path) -> Result<GeneralNetwork> {
    if path.is_dir() {
        GeneralNetwork::read_dir(path)
    } else {
        GeneralNetwork::from_json(&std::fs::read_to_string(path)?)
    }
}

fn cmd_compile_net(net: &Path, plan: Option<&Path>, c: &Common) -> Result<RunReport> {
    let mut r = c.report("compile-net");
    let g = read_network(net)?;
    let plan = match plan {
        Some(p) => {
            let plan = ContractionPlan::from_json(&std::fs::read_to_string(p)?)?;
            plan.validate_for(&g)?;
            plan
        }
        None => r.time("plan", || plan_contraction(&g))?,
    };
    let cap = c.cap();
    let with_factors = g.vertices.iter().all(|v| v.factor.is_some());
    let mut extra = json!({ "plan": plan, "has_factors": with_factors });
    if with_factors {
        let tn = r.time("compile", || contract_to_tree(&g, &plan, cap))?;
        r.ranks = Some(tn.ranks());
        if let Ok(want) = g.contract(cap) {
            let err = r.time("check", || tn.error(&want, cap))?;
            let norm = want.frobenius_norm();
            r.error = Some(err);
            r.relative_error = Some(if norm > 0.0 { err / norm } else { err });
        }
        extra["tree_vertices"] = json!(tn.vertices.len());
        if let Some(out) = &c.out {
            tn.write_dir(out, json!({ "plan": plan }))?;
        }
    } else {
        let (shape, tn) = r.time("compile", || compile_shape(&g, &plan))?;
        r.ranks = Some(tn.ranks());
        extra["tree_vertices"] = json!(shape.len());
        if let Some(out) = &c.out {
            std::fs::create_dir_all(out)?;
            io::write_atomic(&out.join("shape.json"), &shape.to_json())?;
        }
    }
    r.extra = extra;
    if let Some(out) = &c.out {
        io::write_atomic(&out.join("plan.json"), &plan.to_json())?;
        write_report(out, &r)?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn cmd_decompose_net(input: &Path, net: Option<&Path>, c: &Common) -> Result<RunReport> {
    let mut r = c.report("decompose-net");
    let input = r.time("read", || load_input(input))?;
    let mut g = match (net, input.instance.as_ref().map(|i| &i.planted)) {
        (Some(p), _) => read_network(p)?,
        (None, Some(Structure::Net(g))) => g.clone(),
        _ => return Err(Error::InvalidArgument("--net is required for this input".into())),
    };
    for v in &mut g.vertices {
        v.factor = None;
    }
    let a = &input.tensor;
    let params = c.params(a.ndim())?;
    let seeds = c.restart_seeds()?;
    let cap = c.cap();
    let (best, err, approx, errors) = r.time("decompose", || {
        best_of(&seeds, |s| {
            let approx = approx_by_tree(a, &g, &params, s, cap)?;
            let err = approx.network.as_ref().expect("network is set").error(a, cap)?;
            Ok((err, approx))
        })
    })?;
    fill_errors(&mut r, &input, seeds, best, err, errors);
    let tn = approx.network.as_ref().expect("network is set");
    let tree_params = SketchParams::with_constants(c.eps, c.delta, a.ndim(), approx.tree_rank, params.constants)?;
    r.ranks = Some(tn.ranks());
    r.rank_bound = Some(tree_params.rows_sign_regression());
    let degree = approx.shape.as_ref().map_or(1, TreeShape::max_degree);
    r.sketch_sizes = serde_json::to_value(tree_sketch_sizes(&tree_params, degree))?;
    r.extra = json!({ "tree_rank": approx.tree_rank, "plan": approx.plan });
    if let Some(out) = &c.out {
        tn.write_dir(out, json!({ "seed": r.best_seed, "tree_rank": approx.tree_rank }))?;
        write_report(out, &r)?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn cmd_fpt(
    input: &Path,
    p: Option<usize>,
    trials: usize,
    eval_mode: EvalModeArg,
    max_tuples: u64,
    c: &Common,
) -> Result<RunReport> {
    let mut r = c.report("fpt-tucker");
    let input = r.time("read", || load_input(input))?;
    let a = &input.tensor;
    let q = a.ndim();
    let mut params = FptParams::new(p.unwrap_or(q), q, c.rank, c.eps, trials, c.seed)?;
    params.eval = match eval_mode {
        EvalModeArg::Exact => EvalMode::Exact,
        EvalModeArg::Pcp => EvalMode::Pcp,
    };
    params.constants = c.constants.unwrap_or_default();
    params.max_tuples = max_tuples;
    let cand = r.time("search", || fpt_tucker(a, &params, c.cap()))?;
    r.seeds = vec![c.seed];
    r.params["trials"] = json!(trials);
    r.params["p"] = json!(params.p);
    r.params["eval_mode"] = json!(params.eval);
    r.witness_eta = input.instance.as_ref().map(Instance::eta);
    if let Some(cost) = cand.exact_cost {
        let err = cost.sqrt();
        let norm = a.frobenius_norm();
        r.error = Some(err);
        r.relative_error = Some(if norm > 0.0 { err / norm } else { err });
    }
    r.ranks = Some(cand.factors.iter().map(|f| f.ncols()).collect());
    r.sketch_sizes = serde_json::to_value(params.sizes())?;
    r.extra = serde_json::to_value(&cand)?;
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out)?;
        for (m, f) in cand.factors.iter().enumerate() {
            io::write_dense(&out.join(format!("factor_{m}.tns")), &tnsketch::Tensor::from_matrix(f)?)?;
        }
        io::write_atomic(&out.join("candidate.json"), &serde_json::to_string_pretty(&cand)?)?;
        write_report(out, &r)?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

fn cmd_eval(input: &Path, model: &Path, c: &Common) -> Result<RunReport> {
    let mut r = c.report("eval");
    let input = r.time("read", || load_input(input))?;
    let m = Structure::read(model)?;
    let a = &input.tensor;
    let err = r.time("eval", || m.error(a, c.cap()))?;
    let norm = a.frobenius_norm();
    r.error = Some(err);
    r.relative_error = Some(if norm > 0.0 { err / norm } else { err });
    r.witness_eta = input.instance.as_ref().map(Instance::eta);
    if let Structure::Tt(tt) = &m {
        r.ranks = Some(tt.ranks());
    } else if let Structure::Tree(tn) = &m {
        r.ranks = Some(tn.ranks());
    }
    Ok(r)
}

fn cmd_bench(scale: usize, q: usize, base_nnz: usize, base_n: usize, runs: usize, c: &Common) -> Result<RunReport> {
    let mut r = c.report("bench");
    let params = c.params(q)?;
    let rows = r.time("bench", || bench_tt(scale, base_nnz, base_n, runs, &params, c.seed, c.cap()))?;
    r.seeds = vec![c.seed];
    r.sketch_sizes = serde_json::to_value(tt_sketch_sizes(&params))?;
    r.extra = json!({ "q": q, "rows": rows });
    Ok(r)
}

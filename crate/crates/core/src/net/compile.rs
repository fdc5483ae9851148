use serde::{Deserialize, Serialize};

use super::{ContractionPlan, GeneralNetwork};
use crate::error::{invalid, Error, Result};
use crate::linalg::{numerical_rank, svd};
use crate::sketching::SketchParams;
use crate::tensor::labeled::{Label, Labeled};
use crate::tensor::{DenseCap, SparseTensor, Tensor};
use crate::tree::{tree_bicriteria, ShapeVertex, TreeEdge, TreeNetwork, TreeOptions, TreeShape, TreeVertex};

/// Singular values below this fraction of the largest are treated as exact
/// zeros when splitting a factor.
const SPLIT_RTOL: f64 = 1e-13;

/// A vertex of the tree under construction. Tree links use `Label::Edge`
/// ids at or above the number of graph edges. `tensor` is absent when only
/// the topology is being compiled.
#[derive(Debug, Clone)]
struct Node {
    labels: Vec<Label>,
    dims: Vec<usize>,
    tensor: Option<Tensor>,
}

impl Node {
    fn open(&self) -> Option<usize> {
        self.labels.iter().find_map(|l| match l {
            Label::Open(m) => Some(*m),
            Label::Edge(_) => None,
        })
    }

    fn links(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().filter_map(|l| match l {
            Label::Edge(e) => Some(*e),
            Label::Open(_) => None,
        })
    }

    fn merge(&self, other: &Node, cap: DenseCap) -> Result<Node> {
        let shared = |l: &Label| self.labels.contains(l) && other.labels.contains(l);
        let mut labels = Vec::new();
        let mut dims = Vec::new();
        for (l, d) in self.labels.iter().zip(&self.dims).chain(other.labels.iter().zip(&other.dims)) {
            if !shared(l) {
                labels.push(*l);
                dims.push(*d);
            }
        }
        let tensor = match (&self.tensor, &other.tensor) {
            (Some(a), Some(b)) => {
                let la = Labeled::new(a.clone(), self.labels.clone())?;
                let lb = Labeled::new(b.clone(), other.labels.clone())?;
                let c = la.contract(&lb, cap)?;
                debug_assert_eq!(c.labels, labels);
                Some(c.tensor)
            }
            _ => None,
        };
        if tensor.is_none() && labels.is_empty() {
            dims = Vec::new();
        }
        Ok(Node { labels, dims, tensor })
    }
}

fn saturating_product(dims: &[usize]) -> usize {
    dims.iter().fold(1usize, |acc, &d| acc.saturating_mul(d))
}

/// Splits `node` into a graph-side part that keeps the graph edges and a
/// tree-side part holding everything else, joined by link `link`. Returns
/// `None` for the tree side when there is nothing to split off.
fn split(node: Node, graph_edges: usize, link: usize) -> Result<(Node, Option<Node>)> {
    let is_graph = |l: &Label| matches!(l, Label::Edge(e) if *e < graph_edges);
    let g_pos: Vec<usize> = (0..node.labels.len()).filter(|&i| is_graph(&node.labels[i])).collect();
    let t_pos: Vec<usize> = (0..node.labels.len()).filter(|&i| !is_graph(&node.labels[i])).collect();
    if t_pos.is_empty() {
        return Ok((node, None));
    }
    let g_dims: Vec<usize> = g_pos.iter().map(|&i| node.dims[i]).collect();
    let t_dims: Vec<usize> = t_pos.iter().map(|&i| node.dims[i]).collect();
    let (rows, cols) = (saturating_product(&g_dims), saturating_product(&t_dims));
    let (rank, left, right) = match &node.tensor {
        None => (rows.min(cols), None, None),
        Some(t) => {
            let perm: Vec<usize> = g_pos.iter().chain(&t_pos).copied().collect();
            let m = t.permute(&perm)?.to_matrix(rows, cols)?;
            let d = svd(&m);
            let r = numerical_rank(&d.s, SPLIT_RTOL).max(1);
            let mut l = d.u.columns(0, r).into_owned();
            for (j, mut col) in l.column_iter_mut().enumerate() {
                col *= d.s[j];
            }
            let rt = d.vt.rows(0, r).into_owned();
            (r, Some(Tensor::from_matrix(&l)?), Some(Tensor::from_matrix(&rt)?))
        }
    };
    let mut gl: Vec<Label> = g_pos.iter().map(|&i| node.labels[i]).collect();
    gl.push(Label::Edge(link));
    let mut gd = g_dims;
    gd.push(rank);
    let mut tl = vec![Label::Edge(link)];
    tl.extend(t_pos.iter().map(|&i| node.labels[i]));
    let mut td = vec![rank];
    td.extend(&t_dims);
    let graph_side = Node {
        tensor: left.map(|t| t.into_reshaped(gd.clone())).transpose()?,
        labels: gl,
        dims: gd,
    };
    let tree_side = Node {
        tensor: right.map(|t| t.into_reshaped(td.clone())).transpose()?,
        labels: tl,
        dims: td,
    };
    Ok((graph_side, Some(tree_side)))
}

fn strip_self_loops(mut node: Node) -> Result<Node> {
    if let Some(t) = node.tensor.take() {
        let l = Labeled::new(t, node.labels.clone())?.trace_repeated()?;
        node.dims = if l.labels.is_empty() { Vec::new() } else { l.tensor.dims().to_vec() };
        node.labels = l.labels;
        node.tensor = Some(l.tensor);
        return Ok(node);
    }
    let mut keep = vec![true; node.labels.len()];
    for i in 0..node.labels.len() {
        if let Some(j) = (i + 1..node.labels.len()).find(|&j| keep[j] && node.labels[j] == node.labels[i]) {
            if keep[i] {
                keep[i] = false;
                keep[j] = false;
            }
        }
    }
    let (labels, dims) = node
        .labels
        .iter()
        .zip(&node.dims)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|((l, d), _)| (*l, *d))
        .unzip();
    Ok(Node { labels, dims, tensor: None })
}

struct Compiled {
    nodes: Vec<Node>,
    root: usize,
}

fn compile(g: &GeneralNetwork, plan: &ContractionPlan, with_factors: bool, cap: DenseCap) -> Result<Compiled> {
    plan.validate_for(g)?;
    let m = g.edges.len();
    let n = g.vertices.len();
    let mut cur: Vec<Option<Node>> = (0..n)
        .map(|i| {
            let tensor = if with_factors {
                Some(g.vertices[i].factor.clone().ok_or_else(|| {
                    Error::InvalidState(format!("vertex {} has no factor", g.vertices[i].id))
                })?)
            } else {
                None
            };
            strip_self_loops(Node {
                labels: g.factor_labels(i),
                dims: g.factor_dims(i),
                tensor,
            })
            .map(Some)
        })
        .collect::<Result<_>>()?;
    let mut owner: Vec<usize> = (0..n).collect();
    fn find(owner: &mut [usize], mut x: usize) -> usize {
        while owner[x] != x {
            owner[x] = owner[owner[x]];
            x = owner[x];
        }
        x
    }
    let mut nodes = Vec::new();
    let mut next_link = m;
    for (step, &e) in plan.edges.iter().enumerate() {
        let (a, b) = (find(&mut owner, g.edges[e].u), find(&mut owner, g.edges[e].v));
        let mut halves = Vec::with_capacity(2);
        for x in [a, b] {
            let node = cur[x].take().expect("live vertex");
            let (graph_side, tree_side) = split(node, m, next_link)?;
            if let Some(t) = tree_side {
                nodes.push(t);
                next_link += 1;
            }
            halves.push(graph_side);
        }
        let merged = halves[0].merge(&halves[1], cap).map_err(|err| match err {
            Error::ResourceLimit(msg) => Error::ResourceLimit(format!("contraction step {step} (edge {e}): {msg}")),
            other => other,
        })?;
        cur[a] = Some(merged);
        owner[b] = a;
    }
    let last = find(&mut owner, 0);
    nodes.push(cur[last].take().expect("final vertex"));
    let root = nodes.len() - 1;
    let mut c = Compiled { nodes, root };
    simplify(&mut c, cap)?;
    Ok(c)
}

fn neighbors(nodes: &[Node], i: usize) -> Vec<usize> {
    let mut out: Vec<usize> = nodes[i]
        .links()
        .filter_map(|l| (0..nodes.len()).find(|&j| j != i && nodes[j].labels.contains(&Label::Edge(l))))
        .collect();
    out.sort_unstable();
    out
}

/// Absorbs open-less vertices of degree at most two into a neighbor, then
/// folds an open leaf into an adjacent open-less vertex, until neither applies.
fn simplify(c: &mut Compiled, cap: DenseCap) -> Result<()> {
    loop {
        if c.nodes.len() <= 1 {
            return Ok(());
        }
        let len = c.nodes.len();
        let mut action = None;
        for i in 0..len {
            let nb = neighbors(&c.nodes, i);
            if c.nodes[i].open().is_none() && nb.len() <= 2 {
                action = Some((i, nb[0]));
                break;
            }
        }
        if action.is_none() {
            'outer: for y in 0..len {
                if c.nodes[y].open().is_some() {
                    continue;
                }
                for x in neighbors(&c.nodes, y) {
                    if c.nodes[x].open().is_some() && neighbors(&c.nodes, x).len() == 1 {
                        action = Some((x, y));
                        break 'outer;
                    }
                }
            }
        }
        let Some((gone, into)) = action else { return Ok(()) };
        let merged = c.nodes[into].merge(&c.nodes[gone], cap)?;
        c.nodes[into] = merged;
        c.nodes.remove(gone);
        let adjust = |i: usize| if i > gone { i - 1 } else { i };
        c.root = if c.root == gone { adjust(into) } else { adjust(c.root) };
    }
}

fn to_tree_network(c: Compiled) -> Result<TreeNetwork> {
    let mut edges: Vec<TreeEdge> = Vec::new();
    let mut link_edge = std::collections::HashMap::new();
    for (i, node) in c.nodes.iter().enumerate() {
        for (l, d) in node.labels.iter().zip(&node.dims) {
            if let Label::Edge(id) = l {
                match link_edge.get(id) {
                    None => {
                        link_edge.insert(*id, edges.len());
                        edges.push(TreeEdge { u: i, v: usize::MAX, rank: *d });
                    }
                    Some(&e) => edges[e].v = i,
                }
            }
        }
    }
    if edges.iter().any(|e| e.v == usize::MAX) {
        return Err(Error::InvalidState("compiled tree has a dangling link".into()));
    }
    let vertices = c
        .nodes
        .into_iter()
        .enumerate()
        .map(|(i, node)| {
            let mut perm: Vec<usize> = (0..node.labels.len()).filter(|&p| matches!(node.labels[p], Label::Edge(_))).collect();
            let edge_list: Vec<usize> = perm
                .iter()
                .map(|&p| match node.labels[p] {
                    Label::Edge(id) => link_edge[&id],
                    Label::Open(_) => unreachable!(),
                })
                .collect();
            let open = node.open();
            let open_size = open.map(|_| {
                let p = node.labels.iter().position(|l| matches!(l, Label::Open(_))).expect("open label");
                perm.push(p);
                node.dims[p]
            });
            let factor = match node.tensor {
                Some(t) if !perm.is_empty() => Some(t.permute(&perm)?),
                other => other,
            };
            Ok(TreeVertex {
                id: i,
                open_mode_size: open_size,
                mode: open,
                edges: edge_list,
                factor,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeNetwork {
        vertices,
        edges,
        root: c.root,
    })
}

/// Rewrites a network with factors as an equivalent tree network whose
/// contraction equals that of `g` up to rounding. Every tree edge comes from
/// splitting a factor by an exact rank factorization.
pub fn contract_to_tree(g: &GeneralNetwork, plan: &ContractionPlan, cap: DenseCap) -> Result<TreeNetwork> {
    let tn = to_tree_network(compile(g, plan, true, cap)?)?;
    tn.validate()?;
    Ok(tn)
}

/// The tree topology `contract_to_tree` would produce, with each edge rank
/// set to its worst-case bound.
pub fn compile_shape(g: &GeneralNetwork, plan: &ContractionPlan) -> Result<(TreeShape, TreeNetwork)> {
    let tn = to_tree_network(compile(g, plan, false, DenseCap(usize::MAX))?)?;
    let vertices: Vec<ShapeVertex> = tn
        .vertices
        .iter()
        .map(|v| ShapeVertex {
            id: v.id,
            open_mode_size: v.open_mode_size,
            parent: None,
            mode: v.mode,
        })
        .collect();
    let edges: Vec<(usize, usize)> = tn.edges.iter().map(|e| (e.u, e.v)).collect();
    let shape = TreeShape::from_edges(vertices, &edges)?;
    Ok((shape, tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetApprox {
    pub plan: ContractionPlan,
    /// Target rank handed to the tree algorithm: `k^t_deg`, capped.
    pub tree_rank: usize,
    #[serde(skip)]
    pub shape: Option<TreeShape>,
    #[serde(skip)]
    pub network: Option<TreeNetwork>,
}

/// Plans a contraction of the shape `g`, compiles its tree topology and runs
/// the tree decomposition with rank `k^t_deg` (at most the number of entries
/// of `a`).
pub fn approx_by_tree(
    a: &SparseTensor,
    g: &GeneralNetwork,
    params: &SketchParams,
    seed: u64,
    cap: DenseCap,
) -> Result<NetApprox> {
    if g.dims() != a.dims() {
        return invalid(format!("network open modes {:?} differ from tensor dims {:?}", g.dims(), a.dims()));
    }
    let plan = super::plan_contraction(g)?;
    let (shape, _) = compile_shape(g, &plan)?;
    let limit = a.dense_len().unwrap_or(usize::MAX);
    let exp = u32::try_from(plan.t_deg).unwrap_or(u32::MAX);
    let tree_rank = params.k.saturating_pow(exp).min(limit).max(1);
    let tree_params = SketchParams::with_constants(params.eps, params.delta, params.q, tree_rank, params.constants)?;
    let tn = tree_bicriteria(a, &shape, &tree_params, seed, TreeOptions::default(), cap)?;
    Ok(NetApprox {
        plan,
        tree_rank,
        shape: Some(shape),
        network: Some(tn),
    })
}

//! Tree tensor networks: shapes, factor networks and the leaf-to-root
//! bicriteria decomposition.

mod bicriteria;

pub use bicriteria::{solve_factor, tree_bicriteria, tree_sketch_sizes, TreeOptions, TreeSketchSizes};

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::labeled::{contract_network, Label, Labeled};
use crate::tensor::{io, DenseCap, Tensor, TensorRef};
use crate::tt::TensorTrain;

/// One vertex of a tree shape file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeVertex {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_mode_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Tensor mode carried by the open mode. When no vertex sets it, open
    /// vertices take modes `0, 1, …` in increasing id order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapeFile {
    vertices: Vec<ShapeVertex>,
}

/// A validated tree without factors. Vertices are addressed by their index in
/// `vertices()`; ids are only used for I/O and ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeShape {
    vertices: Vec<ShapeVertex>,
    adj: Vec<Vec<usize>>,
    modes: Vec<Option<usize>>,
    q: usize,
}

impl TreeShape {
    pub fn new(mut vertices: Vec<ShapeVertex>) -> Result<Self> {
        if vertices.is_empty() {
            return invalid("tree has no vertices");
        }
        vertices.sort_by_key(|v| v.id);
        if vertices.windows(2).any(|w| w[0].id == w[1].id) {
            return invalid("duplicate vertex id");
        }
        let index: HashMap<usize, usize> = vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        let mut adj = vec![Vec::new(); vertices.len()];
        let mut roots = 0;
        for (i, v) in vertices.iter().enumerate() {
            if v.open_mode_size == Some(0) {
                return invalid(format!("vertex {} has an open mode of size 0", v.id));
            }
            if v.mode.is_some() && v.open_mode_size.is_none() {
                return invalid(format!("vertex {} names a mode but has no open mode", v.id));
            }
            match v.parent {
                None => roots += 1,
                Some(p) => {
                    let &j = index
                        .get(&p)
                        .ok_or_else(|| Error::InvalidArgument(format!("vertex {} has unknown parent {p}", v.id)))?;
                    if j == i {
                        return invalid(format!("vertex {} is its own parent", v.id));
                    }
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        if roots != 1 {
            return invalid(format!("a tree needs exactly one parentless vertex, found {roots}"));
        }
        Self::finish(vertices, adj)
    }

    /// Builds a shape from undirected edges between vertex indices.
    pub fn from_edges(vertices: Vec<ShapeVertex>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return invalid("tree has no vertices");
        }
        if edges.len() + 1 != n {
            return invalid(format!("{} edges cannot form a tree on {n} vertices", edges.len()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return invalid(format!("bad edge ({a}, {b})"));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some(vertices[x].id);
                    queue.push_back(y);
                }
            }
        }
        let vertices = vertices
            .into_iter()
            .zip(parent)
            .map(|(mut v, p)| {
                v.parent = p;
                v
            })
            .collect();
        Self::new(vertices)
    }

    fn finish(vertices: Vec<ShapeVertex>, mut adj: Vec<Vec<usize>>) -> Result<Self> {
        let n = vertices.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    count += 1;
                    stack.push(y);
                }
            }
        }
        if count != n {
            return invalid("parent links do not form a connected tree");
        }
        let open: Vec<usize> = (0..n).filter(|&i| vertices[i].open_mode_size.is_some()).collect();
        let q = open.len();
        if q == 0 {
            return invalid("tree has no open modes");
        }
        let explicit = open.iter().filter(|&&i| vertices[i].mode.is_some()).count();
        let mut modes = vec![None; n];
        if explicit == 0 {
            for (m, &i) in open.iter().enumerate() {
                modes[i] = Some(m);
            }
        } else if explicit == q {
            let mut used = vec![false; q];
            for &i in &open {
                let m = vertices[i].mode.expect("explicit mode");
                if m >= q || used[m] {
                    return invalid(format!("open modes must be a permutation of 0..{q}"));
                }
                used[m] = true;
                modes[i] = Some(m);
            }
        } else {
            return invalid("either every open vertex names its mode or none does");
        }
        for i in 0..n {
            if n > 1 && adj[i].len() <= 1 && vertices[i].open_mode_size.is_none() {
                return invalid(format!("leaf {} has no open mode", vertices[i].id));
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        Ok(Self { vertices, adj, modes, q })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ShapeFile = serde_json::from_str(text)?;
        Self::new(f.vertices)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ShapeFile {
            vertices: self.vertices.clone(),
        })
        .expect("shape serializes")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn vertex(&self, i: usize) -> &ShapeVertex {
        &self.vertices[i]
    }

    pub fn vertices(&self) -> &[ShapeVertex] {
        &self.vertices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn mode(&self, i: usize) -> Option<usize> {
        self.modes[i]
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    /// Open-mode sizes ordered by tensor mode.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![0; self.q];
        for (i, v) in self.vertices.iter().enumerate() {
            if let (Some(m), Some(n)) = (self.modes[i], v.open_mode_size) {
                d[m] = n;
            }
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| self.adj[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// A vertex minimizing the size of the largest component left after its
    /// removal (lowest id on ties).
    pub fn centroid(&self) -> usize {
        let n = self.len();
        let order = self.bfs_order(0);
        let mut parent = vec![usize::MAX; n];
        for &x in &order {
            for &y in &self.adj[x] {
                if y != parent[x] {
                    parent[y] = x;
                }
            }
        }
        let mut size = vec![1usize; n];
        for &x in order.iter().rev() {
            if parent[x] != usize::MAX {
                size[parent[x]] += size[x];
            }
        }
        (0..n)
            .min_by_key(|&x| {
                let worst = self.adj[x]
                    .iter()
                    .map(|&y| if y == parent[x] { n - size[x] } else { size[y] })
                    .max()
                    .unwrap_or(0);
                (worst, self.vertices[x].id)
            })
            .expect("non-empty tree")
    }

    fn bfs_order(&self, root: usize) -> Vec<usize> {
        let mut order = vec![root];
        let mut seen = vec![false; self.len()];
        seen[root] = true;
        let mut head = 0;
        while head < order.len() {
            let x = order[head];
            head += 1;
            for &y in &self.adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    order.push(y);
                }
            }
        }
        order
    }
}

/// A vertex of a tree network. Factor modes follow `edges` in order, then the
/// open mode if present.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeVertex {
    pub id: usize,
    pub open_mode_size: Option<usize>,
    pub mode: Option<usize>,
    pub edges: Vec<usize>,
    pub factor: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub u: usize,
    pub v: usize,
    pub rank: usize,
}

/// Factor tensors on the vertices of a tree, contracted along its edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNetwork {
    pub vertices: Vec<TreeVertex>,
    pub edges: Vec<TreeEdge>,
    pub root: usize,
}

impl TreeNetwork {
    /// Checks that the graph is a tree and that every present factor has the
    /// mode sizes its edges and open mode require.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 || self.edges.len() + 1 != n || self.root >= n {
            return invalid("not a tree");
        }
        let mut incident = vec![Vec::new(); n];
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.u >= n || edge.v >= n || edge.u == edge.v || edge.rank == 0 {
                return invalid(format!("bad edge {e}"));
            }
            incident[edge.u].push(e);
            incident[edge.v].push(e);
        }
        for (i, v) in self.vertices.iter().enumerate() {
            let mut mine = v.edges.clone();
            mine.sort_unstable();
            if mine != incident[i] {
                return invalid(format!("vertex {} lists edges {:?}, graph has {:?}", v.id, v.edges, incident[i]));
            }
            if let Some(f) = &v.factor {
                let expected = self.factor_dims(i);
                if f.dims() != expected.as_slice() {
                    return invalid(format!("factor of vertex {} has dims {:?}, expected {expected:?}", v.id, f.dims()));
                }
            }
        }
        let mut parent_of = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(x) = stack.pop() {
            for &e in &incident[x] {
                let y = self.other(e, x);
                if !seen[y] {
                    seen[y] = true;
                    parent_of[y] = x;
                    stack.push(y);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid("tree is disconnected");
        }
        let open: Vec<usize> = self.vertices.iter().filter_map(|v| v.mode).collect();
        let mut sorted = open.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &m)| i != m)
            || self.vertices.iter().any(|v| v.mode.is_some() != v.open_mode_size.is_some())
        {
            return invalid("open modes must be numbered 0..q");
        }
        Ok(())
    }

    pub fn other(&self, e: usize, x: usize) -> usize {
        let edge = &self.edges[e];
        if edge.u == x {
            edge.v
        } else {
            edge.u
        }
    }

    pub fn factor_dims(&self, i: usize) -> Vec<usize> {
        let v = &self.vertices[i];
        let mut d: Vec<usize> = v.edges.iter().map(|&e| self.edges[e].rank).collect();
        d.extend(v.open_mode_size);
        d
    }

    /// Open-mode sizes ordered by tensor mode.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<(usize, usize)> = self
            .vertices
            .iter()
            .filter_map(|v| Some((v.mode?, v.open_mode_size?)))
            .collect();
        d.sort_unstable();
        d.into_iter().map(|(_, n)| n).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.rank).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.edges.iter().map(|e| e.rank).max().unwrap_or(0)
    }

    fn labeled_factors(&self) -> Result<Vec<Labeled>> {
        self.vertices
            .iter()
            .map(|v| {
                let f = v
                    .factor
                    .clone()
                    .ok_or_else(|| Error::InvalidState(format!("vertex {} has no factor", v.id)))?;
                let mut labels: Vec<Label> = v.edges.iter().map(|&e| Label::Edge(e)).collect();
                labels.extend(v.mode.map(Label::Open));
                Labeled::new(f, labels)
            })
            .collect()
    }

    /// Contracts every edge, in breadth-first order from the root.
    pub fn contract(&self, cap: DenseCap) -> Result<Tensor> {
        let n = self.vertices.len();
        let mut order = Vec::with_capacity(self.edges.len());
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(x) = queue.pop_front() {
            for &e in &self.vertices[x].edges {
                let y = self.other(e, x);
                if !seen[y] {
                    seen[y] = true;
                    order.push(e);
                    queue.push_back(y);
                }
            }
        }
        self.contract_in_order(&order, cap)
    }

    /// Contracts the edges in the given order (edge indices).
    pub fn contract_in_order(&self, order: &[usize], cap: DenseCap) -> Result<Tensor> {
        self.validate()?;
        cap.check(&self.dims())?;
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .map(|&e| {
                self.edges
                    .get(e)
                    .map(|x| (x.u, x.v))
                    .ok_or_else(|| Error::InvalidArgument(format!("no edge {e}")))
            })
            .collect::<Result<_>>()?;
        contract_network(self.labeled_factors()?, &pairs, cap)?.into_open_order()
    }

    /// `‖contract(self) − A‖_F`.
    pub fn error<'a>(&self, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
        let a = a.into();
        let m = self.contract(cap)?;
        if m.dims() != a.dims() {
            return invalid(format!("network dims {:?} differ from tensor dims {:?}", m.dims(), a.dims()));
        }
        m.distance_to(a)
    }

    /// The path network equivalent to a tensor train.
    pub fn from_tensor_train(tt: &TensorTrain) -> Result<Self> {
        let q = tt.q();
        let ranks = tt.ranks();
        let edges: Vec<TreeEdge> = (0..q - 1)
            .map(|i| TreeEdge {
                u: i,
                v: i + 1,
                rank: ranks[i],
            })
            .collect();
        let vertices = (0..q)
            .map(|i| {
                let c = tt.core(i);
                let d = c.dims();
                let (edges, factor) = if i == 0 {
                    (vec![0], c.reshape(vec![d[1], d[2]])?.permute(&[1, 0])?)
                } else if i == q - 1 {
                    (vec![i - 1], c.reshape(vec![d[0], d[1]])?)
                } else {
                    (vec![i - 1, i], c.permute(&[0, 2, 1])?)
                };
                Ok(TreeVertex {
                    id: i,
                    open_mode_size: Some(d[1]),
                    mode: Some(i),
                    edges,
                    factor: Some(factor),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tn = TreeNetwork {
            vertices,
            edges,
            root: 0,
        };
        tn.validate()?;
        Ok(tn)
    }

    /// Writes `factor_<id>.tns` files and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for v in &self.vertices {
            if let Some(f) = &v.factor {
                io::write_dense(&dir.join(format!("factor_{}.tns", v.id)), f)?;
            }
        }
        let manifest = NetworkManifest {
            vertices: self
                .vertices
                .iter()
                .map(|v| ManifestVertex {
                    id: v.id,
                    open_mode_size: v.open_mode_size,
                    mode: v.mode,
                    edges: v.edges.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| TreeEdge {
                    u: self.vertices[e.u].id,
                    v: self.vertices[e.v].id,
                    rank: e.rank,
                })
                .collect(),
            root: self.vertices[self.root].id,
            extra,
        };
        io::write_atomic(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let m: NetworkManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let index: HashMap<usize, usize> = m.vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        let lookup = |id: usize| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unknown vertex {id}")))
        };
        let edges = m
            .edges
            .iter()
            .map(|e| {
                Ok(TreeEdge {
                    u: lookup(e.u)?,
                    v: lookup(e.v)?,
                    rank: e.rank,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let vertices = m
            .vertices
            .iter()
            .map(|v| {
                let path = dir.join(format!("factor_{}.tns", v.id));
                let factor = if path.exists() {
                    Some(io::read_tns(&path)?.densify(DenseCap::DEFAULT)?)
                } else {
                    None
                };
                Ok(TreeVertex {
                    id: v.id,
                    open_mode_size: v.open_mode_size,
                    mode: v.mode,
                    edges: v.edges.clone(),
                    factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tn = TreeNetwork {
            vertices,
            edges,
            root: lookup(m.root)?,
        };
        tn.validate()?;
        Ok(tn)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVertex {
    id: usize,
    #[serde(default)]
    open_mode_size: Option<usize>,
    #[serde(default)]
    mode: Option<usize>,
    edges: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkManifest {
    vertices: Vec<ManifestVertex>,
    edges: Vec<TreeEdge>,
    root: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A network on `shape` with every edge of rank `rank` and standard Gaussian
/// factors. The root is the shape's parentless vertex.
pub fn random_tree_network<R: Rng + ?Sized>(shape: &TreeShape, rank: usize, rng: &mut R) -> Result<TreeNetwork> {
    if rank == 0 {
        return invalid("rank must be positive");
    }
    let shape_edges = shape.edges();
    let edges: Vec<TreeEdge> = shape_edges.iter().map(|&(u, v)| TreeEdge { u, v, rank }).collect();
    let mut incident = vec![Vec::new(); shape.len()];
    for (e, &(u, v)) in shape_edges.iter().enumerate() {
        incident[u].push(e);
        incident[v].push(e);
    }
    let root = (0..shape.len())
        .find(|&i| shape.vertex(i).parent.is_none())
        .expect("validated shape has a root");
    let mut tn = TreeNetwork {
        vertices: Vec::with_capacity(shape.len()),
        edges,
        root,
    };
    for (i, edges) in incident.into_iter().enumerate() {
        let v = shape.vertex(i);
        tn.vertices.push(TreeVertex {
            id: v.id,
            open_mode_size: v.open_mode_size,
            mode: shape.mode(i),
            edges,
            factor: None,
        });
        let dims = tn.factor_dims(i);
        tn.vertices[i].factor = Some(Tensor::from_fn(&dims, |_| rng.sample(StandardNormal))?);
    }
    tn.validate()?;
    Ok(tn)
}

pub fn tree_contract(tn: &TreeNetwork, cap: DenseCap) -> Result<Tensor> {
    tn.contract(cap)
}

pub fn tree_error<'a>(tn: &TreeNetwork, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
    tn.error(a, cap)
}

//! General tensor networks, contraction planning and compilation to trees.

mod compile;
mod plan;

pub use compile::{approx_by_tree, compile_shape, contract_to_tree, NetApprox};
pub use plan::{plan_contraction, plan_from_order, ContractionPlan};

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::labeled::{contract_network, Label, Labeled};
use crate::tensor::{io, DenseCap, Tensor, TensorRef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetVertexSpec {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_mode_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetEdgeSpec {
    pub u: usize,
    pub v: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetFile {
    vertices: Vec<NetVertexSpec>,
    edges: Vec<NetEdgeSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetVertex {
    pub id: usize,
    pub open_mode_size: Option<usize>,
    pub mode: Option<usize>,
    pub factor: Option<Tensor>,
}

/// Edge between vertex indices `u` and `v`. `u == v` is a self-loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetEdge {
    pub u: usize,
    pub v: usize,
    pub rank: usize,
}

/// A connected multigraph with factor tensors on its vertices. Factor modes
/// follow the incident edges in edge-list order (a self-loop contributes two
/// consecutive modes), then the open mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralNetwork {
    pub vertices: Vec<NetVertex>,
    pub edges: Vec<NetEdge>,
}

impl GeneralNetwork {
    /// Builds a factorless network from id-based specs and validates it.
    pub fn from_specs(vertices: Vec<NetVertexSpec>, edges: &[NetEdgeSpec]) -> Result<Self> {
        if vertices.is_empty() {
            return invalid("network has no vertices");
        }
        let mut index = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.id, i).is_some() {
                return invalid(format!("duplicate vertex id {}", v.id));
            }
        }
        let lookup = |id: usize| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("edge references unknown vertex {id}")))
        };
        let edges = edges
            .iter()
            .map(|e| {
                Ok(NetEdge {
                    u: lookup(e.u)?,
                    v: lookup(e.v)?,
                    rank: e.rank,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let explicit = vertices.iter().filter(|v| v.mode.is_some()).count();
        let open: Vec<usize> = {
            let mut o: Vec<usize> = (0..vertices.len()).filter(|&i| vertices[i].open_mode_size.is_some()).collect();
            o.sort_by_key(|&i| vertices[i].id);
            o
        };
        let mut modes = vec![None; vertices.len()];
        if explicit == 0 {
            for (m, &i) in open.iter().enumerate() {
                modes[i] = Some(m);
            }
        } else if explicit == open.len() && open.iter().all(|&i| vertices[i].mode.is_some()) {
            for &i in &open {
                modes[i] = vertices[i].mode;
            }
        } else {
            return invalid("either every open vertex names its mode or none does");
        }
        let g = GeneralNetwork {
            vertices: vertices
                .into_iter()
                .zip(modes)
                .map(|(v, mode)| NetVertex {
                    id: v.id,
                    open_mode_size: v.open_mode_size,
                    mode,
                    factor: None,
                })
                .collect(),
            edges,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: NetFile = serde_json::from_str(text)?;
        Self::from_specs(f.vertices, &f.edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network serializes")
    }

    fn to_file(&self) -> NetFile {
        NetFile {
            vertices: self
                .vertices
                .iter()
                .map(|v| NetVertexSpec {
                    id: v.id,
                    open_mode_size: v.open_mode_size,
                    mode: v.mode,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| NetEdgeSpec {
                    u: self.vertices[e.u].id,
                    v: self.vertices[e.v].id,
                    rank: e.rank,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 {
            return invalid("network has no vertices");
        }
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.u >= n || edge.v >= n {
                return invalid(format!("edge {e} references a missing vertex"));
            }
            if edge.rank == 0 {
                return invalid(format!("edge {e} has rank 0"));
            }
        }
        let mut modes: Vec<usize> = Vec::new();
        for v in &self.vertices {
            if v.open_mode_size == Some(0) {
                return invalid(format!("vertex {} has an open mode of size 0", v.id));
            }
            if v.mode.is_some() != v.open_mode_size.is_some() {
                return invalid(format!("vertex {} has a mode without an open mode or vice versa", v.id));
            }
            modes.extend(v.mode);
        }
        modes.sort_unstable();
        if modes.is_empty() {
            return invalid("network has no open modes");
        }
        if modes.iter().enumerate().any(|(i, &m)| i != m) {
            return invalid("open modes must be a permutation of 0..q");
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for e in &self.edges {
                let y = if e.u == x {
                    e.v
                } else if e.v == x {
                    e.u
                } else {
                    continue;
                };
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid("network is disconnected");
        }
        for i in 0..n {
            if let Some(f) = &self.vertices[i].factor {
                let d = self.factor_dims(i);
                if f.dims() != d.as_slice() {
                    return invalid(format!(
                        "factor of vertex {} has dims {:?}, expected {d:?}",
                        self.vertices[i].id,
                        f.dims()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.vertices.iter().filter(|v| v.mode.is_some()).count()
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

    /// Labels of vertex `i`'s factor modes.
    pub fn factor_labels(&self, i: usize) -> Vec<Label> {
        let mut labels = Vec::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.u == i {
                labels.push(Label::Edge(e));
            }
            if edge.v == i {
                labels.push(Label::Edge(e));
            }
        }
        labels.extend(self.vertices[i].mode.map(Label::Open));
        labels
    }

    pub fn factor_dims(&self, i: usize) -> Vec<usize> {
        self.factor_labels(i)
            .iter()
            .map(|l| match l {
                Label::Edge(e) => self.edges[*e].rank,
                Label::Open(_) => self.vertices[i].open_mode_size.expect("open vertex"),
            })
            .collect()
    }

    /// Number of distinct neighbors, self-loops excluded.
    pub fn degree(&self, i: usize) -> usize {
        let mut nb: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.u != e.v)
            .filter_map(|e| {
                if e.u == i {
                    Some(e.v)
                } else if e.v == i {
                    Some(e.u)
                } else {
                    None
                }
            })
            .collect();
        nb.sort_unstable();
        nb.dedup();
        nb.len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.vertices.len()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn max_rank(&self) -> usize {
        self.edges.iter().map(|e| e.rank).max().unwrap_or(1)
    }

    pub(crate) fn labeled_factors(&self) -> Result<Vec<Labeled>> {
        (0..self.vertices.len())
            .map(|i| {
                let v = &self.vertices[i];
                let f = v
                    .factor
                    .clone()
                    .ok_or_else(|| Error::InvalidState(format!("vertex {} has no factor", v.id)))?;
                Labeled::new(f, self.factor_labels(i))
            })
            .collect()
    }

    /// A random connected shape on `vertices` vertices: a random spanning tree
    /// plus `extra_edges` further edges, which may repeat an existing edge or
    /// close a cycle. Open modes (at least one) have sizes in `2..=max_dim`,
    /// ranks lie in `1..=max_rank`.
    pub fn random_shape<R: Rng + ?Sized>(
        rng: &mut R,
        vertices: usize,
        max_dim: usize,
        max_rank: usize,
        extra_edges: usize,
    ) -> Result<Self> {
        if vertices == 0 || max_dim < 2 || max_rank == 0 {
            return invalid("random shape needs a vertex, max_dim >= 2 and max_rank >= 1");
        }
        let forced = rng.random_range(0..vertices);
        let specs: Vec<NetVertexSpec> = (0..vertices)
            .map(|id| NetVertexSpec {
                id,
                open_mode_size: (id == forced || rng.random_bool(0.7)).then(|| rng.random_range(2..=max_dim)),
                mode: None,
            })
            .collect();
        let mut edges = Vec::new();
        for v in 1..vertices {
            edges.push(NetEdgeSpec {
                u: rng.random_range(0..v),
                v,
                rank: rng.random_range(1..=max_rank),
            });
        }
        if vertices > 1 {
            for _ in 0..extra_edges {
                let u = rng.random_range(0..vertices);
                let mut v = rng.random_range(0..vertices - 1);
                if v >= u {
                    v += 1;
                }
                edges.push(NetEdgeSpec {
                    u,
                    v,
                    rank: rng.random_range(1..=max_rank),
                });
            }
        }
        Self::from_specs(specs, &edges)
    }

    /// Fills every factor with standard Gaussian entries.
    pub fn with_random_factors<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<Self> {
        for i in 0..self.vertices.len() {
            let d = self.factor_dims(i);
            self.vertices[i].factor = Some(Tensor::from_fn(&d, |_| rng.sample(StandardNormal))?);
        }
        Ok(self)
    }

    /// Contracts the whole network, edges taken in list order.
    pub fn contract(&self, cap: DenseCap) -> Result<Tensor> {
        let order: Vec<usize> = (0..self.edges.len()).collect();
        self.contract_in_order(&order, cap)
    }

    pub fn contract_in_order(&self, order: &[usize], cap: DenseCap) -> Result<Tensor> {
        self.validate()?;
        cap.check(&self.dims())?;
        let pairs = order
            .iter()
            .map(|&e| {
                self.edges
                    .get(e)
                    .map(|x| (x.u, x.v))
                    .ok_or_else(|| Error::InvalidArgument(format!("no edge {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        contract_network(self.labeled_factors()?, &pairs, cap)?.into_open_order()
    }

    pub fn error<'a>(&self, a: impl Into<TensorRef<'a>>, cap: DenseCap) -> Result<f64> {
        let a = a.into();
        let m = self.contract(cap)?;
        if m.dims() != a.dims() {
            return invalid(format!("network dims {:?} differ from tensor dims {:?}", m.dims(), a.dims()));
        }
        m.distance_to(a)
    }

    /// Writes `network.json` and one `factor_<id>.tns` per present factor.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for v in &self.vertices {
            if let Some(f) = &v.factor {
                io::write_dense(&dir.join(format!("factor_{}.tns", v.id)), f)?;
            }
        }
        io::write_atomic(&dir.join("network.json"), &self.to_json())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut g = Self::from_json(&std::fs::read_to_string(dir.join("network.json"))?)?;
        for v in &mut g.vertices {
            let path = dir.join(format!("factor_{}.tns", v.id));
            if path.exists() {
                v.factor = Some(io::read_tns(&path)?.densify(DenseCap::DEFAULT)?);
            }
        }
        g.validate()?;
        Ok(g)
    }
}

/// Contracts every edge of `g`; the result does not depend on the order.
pub fn general_contract(g: &GeneralNetwork, cap: DenseCap) -> Result<Tensor> {
    g.contract(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn ring(q: usize, n: usize, k: usize) -> GeneralNetwork {
        let vertices = (0..q)
            .map(|id| NetVertexSpec {
                id,
                open_mode_size: Some(n),
                mode: None,
            })
            .collect();
        let edges: Vec<NetEdgeSpec> = (0..q)
            .map(|i| NetEdgeSpec {
                u: i,
                v: (i + 1) % q,
                rank: k,
            })
            .collect();
        GeneralNetwork::from_specs(vertices, &edges).unwrap()
    }

    #[test]
    fn two_vertices_are_a_matrix_product() {
        let g = GeneralNetwork::from_json(
            r#"{"vertices":[{"id":0,"open_mode_size":2},{"id":1,"open_mode_size":3}],"edges":[{"u":0,"v":1,"rank":4}]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = g.with_random_factors(&mut rng).unwrap();
        let a = g.vertices[0].factor.as_ref().unwrap().to_matrix(4, 2).unwrap();
        let b = g.vertices[1].factor.as_ref().unwrap().to_matrix(4, 3).unwrap();
        let c = general_contract(&g, DenseCap::DEFAULT).unwrap();
        let expected = Tensor::from_matrix(&(a.transpose() * b)).unwrap();
        assert!(c.distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn triangle_matches_index_sum() {
        let vertices = (0..3)
            .map(|id| NetVertexSpec {
                id,
                open_mode_size: Some(2),
                mode: None,
            })
            .collect();
        let edges = [
            NetEdgeSpec { u: 0, v: 1, rank: 2 },
            NetEdgeSpec { u: 1, v: 2, rank: 2 },
            NetEdgeSpec { u: 2, v: 0, rank: 2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GeneralNetwork::from_specs(vertices, &edges)
            .unwrap()
            .with_random_factors(&mut rng)
            .unwrap();
        let f: Vec<&Tensor> = g.vertices.iter().map(|v| v.factor.as_ref().unwrap()).collect();
        let c = general_contract(&g, DenseCap::DEFAULT).unwrap();
        // Vertex 0 modes (e0, e2, open); vertex 1 (e0, e1, open); vertex 2 (e1, e2, open).
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut s = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            for d in 0..2 {
                                s += f[0].get(&[a, d, i]) * f[1].get(&[a, b, j]) * f[2].get(&[b, d, k]);
                            }
                        }
                    }
                    assert!((c.get(&[i, j, k]) - s).abs() < 1e-12);
                }
            }
        }
        let other = g.contract_in_order(&[2, 1, 0], DenseCap::DEFAULT).unwrap();
        assert!(c.distance(&other).unwrap() <= 1e-12 * c.frobenius_norm());
    }

    #[test]
    fn self_loop_is_traced() {
        let g = GeneralNetwork::from_json(
            r#"{"vertices":[{"id":0,"open_mode_size":2}],"edges":[{"u":0,"v":0,"rank":3}]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = g.with_random_factors(&mut rng).unwrap();
        let f = g.vertices[0].factor.as_ref().unwrap();
        assert_eq!(f.dims(), &[3, 3, 2]);
        let c = g.contract(DenseCap::DEFAULT).unwrap();
        for j in 0..2 {
            let s: f64 = (0..3).map(|d| f.get(&[d, d, j])).sum();
            assert!((c.get(&[j]) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_networks() {
        let disconnected = r#"{"vertices":[{"id":0,"open_mode_size":2},{"id":1,"open_mode_size":2}],"edges":[]}"#;
        assert!(GeneralNetwork::from_json(disconnected).is_err());
        let no_open = r#"{"vertices":[{"id":0},{"id":1}],"edges":[{"u":0,"v":1,"rank":2}]}"#;
        assert!(GeneralNetwork::from_json(no_open).is_err());
        let bad_ref = r#"{"vertices":[{"id":0,"open_mode_size":2}],"edges":[{"u":0,"v":5,"rank":2}]}"#;
        assert!(GeneralNetwork::from_json(bad_ref).is_err());
        let zero_rank = r#"{"vertices":[{"id":0,"open_mode_size":2},{"id":1,"open_mode_size":2}],"edges":[{"u":0,"v":1,"rank":0}]}"#;
        assert!(GeneralNetwork::from_json(zero_rank).is_err());
    }

    #[test]
    fn json_and_directory_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ring(3, 2, 2).with_random_factors(&mut rng).unwrap();
        let back = GeneralNetwork::from_json(&g.to_json()).unwrap();
        assert_eq!(back.edges, g.edges);
        let dir = tempfile::tempdir().unwrap();
        g.write_dir(dir.path()).unwrap();
        assert_eq!(GeneralNetwork::read_dir(dir.path()).unwrap(), g);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GeneralNetwork;
use crate::error::{invalid, Result};

/// An order of edges that contracts a network to one vertex, with the degree
/// of each merged vertex. `t_deg` counts parallel edges once and includes the
/// starting degrees; `t_deg_multi` counts every original edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractionPlan {
    pub edges: Vec<usize>,
    pub degrees: Vec<usize>,
    pub degrees_multi: Vec<usize>,
    pub t_deg: usize,
    pub t_deg_multi: usize,
}

impl ContractionPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Replays the edge order on `g` and checks the recorded degrees.
    pub fn validate_for(&self, g: &GeneralNetwork) -> Result<()> {
        let replay = plan_from_order(g, &self.edges)?;
        if &replay != self {
            return invalid("plan degrees do not match a replay on this network");
        }
        Ok(())
    }
}

/// Super-vertex adjacency: neighbor -> number of original edges.
struct Contractor {
    owner: Vec<usize>,
    adj: Vec<BTreeMap<usize, usize>>,
    /// Smallest vertex id in each super vertex.
    rep_id: Vec<usize>,
}

impl Contractor {
    fn new(g: &GeneralNetwork) -> Self {
        let n = g.vertices.len();
        let mut adj = vec![BTreeMap::new(); n];
        for e in &g.edges {
            if e.u != e.v {
                *adj[e.u].entry(e.v).or_insert(0) += 1;
                *adj[e.v].entry(e.u).or_insert(0) += 1;
            }
        }
        Self {
            owner: (0..n).collect(),
            adj,
            rep_id: g.vertices.iter().map(|v| v.id).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.owner[x] != x {
            self.owner[x] = self.owner[self.owner[x]];
            x = self.owner[x];
        }
        x
    }

    fn merged_degree(&self, a: usize, b: usize) -> usize {
        self.adj[a].keys().chain(self.adj[b].keys()).filter(|&&x| x != a && x != b).collect::<std::collections::BTreeSet<_>>().len()
    }

    /// Merges `b` into `a` and returns the new (distinct, multi) degree.
    fn merge(&mut self, a: usize, b: usize) -> (usize, usize) {
        let nb = std::mem::take(&mut self.adj[b]);
        self.adj[a].remove(&b);
        for (x, m) in nb {
            if x == a {
                continue;
            }
            *self.adj[a].entry(x).or_insert(0) += m;
            let back = self.adj[x].remove(&b).unwrap_or(0);
            *self.adj[x].entry(a).or_insert(0) += back;
        }
        self.owner[b] = a;
        self.rep_id[a] = self.rep_id[a].min(self.rep_id[b]);
        (self.adj[a].len(), self.adj[a].values().sum())
    }
}

fn initial_degrees(c: &Contractor) -> (usize, usize) {
    let d = c.adj.iter().map(|a| a.len()).max().unwrap_or(0);
    let m = c.adj.iter().map(|a| a.values().sum::<usize>()).max().unwrap_or(0);
    (d, m)
}

/// Replays a caller-supplied edge order. Every edge must join two vertices
/// not yet merged, and the order must leave a single vertex.
pub fn plan_from_order(g: &GeneralNetwork, order: &[usize]) -> Result<ContractionPlan> {
    g.validate()?;
    let mut c = Contractor::new(g);
    let (mut t_deg, mut t_deg_multi) = initial_degrees(&c);
    let mut degrees = Vec::with_capacity(order.len());
    let mut degrees_multi = Vec::with_capacity(order.len());
    for &e in order {
        let Some(edge) = g.edges.get(e) else {
            return invalid(format!("plan references missing edge {e}"));
        };
        let (a, b) = (c.find(edge.u), c.find(edge.v));
        if a == b {
            return invalid(format!("edge {e} joins vertices that are already merged"));
        }
        let (d, m) = c.merge(a, b);
        degrees.push(d);
        degrees_multi.push(m);
        t_deg = t_deg.max(d);
        t_deg_multi = t_deg_multi.max(m);
    }
    if order.len() + 1 != g.vertices.len() {
        return invalid(format!(
            "plan has {} steps, {} vertices need {}",
            order.len(),
            g.vertices.len(),
            g.vertices.len() - 1
        ));
    }
    Ok(ContractionPlan {
        edges: order.to_vec(),
        degrees,
        degrees_multi,
        t_deg,
        t_deg_multi,
    })
}

/// Greedy order: repeatedly contracts the pair of adjacent vertices whose
/// merged vertex has the fewest distinct neighbors, ties broken by the
/// smaller vertex ids, using the lowest-index edge between them.
pub fn plan_contraction(g: &GeneralNetwork) -> Result<ContractionPlan> {
    g.validate()?;
    let n = g.vertices.len();
    let mut c = Contractor::new(g);
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<((usize, usize, usize), usize, usize)> = None;
        for a in 0..n {
            if c.owner[a] != a {
                continue;
            }
            for &b in c.adj[a].keys() {
                let (ia, ib) = (c.rep_id[a], c.rep_id[b]);
                if ia > ib {
                    continue;
                }
                let key = (c.merged_degree(a, b), ia, ib);
                if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    best = Some((key, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("connected network has an edge between distinct vertices");
        let e = (0..g.edges.len())
            .find(|&e| {
                let (x, y) = (c.find(g.edges[e].u), c.find(g.edges[e].v));
                (x == a && y == b) || (x == b && y == a)
            })
            .expect("adjacent vertices share an edge");
        c.merge(a, b);
        order.push(e);
    }
    plan_from_order(g, &order)
}

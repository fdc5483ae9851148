//! Tensors whose modes carry graph labels, for contracting networks.

use super::{contract_modes, DenseCap, Tensor};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// A bond shared with another factor; the id is the edge index.
    Edge(usize),
    /// An open mode of the network; the id is its position in the result.
    Open(usize),
}

/// A tensor with one label per mode. A scalar has no labels and dims `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub tensor: Tensor,
    pub labels: Vec<Label>,
}

impl Labeled {
    pub fn new(tensor: Tensor, labels: Vec<Label>) -> Result<Self> {
        let scalar = labels.is_empty() && tensor.dims() == [1];
        if !scalar && tensor.ndim() != labels.len() {
            return invalid(format!("{} labels for a {}-mode tensor", labels.len(), tensor.ndim()));
        }
        Ok(Self { tensor, labels })
    }

    fn is_scalar(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sums over every label that appears twice in this tensor.
    pub fn trace_repeated(self) -> Result<Self> {
        let mut cur = self;
        loop {
            let pair = (0..cur.labels.len()).find_map(|i| {
                (i + 1..cur.labels.len())
                    .find(|&j| cur.labels[j] == cur.labels[i])
                    .map(|j| (i, j))
            });
            let Some((i, j)) = pair else { return Ok(cur) };
            let dims = cur.tensor.dims().to_vec();
            if dims[i] != dims[j] {
                return invalid(format!("traced modes have sizes {} and {}", dims[i], dims[j]));
            }
            let keep: Vec<usize> = (0..dims.len()).filter(|&m| m != i && m != j).collect();
            let mut perm = keep.clone();
            perm.push(i);
            perm.push(j);
            let p = cur.tensor.permute(&perm)?;
            let n = dims[i];
            let rest: usize = keep.iter().map(|&m| dims[m]).product();
            let mut data = vec![0.0; rest];
            for (r, slot) in data.iter_mut().enumerate() {
                for d in 0..n {
                    *slot += p.data()[r * n * n + d * n + d];
                }
            }
            let labels: Vec<Label> = keep.iter().map(|&m| cur.labels[m]).collect();
            let out_dims: Vec<usize> = if keep.is_empty() { vec![1] } else { keep.iter().map(|&m| dims[m]).collect() };
            cur = Labeled::new(Tensor::new(out_dims, data)?, labels)?;
        }
    }

    /// Contracts every label shared with `other`. Free modes of `self` come
    /// first, then those of `other`.
    pub fn contract(&self, other: &Labeled, cap: DenseCap) -> Result<Labeled> {
        if self.is_scalar() || other.is_scalar() {
            let (s, t) = if self.is_scalar() { (self, other) } else { (other, self) };
            return Ok(Labeled {
                tensor: t.tensor.scale(s.tensor.data()[0]),
                labels: t.labels.clone(),
            });
        }
        let mut a_modes = Vec::new();
        let mut b_modes = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(j) = other.labels.iter().position(|m| m == l) {
                a_modes.push(i);
                b_modes.push(j);
            }
        }
        let labels: Vec<Label> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(i, _)| !a_modes.contains(i))
            .chain(other.labels.iter().enumerate().filter(|(j, _)| !b_modes.contains(j)))
            .map(|(_, l)| *l)
            .collect();
        let out_dims: Vec<usize> = (0..self.labels.len())
            .filter(|i| !a_modes.contains(i))
            .map(|i| self.tensor.dims()[i])
            .chain((0..other.labels.len()).filter(|j| !b_modes.contains(j)).map(|j| other.tensor.dims()[j]))
            .collect();
        if !out_dims.is_empty() {
            cap.check(&out_dims)?;
        }
        let tensor = contract_modes(&self.tensor, &a_modes, &other.tensor, &b_modes)?;
        Labeled::new(tensor, labels)
    }

    /// Reorders modes so that `Open(0), Open(1), …` come in order. Fails if any
    /// other label remains.
    pub fn into_open_order(self) -> Result<Tensor> {
        let mut order: Vec<(usize, usize)> = Vec::with_capacity(self.labels.len());
        for (pos, l) in self.labels.iter().enumerate() {
            match l {
                Label::Open(m) => order.push((*m, pos)),
                Label::Edge(e) => return invalid(format!("edge {e} left uncontracted")),
            }
        }
        order.sort_unstable();
        if order.iter().enumerate().any(|(i, (m, _))| *m != i) {
            return invalid("open modes are not numbered 0..q");
        }
        if order.is_empty() {
            return Ok(self.tensor);
        }
        let perm: Vec<usize> = order.into_iter().map(|(_, p)| p).collect();
        self.tensor.permute(&perm)
    }
}

/// Contracts a network given its factors and the order in which to contract
/// the edges `(u, v)` (indices into `factors`). Merged groups contract all of
/// their shared labels at once, so parallel edges are handled together.
/// Groups left disconnected at the end are joined by outer products.
pub fn contract_network(factors: Vec<Labeled>, order: &[(usize, usize)], cap: DenseCap) -> Result<Labeled> {
    let n = factors.len();
    if n == 0 {
        return invalid("empty network");
    }
    let mut groups: Vec<Option<Labeled>> = factors
        .into_iter()
        .map(|f| f.trace_repeated().map(Some))
        .collect::<Result<_>>()?;
    let mut owner: Vec<usize> = (0..n).collect();
    fn find(owner: &mut [usize], mut x: usize) -> usize {
        while owner[x] != x {
            owner[x] = owner[owner[x]];
            x = owner[x];
        }
        x
    }
    for &(u, v) in order {
        if u >= n || v >= n {
            return invalid(format!("edge ({u}, {v}) references a missing factor"));
        }
        let (gu, gv) = (find(&mut owner, u), find(&mut owner, v));
        if gu == gv {
            continue;
        }
        let a = groups[gu].take().expect("live group");
        let b = groups[gv].take().expect("live group");
        groups[gu] = Some(a.contract(&b, cap)?);
        owner[gv] = gu;
    }
    let mut live = groups.into_iter().flatten();
    let mut acc = live.next().expect("at least one group");
    for g in live {
        acc = acc.contract(&g, cap)?;
    }
    Ok(acc)
}

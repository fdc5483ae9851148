use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ShapeVertex, TreeEdge, TreeNetwork, TreeShape, TreeVertex};
use crate::error::{invalid, Error, Result};
use crate::linalg::{orth, pinv};
use crate::sketching::{apply_left, apply_mode_sparse, derive_seed, sketch_group_dense, stream, SketchOp, SketchParams};
use crate::tensor::{contract, DenseCap, Matrix, SparseTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSketchSizes {
    /// Bicriteria rank; every output edge rank is at most this.
    pub t: usize,
    /// Rows of the Countsketch `T_v` over the modes above a vertex.
    pub outer_rows: usize,
    /// Rows of the per-vertex subtree sketch `S_v`.
    pub subtree_rows: usize,
    /// Maximum vertex degree used for `subtree_rows`.
    pub degree: usize,
}

pub fn tree_sketch_sizes(params: &SketchParams, degree: usize) -> TreeSketchSizes {
    let t = params.rows_sign_regression();
    TreeSketchSizes {
        t,
        outer_rows: params.rows_outer_countsketch(),
        subtree_rows: params.rows_subtree_sketch(t, degree),
        degree,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreeOptions {
    /// Root vertex id; defaults to a centroid of the tree.
    pub root: Option<usize>,
}

/// Solves for one factor given the current working tensor.
///
/// `children` pairs a mode of `a` with the subtree sketch `M_u` stored for
/// that child; the mode is contracted with `M_u†`. When `above` is given, all
/// modes that are neither child modes nor `open` are fused and sketched with
/// `second · first`; otherwise there may be no such modes. The result has modes
/// `[child ranks…, open?, above rows?]`.
pub fn solve_factor(
    a: &SparseTensor,
    children: &[(usize, &Matrix)],
    open: Option<usize>,
    above: Option<(&SketchOp, &SketchOp)>,
    cap: DenseCap,
) -> Result<Tensor> {
    #[derive(Clone, Copy, PartialEq)]
    enum Tag {
        Above,
        Child(usize),
        Open,
    }
    let q = a.ndim();
    let mut role = vec![None; q];
    for (k, &(m, mat)) in children.iter().enumerate() {
        if m >= q || role[m].is_some() {
            return invalid(format!("bad child mode {m}"));
        }
        if mat.nrows() != a.dims()[m] {
            return invalid(format!("child sketch has {} rows, mode {m} has size {}", mat.nrows(), a.dims()[m]));
        }
        role[m] = Some(Tag::Child(k));
    }
    if let Some(m) = open {
        if m >= q || role[m].is_some() {
            return invalid(format!("bad open mode {m}"));
        }
        role[m] = Some(Tag::Open);
    }
    let group: Vec<usize> = (0..q).filter(|&m| role[m].is_none()).collect();
    let (mut d, mut tags) = match above {
        Some((first, second)) => {
            let d = sketch_group_dense(a, &group, first, second, cap)?;
            let mut tags = vec![Tag::Above];
            tags.extend(role.iter().flatten());
            (d, tags)
        }
        None => {
            if !group.is_empty() {
                return invalid("modes left unsketched at the root");
            }
            (a.densify(cap)?, role.iter().flatten().copied().collect())
        }
    };
    for (k, &(_, mat)) in children.iter().enumerate() {
        let pos = tags.iter().position(|&g| g == Tag::Child(k)).expect("child tag");
        let p = Tensor::from_matrix(&pinv(mat).transpose())?;
        d = contract(&d, pos, &p, 0)?;
        tags.remove(pos);
        tags.push(Tag::Child(k));
    }
    let mut order: Vec<Tag> = (0..children.len()).map(Tag::Child).collect();
    if open.is_some() {
        order.push(Tag::Open);
    }
    if above.is_some() {
        order.push(Tag::Above);
    }
    let perm: Vec<usize> = order
        .iter()
        .map(|g| tags.iter().position(|x| x == g).expect("tag present"))
        .collect();
    if perm.is_empty() {
        return Ok(d);
    }
    d.permute(&perm)
}

/// Moves the modes in `group` to the end and fuses them, row-major in the
/// order given.
fn fuse_group(a: &SparseTensor, group: &[usize]) -> Result<SparseTensor> {
    let q = a.ndim();
    let dims = a.dims();
    let rest: Vec<usize> = (0..q).filter(|m| !group.contains(m)).collect();
    let fused = group
        .iter()
        .try_fold(1usize, |acc, &m| acc.checked_mul(dims[m]))
        .ok_or_else(|| Error::ResourceLimit("fused mode size overflows".into()))?;
    let mut new_dims: Vec<usize> = rest.iter().map(|&m| dims[m]).collect();
    new_dims.push(fused);
    let mut indices = Vec::with_capacity(a.nnz() * new_dims.len());
    for (idx, _) in a.iter() {
        indices.extend(rest.iter().map(|&m| idx[m]));
        indices.push(group.iter().fold(0usize, |acc, &m| acc * dims[m] + idx[m]));
    }
    Ok(SparseTensor::consolidate(new_dims, indices, a.values().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Open(usize),
    Subtree(usize),
}

/// Walks from `from` into neighbor `next` across open-less degree-2 vertices.
/// Returns the far endpoint and the vertices passed through.
fn follow(shape: &TreeShape, contracted: &[bool], from: usize, mut next: usize) -> (usize, Vec<usize>) {
    let mut prev = from;
    let mut chain = Vec::new();
    while contracted[next] {
        chain.push(next);
        let n = shape.neighbors(next);
        let step = if n[0] == prev { n[1] } else { n[0] };
        prev = next;
        next = step;
    }
    (next, chain)
}

/// Bicriteria tree-network decomposition of `a` with the topology of `shape`.
///
/// Vertices are fixed leaves first, then internal vertices in post-order, the
/// root last. Each non-root vertex gets an orthonormal factor spanning its
/// sketched flattening against the modes above it; the root absorbs what
/// remains. Open-less vertices of degree two are folded into the edge through
/// them and come back as identity factors. Every edge rank is at most `t`.
pub fn tree_bicriteria(
    a: &SparseTensor,
    shape: &TreeShape,
    params: &SketchParams,
    seed: u64,
    opts: TreeOptions,
    cap: DenseCap,
) -> Result<TreeNetwork> {
    let q = a.ndim();
    if shape.q() != q || shape.dims() != a.dims() {
        return invalid(format!("shape open modes {:?} differ from tensor dims {:?}", shape.dims(), a.dims()));
    }
    if params.q != q {
        return invalid(format!("parameters are for q = {}, tensor has {q} modes", params.q));
    }
    let n = shape.len();
    let contracted: Vec<bool> = (0..n)
        .map(|i| shape.vertex(i).open_mode_size.is_none() && shape.neighbors(i).len() == 2)
        .collect();

    // Working tree over the remaining vertices.
    let keep: Vec<usize> = (0..n).filter(|&i| !contracted[i]).collect();
    let windex: HashMap<usize, usize> = keep.iter().enumerate().map(|(w, &i)| (i, w)).collect();
    let mut wedges = Vec::new();
    let mut chains: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &i in &keep {
        for &j in shape.neighbors(i) {
            let (end, chain) = follow(shape, &contracted, i, j);
            if i < end {
                wedges.push((windex[&i], windex[&end]));
            }
            chains.insert((i, end), chain);
        }
    }
    let wverts: Vec<ShapeVertex> = keep
        .iter()
        .map(|&i| ShapeVertex {
            mode: shape.mode(i),
            parent: None,
            ..shape.vertex(i).clone()
        })
        .collect();
    let work = TreeShape::from_edges(wverts, &wedges)?;
    let root_w = match opts.root {
        None => work.centroid(),
        Some(id) => {
            let i = shape
                .index_of(id)
                .ok_or_else(|| Error::InvalidArgument(format!("root {id} is not a vertex")))?;
            *windex.get(&i).ok_or_else(|| {
                Error::InvalidArgument(format!("root {id} has no open mode and degree 2, so it is folded away"))
            })?
        }
    };

    // Orient the working tree.
    let wn = work.len();
    let mut parent = vec![usize::MAX; wn];
    let mut children = vec![Vec::new(); wn];
    let mut bfs = vec![root_w];
    let mut head = 0;
    while head < bfs.len() {
        let x = bfs[head];
        head += 1;
        for &y in work.neighbors(x) {
            if y != parent[x] && y != root_w {
                parent[y] = x;
                children[x].push(y);
                bfs.push(y);
            }
        }
    }
    for c in &mut children {
        c.sort_by_key(|&y| work.vertex(y).id);
    }
    let mut post = Vec::with_capacity(wn);
    fn visit(x: usize, children: &[Vec<usize>], out: &mut Vec<usize>) {
        for &c in &children[x] {
            visit(c, children, out);
        }
        out.push(x);
    }
    visit(root_w, &children, &mut post);
    let mut order: Vec<usize> = post.iter().copied().filter(|&x| x != root_w && children[x].is_empty()).collect();
    order.extend(post.iter().copied().filter(|&x| x != root_w && !children[x].is_empty()));
    order.push(root_w);

    let sizes = tree_sketch_sizes(params, work.max_degree());
    let mut w = a.clone();
    let mut slots: Vec<Slot> = (0..q).map(Slot::Open).collect();
    let mut sketches: Vec<Option<Matrix>> = vec![None; wn];
    let mut factors: Vec<Option<Tensor>> = vec![None; wn];
    let mut ranks = vec![0usize; wn];

    for &v in &order {
        let id = work.vertex(v).id as u64;
        let open_mode = work.mode(v);
        let open = open_mode.map(|m| slots.iter().position(|&s| s == Slot::Open(m)).expect("open slot"));
        let child_modes: Vec<usize> = children[v]
            .iter()
            .map(|&u| slots.iter().position(|&s| s == Slot::Subtree(u)).expect("child slot"))
            .collect();
        let child_mats: Vec<(usize, &Matrix)> = child_modes
            .iter()
            .zip(&children[v])
            .map(|(&m, &u)| (m, sketches[u].as_ref().expect("child processed")))
            .collect();
        let child_ranks: Vec<usize> = children[v].iter().map(|&u| ranks[u]).collect();
        let rows: usize = child_ranks.iter().product::<usize>() * open.map_or(1, |m| w.dims()[m]);

        if v == root_w {
            factors[v] = Some(solve_factor(&w, &child_mats, open, None, cap)?);
            break;
        }

        let above_cols: usize = (0..w.ndim())
            .filter(|m| !child_modes.contains(m) && Some(*m) != open)
            .map(|m| w.dims()[m])
            .try_fold(1usize, |acc, d| acc.checked_mul(d))
            .ok_or_else(|| Error::ResourceLimit("fused mode size overflows".into()))?;
        let t_op = SketchOp::countsketch_capped(sizes.outer_rows, above_cols, derive_seed(seed, stream::TREE_T, id));
        let mid = t_op.shape().map_or(above_cols, |s| s.0);
        let r_op = SketchOp::sign_capped(sizes.t, mid, derive_seed(seed, stream::TREE_R, id));
        let u = solve_factor(&w, &child_mats, open, Some((&t_op, &r_op)), cap)?;
        let cols = u.len() / rows;
        let basis = orth(&u.to_matrix(rows, cols)?, sizes.t);
        let r = basis.ncols();

        // Sketch of the subtree tensor: the basis with each child rank mode
        // replaced by that child's sketch, then S_v on the fused index.
        let mut sub = Tensor::from_matrix(&basis)?;
        let mut sub_dims = child_ranks.clone();
        sub_dims.extend(open.map(|m| w.dims()[m]));
        sub_dims.push(r);
        sub = sub.into_reshaped(sub_dims)?;
        let nc = children[v].len();
        for &(_, mat) in &child_mats {
            sub = contract(&sub, 0, &Tensor::from_matrix(mat)?, 1)?;
        }
        // Modes are now [open?, r, s_children…].
        let lead = sub.ndim() - nc;
        let mut perm: Vec<usize> = (lead..sub.ndim()).collect();
        perm.extend(0..lead);
        let sub = sub.permute(&perm)?;
        let fused_rows = sub.len() / r;
        let s_op = SketchOp::countsketch_capped(sizes.subtree_rows, fused_rows, derive_seed(seed, stream::TREE_S, id));
        sketches[v] = Some(apply_left(&s_op, &sub.to_matrix(fused_rows, r)?)?);

        let mut group = child_modes.clone();
        group.extend(open);
        let fused = fuse_group(&w, &group)?;
        let last = fused.ndim() - 1;
        w = apply_mode_sparse(&s_op, &fused, last)?;
        slots.retain(|s| match s {
            Slot::Open(m) => Some(*m) != open_mode,
            Slot::Subtree(u) => !children[v].contains(u),
        });
        slots.push(Slot::Subtree(v));

        // Factor modes: children, parent, open.
        let mut fdims = child_ranks;
        fdims.extend(open_mode.map(|m| a.dims()[m]));
        fdims.push(r);
        let f = Tensor::from_matrix(&basis)?.into_reshaped(fdims)?;
        let k = f.ndim();
        let f = if open.is_some() {
            let mut p: Vec<usize> = (0..nc).collect();
            p.push(k - 1);
            p.push(k - 2);
            f.permute(&p)?
        } else {
            f
        };
        factors[v] = Some(f);
        ranks[v] = r;
    }

    // Assemble over the original vertices.
    let shape_edges = shape.edges();
    let edge_index: HashMap<(usize, usize), usize> = shape_edges.iter().enumerate().map(|(e, &p)| (p, e)).collect();
    let eid = |x: usize, y: usize| edge_index[&(x.min(y), x.max(y))];
    let mut edges: Vec<TreeEdge> = shape_edges.iter().map(|&(u, v)| TreeEdge { u, v, rank: 0 }).collect();
    let mut vedges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut vfactor: Vec<Option<Tensor>> = vec![None; n];
    for x in 0..wn {
        let ox = keep[x];
        for &c in &children[x] {
            let oc = keep[c];
            let chain = &chains[&(ox, oc)];
            let mut path = vec![ox];
            path.extend(chain);
            path.push(oc);
            for pair in path.windows(2) {
                let e = eid(pair[0], pair[1]);
                edges[e].rank = ranks[c];
            }
            vedges[ox].push(eid(ox, path[1]));
            for (k, &m) in chain.iter().enumerate() {
                // Chain vertices list the child side first, then the parent side.
                vedges[m] = vec![eid(m, path[k + 2]), eid(m, path[k])];
                vfactor[m] = Some(identity(ranks[c])?);
            }
        }
        if x != root_w {
            let op = keep[parent[x]];
            let chain = &chains[&(ox, op)];
            let next = chain.first().copied().unwrap_or(op);
            vedges[ox].push(eid(ox, next));
        }
        vfactor[ox] = factors[x].take();
    }
    let vertices = (0..n)
        .map(|i| TreeVertex {
            id: shape.vertex(i).id,
            open_mode_size: shape.vertex(i).open_mode_size,
            mode: shape.mode(i),
            edges: std::mem::take(&mut vedges[i]),
            factor: vfactor[i].take(),
        })
        .collect();
    let tn = TreeNetwork {
        vertices,
        edges,
        root: keep[root_w],
    };
    tn.validate()?;
    Ok(tn)
}

fn identity(r: usize) -> Result<Tensor> {
    Tensor::from_matrix(&Matrix::identity(r, r))
}

//! Label trees and their construction by hierarchical balanced 2-means.

use crate::data::{Dataset, SparseVector};
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::VecDeque;
use std::io::{BufRead, Write};

/// Rooted tree whose leaves are in one-to-one correspondence with labels `0..m`.
///
/// Nodes are identified by their index. Children lists are kept in ascending
/// node-id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    label: Vec<Option<usize>>,
    leaf_of_label: Vec<usize>,
    depth: Vec<usize>,
    /// Breadth-first order starting at the root; parents precede children.
    order: Vec<usize>,
    root: usize,
}

impl LabelTree {
    /// Validates a parent array plus per-node label assignment.
    ///
    /// Leaves (nodes without children) must carry a label, internal nodes must
    /// not, and the labels on leaves must be exactly `0..num_labels`.
    pub fn from_parents(
        parent: Vec<Option<usize>>,
        label: Vec<Option<usize>>,
        num_labels: usize,
    ) -> Result<Self> {
        let n = parent.len();
        if label.len() != n {
            return Err(Error::param("parent and label arrays differ in length"));
        }
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::param(format!(
                "tree must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == v {
                    return Err(Error::param(format!("node {v} has invalid parent {p}")));
                }
                children[p].push(v);
            }
        }

        let mut depth = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        depth[root] = 0;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                depth[c] = depth[v] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(Error::param("tree contains a cycle or unreachable nodes"));
        }

        let mut leaf_of_label = vec![usize::MAX; num_labels];
        for v in 0..n {
            match (children[v].is_empty(), label[v]) {
                (true, Some(l)) => {
                    if l >= num_labels {
                        return Err(Error::param(format!(
                            "leaf {v} has label {l} >= {num_labels}"
                        )));
                    }
                    if leaf_of_label[l] != usize::MAX {
                        return Err(Error::param(format!("label {l} appears on two leaves")));
                    }
                    leaf_of_label[l] = v;
                }
                (true, None) => return Err(Error::param(format!("leaf {v} has no label"))),
                (false, Some(_)) => {
                    return Err(Error::param(format!("internal node {v} carries a label")))
                }
                (false, None) => {}
            }
        }
        if let Some(l) = leaf_of_label.iter().position(|&v| v == usize::MAX) {
            return Err(Error::param(format!("label {l} has no leaf")));
        }

        Ok(Self {
            parent,
            children,
            label,
            leaf_of_label,
            depth,
            order,
            root,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn num_labels(&self) -> usize {
        self.leaf_of_label.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Label of a leaf, `None` for internal nodes.
    pub fn label(&self, node: usize) -> Option<usize> {
        self.label[node]
    }

    pub fn leaf(&self, label: usize) -> usize {
        self.leaf_of_label[label]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Depth of the deepest leaf.
    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Breadth-first node order, root first.
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Nodes from `node` up to the root, inclusive on both ends.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut v = node;
        while let Some(p) = self.parent[v] {
            path.push(p);
            v = p;
        }
        path
    }

    /// Labels of all leaves under `node`, ascending.
    pub fn labels_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.label[v] {
                Some(l) => out.push(l),
                None => stack.extend_from_slice(&self.children[v]),
            }
        }
        out.sort_unstable();
        out
    }

    /// Largest number of entries a level-synchronous search can hold at once:
    /// the nodes at some depth plus all leaves at shallower depths.
    pub fn max_frontier_width(&self) -> usize {
        let h = self.height();
        let mut at_depth = vec![0usize; h + 1];
        let mut leaves_at = vec![0usize; h + 1];
        for v in 0..self.num_nodes() {
            at_depth[self.depth[v]] += 1;
            if self.is_leaf(v) {
                leaves_at[self.depth[v]] += 1;
            }
        }
        let mut carried = 0;
        let mut widest = 0;
        for d in 0..=h {
            widest = widest.max(at_depth[d] + carried);
            carried += leaves_at[d];
        }
        widest
    }

    /// Writes `num_nodes m` followed by `node_id parent_id label` per node,
    /// with `-1` for a missing parent or label.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.num_nodes(), self.num_labels())?;
        for v in 0..self.num_nodes() {
            let p = self.parent[v].map_or(-1, |p| p as i64);
            let l = self.label[v].map_or(-1, |l| l as i64);
            writeln!(out, "{v} {p} {l}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(1, "missing tree header"))??;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(1, "expected `num_nodes m`"))?;
        let [num_nodes, m] = head[..] else {
            return Err(Error::format(1, "expected `num_nodes m`"));
        };
        let mut parent = vec![None; num_nodes];
        let mut label = vec![None; num_nodes];
        let mut seen = vec![false; num_nodes];
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<i64> = line
                .split_whitespace()
                .map(|s| s.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(line_no, "expected `node parent label`"))?;
            let [v, p, l] = f[..] else {
                return Err(Error::format(line_no, "expected `node parent label`"));
            };
            if v < 0 || v as usize >= num_nodes || seen[v as usize] {
                return Err(Error::format(
                    line_no,
                    format!("bad or repeated node id {v}"),
                ));
            }
            let v = v as usize;
            seen[v] = true;
            parent[v] = (p >= 0).then_some(p as usize);
            label[v] = (l >= 0).then_some(l as usize);
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::format(num_nodes + 1, format!("node {v} is missing")));
        }
        Self::from_parents(parent, label, m)
    }
}

/// Leaf-to-root node list for every label.
pub fn tree_paths(tree: &LabelTree) -> Vec<Vec<usize>> {
    (0..tree.num_labels())
        .map(|l| tree.path(tree.leaf(l)))
        .collect()
}

/// Per-label feature-space representation used to cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRepresentation<T = f64> {
    pub num_features: usize,
    pub vectors: Vec<SparseVector<T>>,
}

/// Label `j` is represented by the normalized sum of the normalized feature
/// vectors of the examples annotated with `j`; unused labels get the zero vector.
pub fn build_label_representations<T: Real>(data: &Dataset<T>) -> LabelRepresentation<T> {
    let d = data.num_features();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); data.num_labels()];
    for (n, ex) in data.examples().iter().enumerate() {
        for l in ex.labels.iter() {
            by_label[l].push(n);
        }
    }
    let normalized: Vec<SparseVector<T>> = data
        .examples()
        .par_iter()
        .map(|ex| ex.features.normalized())
        .collect();

    let vectors = by_label
        .par_iter()
        .map_init(
            || (vec![T::zero(); d], Vec::new()),
            |(scratch, touched), examples| {
                for &n in examples {
                    for (i, v) in normalized[n].iter() {
                        if scratch[i].is_zero() {
                            touched.push(i);
                        }
                        scratch[i] = scratch[i] + v;
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                let entries: Vec<(usize, T)> = touched
                    .drain(..)
                    .map(|i| (i, std::mem::replace(&mut scratch[i], T::zero())))
                    .filter(|(_, v)| !v.is_zero())
                    .collect();
                SparseVector::from_sorted_unchecked(entries).normalized()
            },
        )
        .collect();
    LabelRepresentation {
        num_features: d,
        vectors,
    }
}

const MAX_KMEANS_ITER: usize = 50;
const KMEANS_TOL: f64 = 1e-4;

enum Cluster {
    Split(Box<Cluster>, Box<Cluster>),
    Leaves(Vec<usize>),
}

fn split_seed(seed: u64, key: u64) -> u64 {
    // splitmix64 finalizer over the seed/key mix
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn dense_normalized_mean<T: Real>(reps: &LabelRepresentation<T>, members: &[usize]) -> Vec<T> {
    let mut c = vec![T::zero(); reps.num_features];
    for &l in members {
        for (i, v) in reps.vectors[l].iter() {
            c[i] = c[i] + v;
        }
    }
    let norm = c.iter().map(|&v| v * v).sum::<T>().sqrt();
    if !norm.is_zero() {
        c.iter_mut().for_each(|v| *v = *v / norm);
    }
    c
}

/// Splits `labels` into halves of sizes `ceil(n/2)` and `floor(n/2)`.
fn balanced_two_means<T: Real>(
    reps: &LabelRepresentation<T>,
    labels: &[usize],
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    debug_assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut second = rng.gen_range(0..n - 1);
    if second >= first {
        second += 1;
    }
    let mut c1 = reps.vectors[labels[first]].to_dense(reps.num_features);
    let mut c2 = reps.vectors[labels[second]].to_dense(reps.num_features);

    let half = n.div_ceil(2);
    let mut order: Vec<(bool, T, usize)> = Vec::with_capacity(n);
    for _ in 0..MAX_KMEANS_ITER {
        order.clear();
        order.extend(labels.iter().map(|&l| {
            let r = &reps.vectors[l];
            (r.is_empty(), r.dot_dense(&c1) - r.dot_dense(&c2), l)
        }));
        order.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
                .then_with(|| a.2.cmp(&b.2))
        });
        let left: Vec<usize> = order[..half].iter().map(|e| e.2).collect();
        let right: Vec<usize> = order[half..].iter().map(|e| e.2).collect();
        let n1 = dense_normalized_mean(reps, &left);
        let n2 = dense_normalized_mean(reps, &right);
        let shift = |a: &[T], b: &[T]| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt()
        };
        let moved = shift(&n1, &c1).max(shift(&n2, &c2));
        c1 = n1;
        c2 = n2;
        if moved < T::lit(KMEANS_TOL) {
            break;
        }
    }
    let mut left: Vec<usize> = order[..half].iter().map(|e| e.2).collect();
    let mut right: Vec<usize> = order[half..].iter().map(|e| e.2).collect();
    left.sort_unstable();
    right.sort_unstable();
    (left, right)
}

fn cluster<T: Real>(
    reps: &LabelRepresentation<T>,
    labels: Vec<usize>,
    max_leaf: usize,
    seed: u64,
    key: u64,
) -> Cluster {
    if labels.len() <= max_leaf {
        return Cluster::Leaves(labels);
    }
    let (left, right) = balanced_two_means(reps, &labels, split_seed(seed, key));
    let (l, r) = rayon::join(
        || {
            cluster(
                reps,
                left,
                max_leaf,
                seed,
                key.wrapping_mul(2).wrapping_add(1),
            )
        },
        || {
            cluster(
                reps,
                right,
                max_leaf,
                seed,
                key.wrapping_mul(2).wrapping_add(2),
            )
        },
    );
    Cluster::Split(Box::new(l), Box::new(r))
}

/// Builds a binary tree of balanced 2-means splits whose bottom clusters of at
/// most `max_leaf_cluster` labels fan out directly to their leaves.
///
/// Node ids are assigned breadth-first, so the result depends only on the
/// representations, `max_leaf_cluster` and `seed`, never on thread scheduling.
pub fn build_tree<T: Real>(
    reps: &LabelRepresentation<T>,
    max_leaf_cluster: usize,
    seed: u64,
) -> Result<LabelTree> {
    let m = reps.vectors.len();
    if max_leaf_cluster == 0 {
        return Err(Error::param("max_leaf_cluster must be at least 1"));
    }
    if m == 0 {
        return Err(Error::param("cannot build a tree over zero labels"));
    }
    let root = cluster(reps, (0..m).collect(), max_leaf_cluster, seed, 0);

    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut label: Vec<Option<usize>> = Vec::new();
    enum Item<'a> {
        Cluster(&'a Cluster),
        Leaf(usize),
    }
    let mut queue = VecDeque::from([(Item::Cluster(&root), None)]);
    while let Some((item, p)) = queue.pop_front() {
        let id = parent.len();
        parent.push(p);
        match item {
            Item::Leaf(l) => label.push(Some(l)),
            Item::Cluster(c) => {
                label.push(None);
                match c {
                    Cluster::Split(a, b) => {
                        queue.push_back((Item::Cluster(a), Some(id)));
                        queue.push_back((Item::Cluster(b), Some(id)));
                    }
                    Cluster::Leaves(ls) => {
                        queue.extend(ls.iter().map(|&l| (Item::Leaf(l), Some(id))));
                    }
                }
            }
        }
    }
    LabelTree::from_parents(parent, label, m)
}

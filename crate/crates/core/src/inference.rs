//! Top-k label prediction over a probabilistic label tree.
//!
//! Every strategy works with the cost of a tree node `v`,
//!
//! ```text
//! g(v, x) = - sum_{v' on the root..v path} ln p(x, v')
//! ```
//!
//! and, in propensity-scored mode, the heuristic
//! `h(v) = ln q_max - ln max_{j under v} q_j`. A leaf's total cost
//! `f = g + h` satisfies `q_max * exp(-f) = q_j * eta_j(x)`, so the leaves of
//! lowest cost are the labels of highest propensity-scored probability.
//! Without a propensity table every `q_j` is 1 and `h` vanishes.
//!
//! Probabilities are clamped to `[1e-12, 1 - 1e-12]` before the logarithm.
//! Ties are broken by lower cost first, then lower node id (search) or lower
//! label (exhaustive ranking).

use crate::data::SparseVector;
use crate::error::{Error, Result};
use crate::propensity::PropensityTable;
use crate::scalar::{clamp_prob, Real};
use crate::tree::LabelTree;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

/// Anything that attaches a conditional probability to each node of a label tree.
pub trait NodeEstimator<T: Real>: Sync {
    fn tree(&self) -> &LabelTree;

    /// Estimate of `P(z_v = 1 | z_pa(v) = 1, x)` (unconditional for the root).
    fn node_probability(&self, node: usize, x: &SparseVector<T>) -> T;

    /// Feature dimension, when the estimator has one.
    fn num_features(&self) -> Option<usize> {
        None
    }
}

/// Node probabilities fixed in advance, independent of the input.
///
/// Handy for analysing search behaviour without training classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedNodeProbabilities<T = f64> {
    pub tree: LabelTree,
    pub probabilities: Vec<T>,
}

impl<T: Real> NodeEstimator<T> for FixedNodeProbabilities<T> {
    fn tree(&self) -> &LabelTree {
        &self.tree
    }

    fn node_probability(&self, node: usize, _x: &SparseVector<T>) -> T {
        self.probabilities[node]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredLabel<T = f64> {
    pub label: usize,
    /// `q_j * eta_j(x)`, or `eta_j(x)` without propensities.
    pub score: T,
    /// Leaf cost `f(l_j, x)`.
    pub log_cost: T,
}

/// Priority-queue entry of the best-first search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchNodeEntry<T = f64> {
    pub node: usize,
    pub g: T,
    pub f_hat: T,
}

impl<T: Real> Eq for SearchNodeEntry<T> {}

impl<T: Real> PartialOrd for SearchNodeEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for SearchNodeEntry<T> {
    /// Reversed so that `BinaryHeap` pops the lowest `f_hat`, then lowest node id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f_hat
            .partial_cmp(&self.f_hat)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn search_order<T: Real>(a: &SearchNodeEntry<T>, b: &SearchNodeEntry<T>) -> Ordering {
    b.cmp(a)
}

/// Largest inverse propensity among the leaves of every subtree.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtreeQMax<T = f64> {
    values: Vec<T>,
    log_q_max: T,
}

impl<T: Real> SubtreeQMax<T> {
    pub fn value(&self, node: usize) -> T {
        self.values[node]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn log_q_max(&self) -> T {
        self.log_q_max
    }

    /// `h(v) = ln q_max - ln max_{j under v} q_j`, never negative.
    pub fn heuristic(&self, node: usize) -> T {
        self.log_q_max - self.values[node].ln()
    }
}

pub fn precompute_subtree_qmax<T: Real>(
    tree: &LabelTree,
    table: &PropensityTable<T>,
) -> SubtreeQMax<T> {
    let mut values = vec![T::neg_infinity(); tree.num_nodes()];
    for &v in tree.bfs_order().iter().rev() {
        if let Some(l) = tree.label(v) {
            values[v] = table.q(l);
        }
        if let Some(p) = tree.parent(v) {
            values[p] = values[p].max(values[v]);
        }
    }
    let log_q_max = values[tree.root()].ln();
    SubtreeQMax { values, log_q_max }
}

/// Per-tree data shared by all predictions with one propensity table.
#[derive(Clone, Debug)]
pub struct SearchContext<T = f64> {
    subtree_q: SubtreeQMax<T>,
    q_max: T,
}

impl<T: Real> SearchContext<T> {
    /// `table = None` selects plain (unit propensity) scoring.
    pub fn new(tree: &LabelTree, table: Option<&PropensityTable<T>>) -> Result<Self> {
        let owned;
        let table = match table {
            Some(t) => {
                if t.num_labels() != tree.num_labels() {
                    return Err(Error::Config(format!(
                        "propensity table has {} labels but tree has {}",
                        t.num_labels(),
                        tree.num_labels()
                    )));
                }
                t
            }
            None => {
                owned = PropensityTable::uniform(tree.num_labels());
                &owned
            }
        };
        let subtree_q = precompute_subtree_qmax(tree, table);
        let q_max = subtree_q.value(tree.root());
        Ok(Self { subtree_q, q_max })
    }

    pub fn subtree_qmax(&self) -> &SubtreeQMax<T> {
        &self.subtree_q
    }

    pub fn heuristic(&self, node: usize) -> T {
        self.subtree_q.heuristic(node)
    }

    fn entry(&self, node: usize, g: T) -> SearchNodeEntry<T> {
        SearchNodeEntry {
            node,
            g,
            f_hat: g + self.heuristic(node),
        }
    }

    fn scored(&self, tree: &LabelTree, e: &SearchNodeEntry<T>) -> ScoredLabel<T> {
        ScoredLabel {
            label: tree.label(e.node).expect("leaf"),
            score: self.q_max * (-e.f_hat).exp(),
            log_cost: e.f_hat,
        }
    }

    /// Exact `(f, score)` of one label, walking its path from the root.
    pub fn label_cost<M: NodeEstimator<T> + ?Sized>(
        &self,
        model: &M,
        label: usize,
        x: &SparseVector<T>,
    ) -> ScoredLabel<T> {
        let tree = model.tree();
        let leaf = tree.leaf(label);
        let path = tree.path(leaf);
        let mut g = T::zero();
        for &v in path.iter().rev() {
            g = g - clamp_prob(model.node_probability(v, x)).ln();
        }
        self.scored(tree, &self.entry(leaf, g))
    }

    /// Scores every label and keeps the `k` best.
    pub fn brute<M: NodeEstimator<T> + ?Sized>(
        &self,
        model: &M,
        x: &SparseVector<T>,
        k: usize,
    ) -> Result<Vec<ScoredLabel<T>>> {
        let tree = model.tree();
        check_k(tree, k)?;
        let mut g = vec![T::zero(); tree.num_nodes()];
        let mut leaves = Vec::with_capacity(tree.num_labels());
        for &v in tree.bfs_order() {
            let base = tree.parent(v).map_or(T::zero(), |p| g[p]);
            g[v] = base - clamp_prob(model.node_probability(v, x)).ln();
            if tree.is_leaf(v) {
                leaves.push(self.scored(tree, &self.entry(v, g[v])));
            }
        }
        leaves.sort_by(|a, b| {
            a.log_cost
                .partial_cmp(&b.log_cost)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.label.cmp(&b.label))
        });
        leaves.truncate(k);
        Ok(leaves)
    }

    /// Best-first search ordered by `f_hat`; `on_pop` sees every popped entry.
    pub fn astar_traced<M: NodeEstimator<T> + ?Sized>(
        &self,
        model: &M,
        x: &SparseVector<T>,
        k: usize,
        mut on_pop: impl FnMut(&SearchNodeEntry<T>),
    ) -> Result<Vec<ScoredLabel<T>>> {
        let tree = model.tree();
        check_k(tree, k)?;
        let mut out = Vec::with_capacity(k);
        let mut queue = BinaryHeap::new();
        let root = tree.root();
        queue.push(self.entry(root, -clamp_prob(model.node_probability(root, x)).ln()));
        while out.len() < k {
            let Some(e) = queue.pop() else { break };
            on_pop(&e);
            if tree.is_leaf(e.node) {
                out.push(self.scored(tree, &e));
            } else {
                for &c in tree.children(e.node) {
                    let g = e.g - clamp_prob(model.node_probability(c, x)).ln();
                    queue.push(self.entry(c, g));
                }
            }
        }
        Ok(out)
    }

    pub fn astar<M: NodeEstimator<T> + ?Sized>(
        &self,
        model: &M,
        x: &SparseVector<T>,
        k: usize,
    ) -> Result<Vec<ScoredLabel<T>>> {
        self.astar_traced(model, x, k, |_| {})
    }

    /// Level-synchronous beam search keeping the `width` lowest-`f_hat` entries
    /// per level. Leaves reached above the deepest level are carried along
    /// unchanged. May return fewer than `k` labels when the final frontier holds
    /// fewer leaves.
    pub fn beam<M: NodeEstimator<T> + ?Sized>(
        &self,
        model: &M,
        x: &SparseVector<T>,
        k: usize,
        width: usize,
    ) -> Result<Vec<ScoredLabel<T>>> {
        let tree = model.tree();
        check_k(tree, k)?;
        if width < 1 {
            return Err(Error::param("beam width must be at least 1"));
        }
        let root = tree.root();
        let mut frontier =
            vec![self.entry(root, -clamp_prob(model.node_probability(root, x)).ln())];
        let mut next = Vec::new();
        for _ in 0..tree.height() {
            select_top(&mut frontier, width);
            next.clear();
            for e in &frontier {
                if tree.is_leaf(e.node) {
                    next.push(*e);
                    continue;
                }
                for &c in tree.children(e.node) {
                    let g = e.g - clamp_prob(model.node_probability(c, x)).ln();
                    next.push(self.entry(c, g));
                }
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        frontier.retain(|e| tree.is_leaf(e.node));
        select_top(&mut frontier, k);
        Ok(frontier.iter().map(|e| self.scored(tree, e)).collect())
    }
}

fn select_top<T: Real>(entries: &mut Vec<SearchNodeEntry<T>>, n: usize) {
    entries.sort_by(search_order);
    entries.truncate(n);
}

fn check_k(tree: &LabelTree, k: usize) -> Result<()> {
    if k > tree.num_labels() {
        return Err(Error::param(format!(
            "k = {k} exceeds the number of labels {}",
            tree.num_labels()
        )));
    }
    Ok(())
}

/// Exhaustive top-k by `q_j * eta_j(x)` (or `eta_j(x)` without a table).
pub fn predict_brute<T: Real, M: NodeEstimator<T>>(
    model: &M,
    table: Option<&PropensityTable<T>>,
    x: &SparseVector<T>,
    k: usize,
) -> Result<Vec<ScoredLabel<T>>> {
    SearchContext::new(model.tree(), table)?.brute(model, x, k)
}

/// Exact propensity-scored top-k by A* search.
pub fn predict_astar<T: Real, M: NodeEstimator<T>>(
    model: &M,
    table: &PropensityTable<T>,
    x: &SparseVector<T>,
    k: usize,
) -> Result<Vec<ScoredLabel<T>>> {
    SearchContext::new(model.tree(), Some(table))?.astar(model, x, k)
}

/// Uniform-cost search: exact top-k by `eta_j(x)`.
pub fn predict_ucs<T: Real, M: NodeEstimator<T>>(
    model: &M,
    x: &SparseVector<T>,
    k: usize,
) -> Result<Vec<ScoredLabel<T>>> {
    SearchContext::new(model.tree(), None)?.astar(model, x, k)
}

pub fn predict_beam<T: Real, M: NodeEstimator<T>>(
    model: &M,
    table: Option<&PropensityTable<T>>,
    x: &SparseVector<T>,
    k: usize,
    width: usize,
) -> Result<Vec<ScoredLabel<T>>> {
    SearchContext::new(model.tree(), table)?.beam(model, x, k, width)
}

/// Top-k search strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inference {
    Brute,
    /// Uniform-cost search; ignores propensities.
    Ucs,
    AStar,
    Beam {
        width: usize,
    },
}

impl Inference {
    pub fn uses_propensities(&self) -> bool {
        !matches!(self, Inference::Ucs)
    }

    fn run<T: Real, M: NodeEstimator<T> + ?Sized>(
        &self,
        ctx: &SearchContext<T>,
        model: &M,
        x: &SparseVector<T>,
        k: usize,
    ) -> Result<Vec<ScoredLabel<T>>> {
        match *self {
            Inference::Brute => ctx.brute(model, x, k),
            Inference::Ucs | Inference::AStar => ctx.astar(model, x, k),
            Inference::Beam { width } => ctx.beam(model, x, k, width),
        }
    }
}

/// One or more trees with their search contexts, ready for repeated prediction.
pub struct Predictor<'a, T: Real, M: NodeEstimator<T>> {
    models: &'a [M],
    contexts: Vec<SearchContext<T>>,
    inference: Inference,
}

impl<'a, T: Real, M: NodeEstimator<T>> Predictor<'a, T, M> {
    /// `table` is ignored for [`Inference::Ucs`].
    pub fn new(
        models: &'a [M],
        table: Option<&PropensityTable<T>>,
        inference: Inference,
    ) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Config("at least one model is required".into()))?;
        let m = first.tree().num_labels();
        for (i, model) in models.iter().enumerate() {
            if model.tree().num_labels() != m || model.num_features() != first.num_features() {
                return Err(Error::Config(format!(
                    "model {i} disagrees with model 0 on label or feature dimension"
                )));
            }
        }
        let table = if inference.uses_propensities() {
            table
        } else {
            None
        };
        let contexts = models
            .iter()
            .map(|model| SearchContext::new(model.tree(), table))
            .collect::<Result<_>>()?;
        Ok(Self {
            models,
            contexts,
            inference,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.models[0].tree().num_labels()
    }

    /// Single-tree prediction, or the ensemble rule for several trees: the
    /// union of each tree's top-k, ranked by the mean over trees of each
    /// candidate's exact score (computed in trees that did not report it).
    pub fn predict(&self, x: &SparseVector<T>, k: usize) -> Result<Vec<ScoredLabel<T>>> {
        if self.models.len() == 1 {
            return self.inference.run(&self.contexts[0], &self.models[0], x, k);
        }
        let mut candidates = BTreeSet::new();
        let mut reported = Vec::with_capacity(self.models.len());
        for (ctx, model) in self.contexts.iter().zip(self.models) {
            let preds = self.inference.run(ctx, model, x, k)?;
            candidates.extend(preds.iter().map(|s| s.label));
            reported.push(preds);
        }
        let n = T::from_count(self.models.len());
        let q_max = self.contexts[0].q_max;
        let mut out: Vec<ScoredLabel<T>> = candidates
            .into_iter()
            .map(|label| {
                let total = self
                    .contexts
                    .iter()
                    .zip(self.models)
                    .zip(&reported)
                    .map(|((ctx, model), preds)| {
                        preds
                            .iter()
                            .find(|s| s.label == label)
                            .map_or_else(|| ctx.label_cost(model, label, x).score, |s| s.score)
                    })
                    .fold(T::zero(), |a, b| a + b);
                let score = total / n;
                ScoredLabel {
                    label,
                    score,
                    log_cost: q_max.ln() - score.ln(),
                }
            })
            .collect();
        out.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.label.cmp(&b.label))
        });
        out.truncate(k);
        Ok(out)
    }
}

pub fn predict_ensemble<T: Real, M: NodeEstimator<T>>(
    models: &[M],
    table: Option<&PropensityTable<T>>,
    x: &SparseVector<T>,
    k: usize,
    inference: Inference,
) -> Result<Vec<ScoredLabel<T>>> {
    Predictor::new(models, table, inference)?.predict(x, k)
}

#![allow(dead_code)]

use pstree::data::SparseVector;
use pstree::inference::FixedNodeProbabilities;
use pstree::propensity::PropensityTable;
use pstree::LabelTree;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random tree over `m` labels: each internal node splits its label set into
/// 2..=10 non-empty chunks; node ids are randomly permuted.
pub fn random_tree<R: Rng>(rng: &mut R, m: usize) -> LabelTree {
    let mut labels: Vec<usize> = (0..m).collect();
    labels.shuffle(rng);

    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut label: Vec<Option<usize>> = Vec::new();
    let mut stack = vec![(labels, None)];
    while let Some((set, p)) = stack.pop() {
        let id = parent.len();
        parent.push(p);
        if set.len() == 1 {
            label.push(Some(set[0]));
            continue;
        }
        label.push(None);
        let fanout = rng.gen_range(2..=10.min(set.len()));
        let mut cuts: Vec<usize> = (1..set.len()).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts[..fanout - 1].to_vec();
        cuts.sort_unstable();
        let mut start = 0;
        for end in cuts.into_iter().chain([set.len()]) {
            stack.push((set[start..end].to_vec(), Some(id)));
            start = end;
        }
    }

    let n = parent.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut new_parent = vec![None; n];
    let mut new_label = vec![None; n];
    for old in 0..n {
        new_parent[perm[old]] = parent[old].map(|p| perm[p]);
        new_label[perm[old]] = label[old];
    }
    LabelTree::from_parents(new_parent, new_label, m).unwrap()
}

pub fn random_probabilities<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let p: f64 = rng.gen();
            if p > 0.0 {
                break p;
            }
        })
        .collect()
}

/// Inverse propensities drawn uniformly from `[1, 50]`.
pub fn random_table<R: Rng>(rng: &mut R, m: usize) -> PropensityTable<f64> {
    let p = (0..m).map(|_| 1.0 / rng.gen_range(1.0..=50.0)).collect();
    PropensityTable::from_propensities(p, None).unwrap()
}

pub struct Instance {
    pub model: FixedNodeProbabilities<f64>,
    pub table: PropensityTable<f64>,
    pub k: usize,
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let m = rng.gen_range(8..=512);
    let tree = random_tree(rng, m);
    let probabilities = random_probabilities(rng, tree.num_nodes());
    let table = random_table(rng, m);
    let k = *[1, 3, 5].choose(rng).unwrap();
    Instance {
        model: FixedNodeProbabilities {
            tree,
            probabilities,
        },
        table,
        k,
    }
}

pub fn no_features() -> SparseVector<f64> {
    SparseVector::empty()
}

/// `q_j * prod of node probabilities on the leaf's path`, computed directly.
pub fn path_product_score(model: &FixedNodeProbabilities<f64>, q: f64, label: usize) -> f64 {
    let tree = &model.tree;
    let mut v = tree.leaf(label);
    let mut prod = model.probabilities[v];
    while let Some(p) = tree.parent(v) {
        prod *= model.probabilities[p];
        v = p;
    }
    q * prod
}

/// Independent top-k: scores every label by direct path products, sorts
/// descending with ties by label.
pub fn oracle_top_k(
    model: &FixedNodeProbabilities<f64>,
    table: Option<&PropensityTable<f64>>,
    k: usize,
) -> Vec<(usize, f64)> {
    let m = model.tree.num_labels();
    let mut all: Vec<(usize, f64)> = (0..m)
        .map(|j| {
            (
                j,
                path_product_score(model, table.map_or(1.0, |t| t.q(j)), j),
            )
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

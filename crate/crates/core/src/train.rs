//! Node classifiers of a probabilistic label tree and their training.
//!
//! Every tree node `v` gets a binary logistic model estimating
//! `P(z_v = 1 | z_pa(v) = 1, x)`, where `z_v` says whether at least one of the
//! example's labels sits under `v`. The model at `v` is trained only on
//! examples positive at its parent (all examples for the root).

use crate::data::{dot, Dataset, SparseVector};
use crate::error::{Error, Result};
use crate::inference::NodeEstimator;
use crate::scalar::{clamp_prob, sigmoid, softplus, Real};
use crate::tree::LabelTree;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Linear probabilistic classifier `sigmoid(w . x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeModel<T = f64> {
    pub weights: SparseVector<T>,
    pub bias: T,
}

impl<T: Real> NodeModel<T> {
    pub fn zero() -> Self {
        Self {
            weights: SparseVector::empty(),
            bias: T::zero(),
        }
    }

    pub fn decision(&self, x: &SparseVector<T>) -> T {
        dot(&self.weights, x) + self.bias
    }

    /// Probability clamped to `[1e-12, 1 - 1e-12]`.
    pub fn predict_proba(&self, x: &SparseVector<T>) -> T {
        clamp_prob(sigmoid(self.decision(x)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams<T = f64> {
    /// Weight of the data term against `0.5 * ||w||^2`.
    pub reg_c: T,
    /// Stop once the gradient's max-norm falls below this.
    pub tol: T,
    pub max_iter: usize,
    /// Weights with smaller magnitude are dropped after training.
    pub prune_threshold: T,
}

impl<T: Real> Default for HyperParams<T> {
    fn default() -> Self {
        Self {
            reg_c: T::one(),
            tol: T::lit(1e-3),
            max_iter: 500,
            prune_threshold: T::lit(1e-6),
        }
    }
}

impl<T: Real> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_c > T::zero()) {
            return Err(Error::param("reg_c must be positive"));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::param("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be at least 1"));
        }
        if self.prune_threshold < T::zero() {
            return Err(Error::param("prune_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Examples used to train one node, split by binary target.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeExamples {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl NodeExamples {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training examples for every node, in ascending example order.
pub fn assign_node_examples<T: Real>(tree: &LabelTree, data: &Dataset<T>) -> Vec<NodeExamples> {
    let mut out = vec![NodeExamples::default(); tree.num_nodes()];
    // stamp[v] == n + 1 marks v as positive for example n
    let mut stamp = vec![0usize; tree.num_nodes()];
    let mut positive_nodes = Vec::new();
    for (n, ex) in data.examples().iter().enumerate() {
        let mark = n + 1;
        positive_nodes.clear();
        for l in ex.labels.iter() {
            let mut v = tree.leaf(l);
            loop {
                if stamp[v] == mark {
                    break;
                }
                stamp[v] = mark;
                positive_nodes.push(v);
                match tree.parent(v) {
                    Some(p) => v = p,
                    None => break,
                }
            }
        }
        let root = tree.root();
        if stamp[root] == mark {
            out[root].positive.push(n);
        } else {
            out[root].negative.push(n);
        }
        for &v in &positive_nodes {
            for &c in tree.children(v) {
                if stamp[c] == mark {
                    out[c].positive.push(n);
                } else {
                    out[c].negative.push(n);
                }
            }
        }
    }
    out
}

/// Rows of one node's problem in compact CSR form over the features that occur.
struct Problem<T> {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<T>,
    targets: Vec<T>,
    /// Global feature index of each local column.
    columns: Vec<usize>,
    c: T,
}

impl<T: Real> Problem<T> {
    fn new(positive: &[&SparseVector<T>], negative: &[&SparseVector<T>], c: T) -> Self {
        let rows = || positive.iter().chain(negative.iter());
        let mut columns: Vec<usize> = rows().flat_map(|r| r.iter().map(|(i, _)| i)).collect();
        columns.sort_unstable();
        columns.dedup();

        let mut indptr = Vec::with_capacity(positive.len() + negative.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in rows() {
            for (i, v) in r.iter() {
                indices.push(columns.binary_search(&i).unwrap() as u32);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        let targets = std::iter::repeat_n(T::one(), positive.len())
            .chain(std::iter::repeat_n(-T::one(), negative.len()))
            .collect();
        Self {
            indptr,
            indices,
            values,
            targets,
            columns,
            c,
        }
    }

    fn num_rows(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&j, &v)| (j as usize, v))
    }

    fn row_dot(&self, i: usize, w: &[T]) -> T {
        self.row(i).fold(T::zero(), |acc, (j, v)| acc + v * w[j])
    }

    fn margins(&self, w: &[T], b: T, z: &mut [T]) {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = self.row_dot(i, w) + b;
        }
    }

    fn objective(&self, w: &[T], z: &[T]) -> T {
        let reg = w.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5);
        let loss = z
            .iter()
            .zip(&self.targets)
            .map(|(&zi, &t)| softplus(-t * zi))
            .sum::<T>();
        reg + self.c * loss
    }

    fn gradient(&self, w: &[T], z: &[T], gw: &mut [T]) -> T {
        gw.copy_from_slice(w);
        let mut gb = T::zero();
        for (i, (&t, &zi)) in self.targets.iter().zip(z).enumerate() {
            let coef = -self.c * t * sigmoid(-t * zi);
            gb = gb + coef;
            for (j, v) in self.row(i) {
                gw[j] = gw[j] + coef * v;
            }
        }
        gb
    }

    /// `H v` for the Hessian of the objective, with curvature weights `d`.
    fn hess_vec(&self, d: &[T], vw: &[T], vb: T, out: &mut [T]) -> T {
        out.copy_from_slice(vw);
        let mut ob = T::zero();
        for (i, &di) in d.iter().enumerate() {
            let s = self.c * di * (self.row_dot(i, vw) + vb);
            ob = ob + s;
            for (j, v) in self.row(i) {
                out[j] = out[j] + s * v;
            }
        }
        ob
    }
}

fn max_abs<T: Real>(v: &[T], extra: T) -> T {
    v.iter().fold(extra.abs(), |m, &x| m.max(x.abs()))
}

fn dot_dense<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Minimizes `0.5 ||w||^2 + C sum log(1 + exp(-t (w . x + b)))` by Newton's
/// method with conjugate-gradient steps and Armijo backtracking.
///
/// The bias is not regularized. A node whose examples all share one target
/// converges to a model saturated toward that target.
pub fn train_node<T: Real>(
    positive: &[&SparseVector<T>],
    negative: &[&SparseVector<T>],
    hp: &HyperParams<T>,
) -> NodeModel<T> {
    let prob = Problem::new(positive, negative, hp.reg_c);
    let n = prob.num_rows();
    if n == 0 {
        return NodeModel::zero();
    }
    let dim = prob.columns.len();
    let mut w = vec![T::zero(); dim];
    let mut b = (T::from_count(positive.len() + 1) / T::from_count(negative.len() + 1)).ln();

    let mut z = vec![T::zero(); n];
    let mut gw = vec![T::zero(); dim];
    let mut curv = vec![T::zero(); n];
    let (mut dw, mut r, mut p, mut hp_w) = (
        vec![T::zero(); dim],
        vec![T::zero(); dim],
        vec![T::zero(); dim],
        vec![T::zero(); dim],
    );
    let mut w_try = vec![T::zero(); dim];
    let mut z_try = vec![T::zero(); n];
    // keeps the bias direction well-posed when every example is saturated
    let damping = T::lit(1e-10);

    prob.margins(&w, b, &mut z);
    let mut f = prob.objective(&w, &z);
    for _ in 0..hp.max_iter {
        let gb = prob.gradient(&w, &z, &mut gw);
        let gnorm = max_abs(&gw, gb);
        if gnorm < hp.tol {
            break;
        }
        for (ci, &zi) in curv.iter_mut().zip(&z) {
            let s = sigmoid(zi);
            *ci = s * (T::one() - s);
        }

        // CG on (H + damping e_b e_b^T) d = -g
        dw.iter_mut().for_each(|v| *v = T::zero());
        let mut db = T::zero();
        for (ri, &gi) in r.iter_mut().zip(&gw) {
            *ri = -gi;
        }
        let mut rb = -gb;
        p.copy_from_slice(&r);
        let mut pb = rb;
        let mut rr = dot_dense(&r, &r) + rb * rb;
        let g_l2 = rr.sqrt();
        let cg_tol = g_l2 * T::lit(0.1).min(g_l2.sqrt());
        for _ in 0..(dim + 1).min(250) {
            if rr.sqrt() <= cg_tol {
                break;
            }
            let hb = prob.hess_vec(&curv, &p, pb, &mut hp_w) + damping * pb;
            let php = dot_dense(&p, &hp_w) + pb * hb;
            if !(php > T::zero()) {
                break;
            }
            let alpha = rr / php;
            for j in 0..dim {
                dw[j] = dw[j] + alpha * p[j];
                r[j] = r[j] - alpha * hp_w[j];
            }
            db = db + alpha * pb;
            rb = rb - alpha * hb;
            let rr_new = dot_dense(&r, &r) + rb * rb;
            let beta = rr_new / rr;
            rr = rr_new;
            for j in 0..dim {
                p[j] = r[j] + beta * p[j];
            }
            pb = rb + beta * pb;
        }

        let slope = dot_dense(&gw, &dw) + gb * db;
        if !(slope < T::zero()) {
            // CG made no progress; fall back to steepest descent
            for j in 0..dim {
                dw[j] = -gw[j];
            }
            db = -gb;
        }
        let slope = dot_dense(&gw, &dw) + gb * db;
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            for j in 0..dim {
                w_try[j] = w[j] + step * dw[j];
            }
            let b_try = b + step * db;
            prob.margins(&w_try, b_try, &mut z_try);
            let f_try = prob.objective(&w_try, &z_try);
            if f_try <= f + T::lit(1e-4) * step * slope {
                std::mem::swap(&mut w, &mut w_try);
                std::mem::swap(&mut z, &mut z_try);
                b = b_try;
                f = f_try;
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }

    let entries = prob
        .columns
        .iter()
        .zip(&w)
        .filter(|(_, &v)| v.abs() >= hp.prune_threshold && !v.is_zero())
        .map(|(&i, &v)| (i, v))
        .collect();
    NodeModel {
        weights: SparseVector::from_sorted_unchecked(entries),
        bias: b,
    }
}

/// Regularized objective of `model` on the given examples; used by diagnostics and tests.
pub fn node_objective<T: Real>(
    model: &NodeModel<T>,
    positive: &[&SparseVector<T>],
    negative: &[&SparseVector<T>],
    reg_c: T,
) -> T {
    let reg = model.weights.iter().map(|(_, v)| v * v).sum::<T>() * T::lit(0.5);
    let pos = positive.iter().map(|x| softplus(-model.decision(x)));
    let neg = negative.iter().map(|x| softplus(model.decision(x)));
    reg + reg_c * pos.chain(neg).sum::<T>()
}

/// A trained probabilistic label tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PltModel<T = f64> {
    pub tree: LabelTree,
    pub nodes: Vec<NodeModel<T>>,
    pub num_features: usize,
    pub hyper: HyperParams<T>,
}

impl<T: Real> PltModel<T> {
    pub fn num_labels(&self) -> usize {
        self.tree.num_labels()
    }

    /// Saves into `dir` as `tree.txt`, `hyper.txt` and `weights.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.tree
            .write(BufWriter::new(File::create(dir.join("tree.txt"))?))?;

        let mut h = BufWriter::new(File::create(dir.join("hyper.txt"))?);
        writeln!(h, "num_features={}", self.num_features)?;
        writeln!(h, "num_labels={}", self.num_labels())?;
        writeln!(h, "num_nodes={}", self.tree.num_nodes())?;
        writeln!(h, "reg_c={}", self.hyper.reg_c)?;
        writeln!(h, "tol={}", self.hyper.tol)?;
        writeln!(h, "max_iter={}", self.hyper.max_iter)?;
        writeln!(h, "prune_threshold={}", self.hyper.prune_threshold)?;
        h.flush()?;

        let mut out = BufWriter::new(File::create(dir.join("weights.txt"))?);
        let mut line = String::new();
        for (v, node) in self.nodes.iter().enumerate() {
            line.clear();
            line.push_str(&format!("{v} {}", node.bias));
            for (i, w) in node.weights.iter() {
                line.push_str(&format!(" {i}:{w}"));
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let tree = LabelTree::read(BufReader::new(File::open(dir.join("tree.txt"))?))?;

        let mut kv = std::collections::HashMap::new();
        for (i, line) in BufReader::new(File::open(dir.join("hyper.txt"))?)
            .lines()
            .enumerate()
        {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(i + 1, "expected key=value in hyper.txt"))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<V: std::str::FromStr>(
            kv: &std::collections::HashMap<String, String>,
            key: &str,
        ) -> Result<V> {
            kv.get(key)
                .ok_or_else(|| Error::Config(format!("hyper.txt lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::Config(format!("hyper.txt has a bad `{key}`")))
        }
        let num_features: usize = get(&kv, "num_features")?;
        let hyper = HyperParams {
            reg_c: get(&kv, "reg_c")?,
            tol: get(&kv, "tol")?,
            max_iter: get(&kv, "max_iter")?,
            prune_threshold: get(&kv, "prune_threshold")?,
        };
        if get::<usize>(&kv, "num_labels")? != tree.num_labels()
            || get::<usize>(&kv, "num_nodes")? != tree.num_nodes()
        {
            return Err(Error::Config("hyper.txt disagrees with tree.txt".into()));
        }

        let mut nodes = vec![None; tree.num_nodes()];
        for (i, line) in BufReader::new(File::open(dir.join("weights.txt"))?)
            .lines()
            .enumerate()
        {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let v: usize = tok
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|&v| v < nodes.len())
                .ok_or_else(|| Error::format(line_no, "bad node id in weights.txt"))?;
            let bias: T = tok
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(line_no, "bad bias in weights.txt"))?;
            let mut entries = Vec::new();
            for t in tok {
                let (i, w) = t.split_once(':').ok_or_else(|| {
                    Error::format(line_no, format!("expected idx:val, found {t:?}"))
                })?;
                let i: usize = i
                    .parse()
                    .map_err(|_| Error::format(line_no, format!("bad index {i:?}")))?;
                let w: T = w
                    .parse()
                    .map_err(|_| Error::format(line_no, format!("bad weight {w:?}")))?;
                if i >= num_features {
                    return Err(Error::format(
                        line_no,
                        format!("weight index {i} >= {num_features}"),
                    ));
                }
                entries.push((i, w));
            }
            let weights =
                SparseVector::new(entries).map_err(|e| Error::format(line_no, e.to_string()))?;
            nodes[v] = Some(NodeModel { weights, bias });
        }
        let nodes = nodes
            .into_iter()
            .enumerate()
            .map(|(v, n)| n.ok_or_else(|| Error::Config(format!("weights.txt lacks node {v}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree,
            nodes,
            num_features,
            hyper,
        })
    }
}

impl<T: Real> NodeEstimator<T> for PltModel<T> {
    fn tree(&self) -> &LabelTree {
        &self.tree
    }

    fn node_probability(&self, node: usize, x: &SparseVector<T>) -> T {
        self.nodes[node].predict_proba(x)
    }
}

/// Trains one classifier per node; nodes are independent, so the result does
/// not depend on the number of worker threads.
pub fn train_plt<T: Real>(
    tree: LabelTree,
    data: &Dataset<T>,
    hp: &HyperParams<T>,
) -> Result<PltModel<T>> {
    hp.validate()?;
    if tree.num_labels() != data.num_labels() {
        return Err(Error::Config(format!(
            "tree has {} labels but dataset has {}",
            tree.num_labels(),
            data.num_labels()
        )));
    }
    let assignment = assign_node_examples(&tree, data);
    let rows = |ids: &[usize]| -> Vec<&SparseVector<T>> {
        ids.iter().map(|&n| &data.examples()[n].features).collect()
    };
    let nodes = assignment
        .par_iter()
        .map(|a| train_node(&rows(&a.positive), &rows(&a.negative), hp))
        .collect();
    Ok(PltModel {
        tree,
        nodes,
        num_features: data.num_features(),
        hyper: hp.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, LabelSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(e: Vec<(usize, f64)>) -> SparseVector<f64> {
        SparseVector::new(e).unwrap()
    }

    // root(0) → a(1), b(2); a → leaf l0(3), l1(4); b → l2(5), l3(6)
    fn small_tree() -> LabelTree {
        LabelTree::from_parents(
            vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)],
            vec![None, None, None, Some(0), Some(1), Some(2), Some(3)],
            4,
        )
        .unwrap()
    }

    #[test]
    fn predict_proba_basics() {
        let m = NodeModel::<f64>::zero();
        assert_eq!(m.predict_proba(&sv(vec![(0, 3.0)])), 0.5);
        let sat = NodeModel {
            weights: sv(vec![(0, 1.0)]),
            bias: 0.0,
        };
        assert_eq!(sat.predict_proba(&sv(vec![(0, 40.0)])), 1.0 - 1e-12);
        assert_eq!(sat.predict_proba(&sv(vec![(0, -40.0)])), 1e-12);
    }

    #[test]
    fn predict_proba_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..10)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        rng.gen_range(-2.0..2.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let b = rng.gen_range(-1.0..1.0);
            let model = NodeModel {
                weights: SparseVector::from_dense(&w),
                bias: b,
            };
            let z: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b;
            let oracle = 1.0 / (1.0 + (-z).exp());
            assert!((model.predict_proba(&SparseVector::from_dense(&x)) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_toy_is_classified() {
        let pos = sv(vec![(0, 1.0)]);
        let neg = sv(vec![(0, -1.0)]);
        let m = train_node(&[&pos], &[&neg], &HyperParams::default());
        assert!(m.predict_proba(&pos) > 0.5);
        assert!(m.predict_proba(&neg) < 0.5);
    }

    #[test]
    fn single_class_saturates() {
        let xs: Vec<SparseVector<f64>> = (0..5).map(|i| sv(vec![(i, 1.0)])).collect();
        let refs: Vec<&SparseVector<f64>> = xs.iter().collect();
        let neg = train_node(&[], &refs, &HyperParams::default());
        assert!(refs.iter().all(|x| neg.predict_proba(x) < 0.5));
        let pos = train_node(&refs, &[], &HyperParams::default());
        assert!(refs.iter().all(|x| pos.predict_proba(x) > 0.5));
    }

    /// Plain full-batch gradient descent, run to a tight tolerance.
    fn reference_objective(pos: &[Vec<f64>], neg: &[Vec<f64>], c: f64) -> f64 {
        let d = pos[0].len();
        let rows: Vec<(&Vec<f64>, f64)> = pos
            .iter()
            .map(|x| (x, 1.0))
            .chain(neg.iter().map(|x| (x, -1.0)))
            .collect();
        let obj = |w: &[f64], b: f64| {
            let mut f = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
            for (x, t) in &rows {
                let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
                f += c * (1.0 + (-t * z).exp()).ln();
            }
            f
        };
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let lr = 1.0 / (1.0 + c * rows.len() as f64 * 4.0);
        for _ in 0..2_000_000 {
            let mut gw = w.clone();
            let mut gb = 0.0;
            for (x, t) in &rows {
                let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                let s = -c * t / (1.0 + (t * z).exp());
                gb += s;
                for j in 0..d {
                    gw[j] += s * x[j];
                }
            }
            let gmax = gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()));
            if gmax < 1e-9 {
                break;
            }
            for j in 0..d {
                w[j] -= lr * gw[j];
            }
            b -= lr * gb;
        }
        obj(&w, b)
    }

    #[test]
    fn objective_matches_gradient_descent_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let label = x[0] + 0.5 * x[1] + rng.gen_range(-0.5..0.5) > 0.0;
            if label || i == 0 {
                pos.push(x);
            } else {
                neg.push(x);
            }
        }
        let ps: Vec<_> = pos.iter().map(|x| SparseVector::from_dense(x)).collect();
        let ns: Vec<_> = neg.iter().map(|x| SparseVector::from_dense(x)).collect();
        let pr: Vec<_> = ps.iter().collect();
        let nr: Vec<_> = ns.iter().collect();
        let model = train_node(&pr, &nr, &HyperParams::default());
        let ours = node_objective(&model, &pr, &nr, 1.0);
        let reference = reference_objective(&pos, &neg, 1.0);
        assert!(
            (ours - reference).abs() < 1e-4,
            "objective {ours} vs reference {reference}"
        );
    }

    type Row = (Vec<(usize, f64)>, Vec<usize>);

    fn dataset(rows: Vec<Row>, d: usize, m: usize) -> Dataset<f64> {
        Dataset::new(
            d,
            m,
            rows.into_iter()
                .map(|(f, l)| Example {
                    features: sv(f),
                    labels: LabelSet::new(l),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn assignment_edge_cases() {
        let t = small_tree();
        let data = dataset(
            vec![(vec![(0, 1.0)], vec![]), (vec![(1, 1.0)], vec![0, 1])],
            2,
            4,
        );
        let a = assign_node_examples(&t, &data);
        // empty example: negative at root only
        assert_eq!(a[0].negative, vec![0]);
        assert!(a[1..]
            .iter()
            .all(|n| !n.positive.contains(&0) && !n.negative.contains(&0)));
        // labels under node 1 only
        assert_eq!(a[0].positive, vec![1]);
        assert_eq!(a[1].positive, vec![1]);
        assert_eq!(a[2].negative, vec![1]);
        assert_eq!(a[3].positive, vec![1]);
        assert_eq!(a[4].positive, vec![1]);
        assert!(a[5].is_empty() && a[6].is_empty());
    }

    #[test]
    fn assignment_matches_subtree_oracle() {
        let t = small_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let rows = (0..60)
            .map(|_| {
                let labels = (0..4).filter(|_| rng.gen_bool(0.3)).collect();
                (vec![(0, 1.0)], labels)
            })
            .collect();
        let data = dataset(rows, 1, 4);
        let a = assign_node_examples(&t, &data);
        let z = |v: usize, n: usize| {
            t.labels_under(v)
                .iter()
                .any(|&l| data.examples()[n].labels.contains(l))
        };
        for v in 0..t.num_nodes() {
            for n in 0..data.num_examples() {
                let trains = t.parent(v).is_none_or(|p| z(p, n));
                assert_eq!(a[v].positive.contains(&n), trains && z(v, n));
                assert_eq!(a[v].negative.contains(&n), trains && !z(v, n));
                if z(v, n) {
                    if let Some(p) = t.parent(v) {
                        assert!(z(p, n));
                    }
                }
            }
            if let Some(p) = t.parent(v) {
                let mut set: Vec<usize> = a[v]
                    .positive
                    .iter()
                    .chain(&a[v].negative)
                    .copied()
                    .collect();
                set.sort_unstable();
                assert_eq!(set, a[p].positive);
            }
        }
    }

    #[test]
    fn always_present_label_path_predicts_high() {
        let t = small_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..40)
            .map(|_| {
                let mut labels = vec![2];
                if rng.gen_bool(0.5) {
                    labels.push(0);
                }
                let f = vec![(0, rng.gen_range(0.1..1.0)), (1, rng.gen_range(-1.0..1.0))];
                (f, labels)
            })
            .collect();
        let data = dataset(rows, 2, 4);
        let model = train_plt(t, &data, &HyperParams::default()).unwrap();
        for ex in data.examples() {
            for &v in &model.tree.path(model.tree.leaf(2)) {
                assert!(model.nodes[v].predict_proba(&ex.features) > 0.5);
            }
        }
    }

    #[test]
    fn single_label_tree_is_plain_binary_classifier() {
        let t = LabelTree::from_parents(vec![None, Some(0)], vec![None, Some(0)], 1).unwrap();
        let rows: Vec<_> = (0..30)
            .map(|i| {
                let x = (i as f64 - 15.0) / 10.0;
                (vec![(0, x)], if x > 0.0 { vec![0] } else { vec![] })
            })
            .collect();
        let data = dataset(rows, 1, 1);
        let hp = HyperParams::default();
        let model = train_plt(t, &data, &hp).unwrap();
        let (pos, neg): (Vec<_>, Vec<_>) =
            data.examples().iter().partition(|e| !e.labels.is_empty());
        let plain = train_node(
            &pos.iter().map(|e| &e.features).collect::<Vec<_>>(),
            &neg.iter().map(|e| &e.features).collect::<Vec<_>>(),
            &hp,
        );
        assert_eq!(model.nodes[0], plain);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let data = dataset(vec![(vec![(0, 1.0)], vec![0])], 1, 3);
        assert!(matches!(
            train_plt(small_tree(), &data, &HyperParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let t = small_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = (0..30)
            .map(|_| {
                let f = vec![(0, rng.gen_range(-1.0..1.0)), (2, rng.gen_range(-1.0..1.0))];
                (f, (0..4).filter(|_| rng.gen_bool(0.4)).collect())
            })
            .collect();
        let data = dataset(rows, 3, 4);
        let model = train_plt(t, &data, &HyperParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = PltModel::<f64>::load(dir.path()).unwrap();
        assert_eq!(back, model);
    }
}

//! Precision@k and propensity-scored precision@k.

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::inference::{Inference, NodeEstimator, Predictor, ScoredLabel};
use crate::propensity::PropensityTable;
use crate::scalar::Real;
use rayon::prelude::*;
use std::fmt;

fn check_len(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if n < k {
        return Err(Error::param(format!("{n} predictions given, k = {k}")));
    }
    Ok(())
}

/// Fraction of the first `k` predicted labels that are observed.
pub fn precision_at_k<T: Real>(predicted: &[usize], observed: &LabelSet, k: usize) -> Result<T> {
    check_len(predicted.len(), k)?;
    let hits = predicted[..k]
        .iter()
        .filter(|&&j| observed.contains(j))
        .count();
    Ok(T::from_count(hits) / T::from_count(k))
}

/// `(1/k) * sum of q_j over the first k predicted labels that are observed`.
pub fn psp_at_k<T: Real>(
    predicted: &[usize],
    observed: &LabelSet,
    table: &PropensityTable<T>,
    k: usize,
) -> Result<T> {
    check_len(predicted.len(), k)?;
    let gain = predicted[..k]
        .iter()
        .filter(|&&j| observed.contains(j))
        .map(|&j| table.q(j))
        .fold(T::zero(), |a, b| a + b);
    Ok(gain / T::from_count(k))
}

/// Mean p@k and psp@k over a test set, in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport<T = f64> {
    pub ks: Vec<usize>,
    pub precision: Vec<T>,
    pub psp: Vec<T>,
    pub num_examples: usize,
}

impl<T: Real> EvalReport<T> {
    pub fn precision_at(&self, k: usize) -> Option<T> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .map(|i| self.precision[i])
    }

    pub fn psp_at(&self, k: usize) -> Option<T> {
        self.ks.iter().position(|&x| x == k).map(|i| self.psp[i])
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("n_test={}\n", self.num_examples);
        for (i, k) in self.ks.iter().enumerate() {
            s.push_str(&format!("p@{k}={}\n", self.precision[i]));
        }
        for (i, k) in self.ks.iter().enumerate() {
            s.push_str(&format!("psp@{k}={}\n", self.psp[i]));
        }
        s
    }
}

impl<T: Real> fmt::Display for EvalReport<T> {
    /// Fixed-order `metric k value` table, values rounded to two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "p {k} {:.2}", self.precision[i].to_f64().unwrap())?;
        }
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "psp {k} {:.2}", self.psp[i].to_f64().unwrap())?;
        }
        Ok(())
    }
}

/// Aggregates metrics over examples given their ranked predictions.
///
/// Rows with fewer than `k` predictions count the missing positions as misses.
/// Examples without observed labels contribute zero.
pub fn report_from_predictions<T: Real>(
    predictions: &[Vec<usize>],
    test: &Dataset<T>,
    table: &PropensityTable<T>,
    ks: &[usize],
) -> Result<EvalReport<T>> {
    if test.is_empty() {
        return Err(Error::param("cannot evaluate on an empty test set"));
    }
    if predictions.len() != test.num_examples() {
        return Err(Error::param(
            "one prediction list per test example is required",
        ));
    }
    if table.num_labels() != test.num_labels() {
        return Err(Error::Config(
            "propensity table and test set disagree on label count".into(),
        ));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.first() == Some(&0) || ks.is_empty() {
        return Err(Error::param("ks must be non-empty and positive"));
    }

    let mut precision = vec![T::zero(); ks.len()];
    let mut psp = vec![T::zero(); ks.len()];
    for (preds, ex) in predictions.iter().zip(test.examples()) {
        for (i, &k) in ks.iter().enumerate() {
            let mut hits = T::zero();
            let mut gain = T::zero();
            for &j in preds.iter().take(k) {
                if ex.labels.contains(j) {
                    hits = hits + T::one();
                    gain = gain + table.q(j);
                }
            }
            let kk = T::from_count(k);
            precision[i] = precision[i] + hits / kk;
            psp[i] = psp[i] + gain / kk;
        }
    }
    let scale = T::lit(100.0) / T::from_count(test.num_examples());
    Ok(EvalReport {
        ks,
        precision: precision.into_iter().map(|v| v * scale).collect(),
        psp: psp.into_iter().map(|v| v * scale).collect(),
        num_examples: test.num_examples(),
    })
}

/// Ranked predictions for every example, computed in parallel.
pub fn predict_all<T: Real, M: NodeEstimator<T>>(
    predictor: &Predictor<'_, T, M>,
    test: &Dataset<T>,
    k: usize,
) -> Result<Vec<Vec<ScoredLabel<T>>>> {
    test.examples()
        .par_iter()
        .map(|ex| predictor.predict(&ex.features, k))
        .collect()
}

/// Predicts with `models` and reports p@k and psp@k for every `k` in `ks`.
///
/// `eval_table` weighs hits in psp@k. Inference is propensity-scored with
/// `eval_table` unless `plain_inference` is set or the strategy is UCS.
pub fn evaluate<T: Real, M: NodeEstimator<T>>(
    models: &[M],
    test: &Dataset<T>,
    eval_table: &PropensityTable<T>,
    ks: &[usize],
    inference: Inference,
    plain_inference: bool,
) -> Result<EvalReport<T>> {
    if test.is_empty() {
        return Err(Error::param("cannot evaluate on an empty test set"));
    }
    let table = (!plain_inference).then_some(eval_table);
    let predictor = Predictor::new(models, table, inference)?;
    if predictor.num_labels() != test.num_labels() {
        return Err(Error::Config(
            "model and test set disagree on label count".into(),
        ));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let preds = predict_all(&predictor, test, kmax)?;
    let ranked: Vec<Vec<usize>> = preds
        .into_iter()
        .map(|p| p.into_iter().map(|s| s.label).collect())
        .collect();
    report_from_predictions(&ranked, test, eval_table, ks)
}

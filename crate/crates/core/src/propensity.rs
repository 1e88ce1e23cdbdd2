//! Empirical label propensities and the missing-label observation process.
//!
//! Propensity of label `j` with `N_j` observed positives in a training set of
//! size `N`:
//!
//! ```text
//! p_j = 1 / (1 + C * exp(-A * ln(N_j + B))),   C = (ln N - 1) * (B + 1)^A
//! ```
//!
//! The inverse propensity `q_j = 1 / p_j` weights hits in propensity-scored
//! precision and scales leaf scores during propensity-aware inference.

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};

/// Parameters of the empirical propensity model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropensityParams<T = f64> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub n: usize,
}

impl<T: Real> PropensityParams<T> {
    /// Validates `A`, `B`, `N` and derives `C`.
    pub fn new(a: T, b: T, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::param(format!(
                "dataset size N = {n} must be at least 3 so that ln N - 1 > 0"
            )));
        }
        if !(a > T::zero()) || !a.is_finite() {
            return Err(Error::param(format!("A = {a} must be positive")));
        }
        if !(b > -T::one()) || !b.is_finite() {
            return Err(Error::param(format!("B = {b} must exceed -1")));
        }
        let c = (T::from_count(n).ln() - T::one()) * (b + T::one()).powf(a);
        Ok(Self { a, b, c, n })
    }

    pub fn propensity(&self, count: usize) -> T {
        T::one() / (T::one() + self.c * (-self.a * (T::from_count(count) + self.b).ln()).exp())
    }
}

/// Per-label propensities `p`, inverse propensities `q` and `q_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityTable<T = f64> {
    p: Vec<T>,
    q: Vec<T>,
    q_max: T,
    params: Option<PropensityParams<T>>,
}

impl<T: Real> PropensityTable<T> {
    /// Table from explicit propensities, each in `(0, 1]`.
    pub fn from_propensities(p: Vec<T>, params: Option<PropensityParams<T>>) -> Result<Self> {
        if let Some((j, v)) = p
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > T::zero() && v <= T::one()))
        {
            return Err(Error::param(format!(
                "propensity of label {j} is {v}, outside (0, 1]"
            )));
        }
        let q: Vec<T> = p.iter().map(|&v| T::one() / v).collect();
        let q_max = q.iter().copied().fold(T::one(), T::max);
        Ok(Self {
            p,
            q,
            q_max,
            params,
        })
    }

    /// All propensities equal to one; propensity-scored metrics and inference
    /// reduce to their plain counterparts.
    pub fn uniform(num_labels: usize) -> Self {
        Self {
            p: vec![T::one(); num_labels],
            q: vec![T::one(); num_labels],
            q_max: T::one(),
            params: None,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self, label: usize) -> T {
        self.p[label]
    }

    pub fn q(&self, label: usize) -> T {
        self.q[label]
    }

    pub fn propensities(&self) -> &[T] {
        &self.p
    }

    pub fn inverse_propensities(&self) -> &[T] {
        &self.q
    }

    pub fn q_max(&self) -> T {
        self.q_max
    }

    pub fn params(&self) -> Option<&PropensityParams<T>> {
        self.params.as_ref()
    }
}

/// Propensities for every label from its positive count on the training set.
pub fn compute_propensities<T: Real>(
    label_counts: &[usize],
    n: usize,
    a: T,
    b: T,
) -> Result<PropensityTable<T>> {
    let params = PropensityParams::new(a, b, n)?;
    let p = label_counts.iter().map(|&c| params.propensity(c)).collect();
    PropensityTable::from_propensities(p, Some(params))
}

/// Censors a true label set: each label `j` survives with probability
/// `retain(j)`, independently. Labels not in `true_labels` never appear.
///
/// Randomness comes from ChaCha8 seeded with `seed`; one uniform draw is
/// consumed per true label, in ascending label order.
pub fn simulate_missing_with<T: Real>(
    true_labels: &LabelSet,
    retain: impl Fn(usize) -> T,
    seed: u64,
) -> LabelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_labels
        .iter()
        .filter(|&j| {
            let u: f64 = rng.gen();
            u < retain(j).to_f64().unwrap()
        })
        .collect()
}

pub fn simulate_missing<T: Real>(
    true_labels: &LabelSet,
    table: &PropensityTable<T>,
    seed: u64,
) -> LabelSet {
    simulate_missing_with(true_labels, |j| table.p(j), seed)
}

/// Writes `m A B C N` on the header line, then `j p_j` per label.
///
/// A table without stored parameters writes `nan` for `A`, `B`, `C` and 0 for `N`.
pub fn save_propensities<T: Real, W: Write>(table: &PropensityTable<T>, mut out: W) -> Result<()> {
    match &table.params {
        Some(pp) => writeln!(
            out,
            "{} {} {} {} {}",
            table.num_labels(),
            pp.a,
            pp.b,
            pp.c,
            pp.n
        )?,
        None => writeln!(out, "{} nan nan nan 0", table.num_labels())?,
    }
    for (j, p) in table.p.iter().enumerate() {
        writeln!(out, "{j} {p}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_propensities<T: Real, R: BufRead>(reader: R) -> Result<PropensityTable<T>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(1, "missing header line"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::format(1, "expected header `m A B C N`"));
    }
    let m: usize = fields[0]
        .parse()
        .map_err(|_| Error::format(1, "label count is not an integer"))?;
    let real = |s: &str| {
        s.parse::<T>()
            .map_err(|_| Error::format(1, format!("bad number {s:?}")))
    };
    let (a, b, c) = (real(fields[1])?, real(fields[2])?, real(fields[3])?);
    let n: usize = fields[4]
        .parse()
        .map_err(|_| Error::format(1, "N is not an integer"))?;
    let params = if a.is_nan() {
        None
    } else {
        Some(PropensityParams { a, b, c, n })
    };

    let mut p = Vec::with_capacity(m);
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (j, v) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format(line_no, "expected `label propensity`"))?;
        let j: usize = j
            .parse()
            .map_err(|_| Error::format(line_no, format!("bad label {j:?}")))?;
        if j != p.len() {
            return Err(Error::format(
                line_no,
                format!("expected label {} but found {j}", p.len()),
            ));
        }
        let v: T = v
            .trim()
            .parse()
            .map_err(|_| Error::format(line_no, format!("bad propensity {v:?}")))?;
        p.push(v);
    }
    if p.len() != m {
        return Err(Error::format(
            p.len() + 2,
            format!("header declares {m} labels but found {}", p.len()),
        ));
    }
    PropensityTable::from_propensities(p, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_errors() {
        assert!(compute_propensities(&[1], 2, 0.55, 1.5).is_err());
        assert!(compute_propensities(&[1], 100, 0.55, -1.0).is_err());
        assert!(compute_propensities(&[1], 100, 0.0, 1.5).is_err());
        assert!(compute_propensities(&[1], 3, 0.55, 1.5).is_ok());
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn zero_count_matches_high_precision_reference() {
        // mpmath, 40 digits: N=15539, A=0.55, B=1.5
        let t = compute_propensities(&[0, 1, 10, 100], 15539, 0.55f64, 1.5).unwrap();
        let expected = [
            0.080273150010425498526,
            0.10361504314725374683,
            0.21109186404762975536,
            0.46988275323553648968,
        ];
        for (j, e) in expected.iter().enumerate() {
            assert!((t.p(j) - e).abs() < 1e-12, "label {j}: {} vs {e}", t.p(j));
        }
        assert!((t.params().unwrap().c - 14.319859344508299993).abs() < 1e-12);
        assert!((t.q_max() - 12.457465539475213211).abs() < 1e-10);
    }

    #[test]
    fn huge_count_saturates() {
        let t = compute_propensities(&[1_000_000_000], 15539, 0.55f64, 1.5).unwrap();
        assert!(t.p(0) > 0.999);
    }

    #[test]
    fn p_times_q_is_one() {
        let counts: Vec<usize> = (0..500).map(|i| i * 7 % 311).collect();
        let t = compute_propensities(&counts, 1000, 0.5f64, 0.4).unwrap();
        for j in 0..counts.len() {
            assert!((t.p(j) * t.q(j) - 1.0).abs() <= 1e-15);
            assert!(t.q(j) >= 1.0 && t.q(j) <= t.q_max());
        }
        assert_eq!(
            t.q_max(),
            t.inverse_propensities().iter().cloned().fold(0.0, f64::max)
        );
    }

    #[test]
    fn simulate_extremes() {
        let y = LabelSet::new(vec![1, 4, 9]);
        let ones = PropensityTable::<f64>::uniform(10);
        assert_eq!(simulate_missing(&y, &ones, 7), y);
        assert!(simulate_missing_with(&y, |_| 0.0f64, 7).is_empty());
    }

    #[test]
    fn simulate_is_seed_deterministic() {
        let y: LabelSet = (0..50).collect();
        let a = simulate_missing_with(&y, |_| 0.5f64, 11);
        let b = simulate_missing_with(&y, |_| 0.5f64, 11);
        assert_eq!(a, b);
        assert!(a.iter().all(|j| y.contains(j)));
    }

    #[test]
    fn save_load_round_trip() {
        let counts = [0usize, 3, 17, 250, 1];
        let t = compute_propensities(&counts, 15539, 0.55f64, 1.5).unwrap();
        let mut buf = Vec::new();
        save_propensities(&t, &mut buf).unwrap();
        let back: PropensityTable<f64> = load_propensities(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn hand_written_file() {
        let text = "3 0.5 0.4 1.0 100\n0 0.5\n1 0.25\n2 1\n";
        let t: PropensityTable<f64> = load_propensities(text.as_bytes()).unwrap();
        assert_eq!(t.q_max(), 4.0);
        assert_eq!(t.q(2), 1.0);
    }

    #[test]
    fn missing_line_is_format_error() {
        let text = "3 0.5 0.4 1.0 100\n0 0.5\n2 1\n";
        assert!(matches!(
            load_propensities::<f64, _>(text.as_bytes()),
            Err(Error::Format { line: 3, .. })
        ));
        let short = "3 0.5 0.4 1.0 100\n0 0.5\n1 0.5\n";
        assert!(matches!(
            load_propensities::<f64, _>(short.as_bytes()),
            Err(Error::Format { .. })
        ));
        let garbage = "1 0.5 0.4 1.0 100\n0 abc\n";
        assert!(load_propensities::<f64, _>(garbage.as_bytes()).is_err());
    }
}

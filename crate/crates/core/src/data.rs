//! Sparse feature vectors, label sets and the XMLC repository text format.
//!
//! The text format is a header line `N d m` followed by exactly `N` example
//! lines of the form `l1,l2,... idx:val idx:val ...`. Label and feature
//! indices are 0-based. An example without labels starts with whitespace (or
//! directly with a feature token), and a completely empty line is an example
//! with neither labels nor features.

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::io::{BufRead, Write};

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector<T = f64> {
    entries: Vec<(usize, T)>,
}

impl<T: Real> SparseVector<T> {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Builds a vector from entries already sorted by index.
    ///
    /// Zero values are dropped; unsorted or duplicate indices and non-finite
    /// values are rejected.
    pub fn new(entries: Vec<(usize, T)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::param(format!(
                    "sparse indices must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((i, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value {v} at index {i}")));
        }
        Ok(Self::from_sorted_unchecked(
            entries.into_iter().filter(|(_, v)| !v.is_zero()).collect(),
        ))
    }

    /// Sorts the entries first; duplicates are still an error.
    pub fn from_unsorted(mut entries: Vec<(usize, T)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        Self::new(entries)
    }

    pub fn from_dense(values: &[T]) -> Self {
        Self::from_sorted_unchecked(
            values
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(i, &v)| (i, v))
                .collect(),
        )
    }

    pub(crate) fn from_sorted_unchecked(entries: Vec<(usize, T)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.entries.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the largest stored index, or 0 for an empty vector.
    pub fn dim_lower_bound(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i + 1)
    }

    pub fn norm(&self) -> T {
        self.entries.iter().map(|&(_, v)| v * v).sum::<T>().sqrt()
    }

    /// Returns a unit-L2 copy, or the vector unchanged when its norm is zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n.is_zero() {
            return self.clone();
        }
        Self::from_sorted_unchecked(self.entries.iter().map(|&(i, v)| (i, v / n)).collect())
    }

    /// Dot product with a dense vector; indices beyond `dense.len()` are ignored.
    pub fn dot_dense(&self, dense: &[T]) -> T {
        let mut acc = T::zero();
        for &(i, v) in &self.entries {
            if let Some(&d) = dense.get(i) {
                acc = acc + v * d;
            }
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Merge-join dot product over shared indices.
pub fn dot<T: Real>(a: &SparseVector<T>, b: &SparseVector<T>) -> T {
    let (a, b) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    let mut acc = T::zero();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc = acc + a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Sorted, duplicate-free set of label indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSet {
    labels: Vec<usize>,
}

impl LabelSet {
    pub fn new(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self { labels }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().copied()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example<T = f64> {
    pub features: SparseVector<T>,
    pub labels: LabelSet,
}

/// A multi-label dataset with its declared feature and label dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f64> {
    num_features: usize,
    num_labels: usize,
    examples: Vec<Example<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(num_features: usize, num_labels: usize, examples: Vec<Example<T>>) -> Result<Self> {
        for (n, ex) in examples.iter().enumerate() {
            check_example(n, ex, num_features, num_labels)?;
        }
        Ok(Self {
            num_features,
            num_labels,
            examples,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn examples(&self) -> &[Example<T>] {
        &self.examples
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of examples annotated with each label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels];
        for ex in &self.examples {
            for l in ex.labels.iter() {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Same examples with every label set replaced; used by the missing-label simulator.
    pub fn with_labels(&self, labels: Vec<LabelSet>) -> Result<Self> {
        if labels.len() != self.examples.len() {
            return Err(Error::param("label list length differs from example count"));
        }
        let examples = self
            .examples
            .iter()
            .zip(labels)
            .map(|(ex, labels)| Example {
                features: ex.features.clone(),
                labels,
            })
            .collect();
        Self::new(self.num_features, self.num_labels, examples)
    }
}

fn check_example<T: Real>(n: usize, ex: &Example<T>, d: usize, m: usize) -> Result<()> {
    if let Some(l) = ex.labels.iter().find(|&l| l >= m) {
        return Err(Error::Range {
            example: n,
            msg: format!("label {l} >= num_labels {m}"),
        });
    }
    if ex.features.dim_lower_bound() > d {
        return Err(Error::Range {
            example: n,
            msg: format!(
                "feature index {} >= num_features {d}",
                ex.features.dim_lower_bound() - 1
            ),
        });
    }
    Ok(())
}

/// Header `N d m` of a dataset file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub num_examples: usize,
    pub num_features: usize,
    pub num_labels: usize,
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::format(
            1,
            format!("expected header `N d m`, found {:?}", line),
        ));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(1, format!("{what} is not a non-negative integer: {s:?}")))
    };
    Ok(DatasetHeader {
        num_examples: parse(fields[0], "N")?,
        num_features: parse(fields[1], "d")?,
        num_labels: parse(fields[2], "m")?,
    })
}

/// Reads only the header line; used to validate dimensions before heavy work.
pub fn read_header<R: BufRead>(mut reader: R) -> Result<DatasetHeader> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(Error::format(1, "missing header line"));
    }
    parse_header(line.trim_end_matches(['\n', '\r']))
}

fn parse_example<T: Real>(line: &str, line_no: usize) -> Result<Example<T>> {
    let mut tokens = line.split_whitespace().peekable();
    let starts_with_labels =
        !line.starts_with(char::is_whitespace) && tokens.peek().is_some_and(|t| !t.contains(':'));

    let mut labels = Vec::new();
    if starts_with_labels {
        let field = tokens.next().unwrap();
        for tok in field.split(',').filter(|t| !t.is_empty()) {
            let l = tok
                .parse::<usize>()
                .map_err(|_| Error::format(line_no, format!("bad label {tok:?}")))?;
            labels.push(l);
        }
    }

    let mut entries: Vec<(usize, T)> = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::format(line_no, format!("expected idx:val, found {tok:?}")))?;
        let idx = idx
            .parse::<usize>()
            .map_err(|_| Error::format(line_no, format!("bad feature index {idx:?}")))?;
        let val: T = val
            .parse()
            .map_err(|_| Error::format(line_no, format!("bad feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(Error::Value {
                line: line_no,
                msg: format!("non-finite value for feature {idx}"),
            });
        }
        entries.push((idx, val));
    }
    entries.sort_by_key(|&(i, _)| i);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::format(
            line_no,
            format!("duplicate feature index {}", w[0].0),
        ));
    }
    let features = SparseVector::from_sorted_unchecked(
        entries.into_iter().filter(|(_, v)| !v.is_zero()).collect(),
    );
    Ok(Example {
        features,
        labels: LabelSet::new(labels),
    })
}

/// Parses a dataset in the XMLC repository text format.
pub fn parse_dataset<T: Real, R: BufRead>(reader: R) -> Result<Dataset<T>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => parse_header(l?.trim_end_matches('\r'))?,
        None => return Err(Error::format(1, "missing header line")),
    };

    let mut examples = Vec::with_capacity(header.num_examples);
    let mut line_no = 1;
    for line in lines {
        line_no += 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if examples.len() == header.num_examples {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::format(
                line_no,
                format!("more than the declared {} examples", header.num_examples),
            ));
        }
        let ex = parse_example(line, line_no)?;
        check_example(examples.len(), &ex, header.num_features, header.num_labels)?;
        examples.push(ex);
    }
    if examples.len() != header.num_examples {
        return Err(Error::format(
            line_no + 1,
            format!(
                "declared {} examples but found {}",
                header.num_examples,
                examples.len()
            ),
        ));
    }
    Ok(Dataset {
        num_features: header.num_features,
        num_labels: header.num_labels,
        examples,
    })
}

/// Writes a dataset such that [`parse_dataset`] reproduces it exactly.
pub fn write_dataset<T: Real, W: Write>(data: &Dataset<T>, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{} {} {}",
        data.num_examples(),
        data.num_features,
        data.num_labels
    )?;
    let mut line = String::new();
    for ex in &data.examples {
        line.clear();
        for (n, l) in ex.labels.iter().enumerate() {
            if n > 0 {
                line.push(',');
            }
            line.push_str(&l.to_string());
        }
        for (i, v) in ex.features.iter() {
            line.push(' ');
            line.push_str(&format!("{i}:{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

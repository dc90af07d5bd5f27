//! Local transition counting and row normalization.
//!
//! Counts are kept as integers until the very end: summing counts from disjoint
//! record sets is exact, which is what lets the federated matrix equal the
//! centrally pooled one.

use std::ops::AddAssign;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::dataset::{Dataset, TimeSeriesRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Tolerance on row sums of a stochastic matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

const RECORDS_PER_TASK: usize = 256;

/// Grid distance between two observed slots that counts as one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagPolicy {
    count_lag: usize,
}

impl LagPolicy {
    pub fn new(count_lag: usize) -> Result<Self> {
        if count_lag == 0 {
            return Err(Error::Config("count lag must be at least 1".into()));
        }
        Ok(Self { count_lag })
    }

    pub fn count_lag(&self) -> usize {
        self.count_lag
    }
}

impl Default for LagPolicy {
    fn default() -> Self {
        Self { count_lag: 1 }
    }
}

/// Square matrix of transition counts for one feature, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<u64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Dataset(format!(
                "count matrix of size {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dataset("count matrix rows must form a square".into()));
        }
        Self::from_row_major(n, rows.into_iter().flatten().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.data[from * self.n + to]
    }

    pub fn increment(&mut self, from: usize, to: usize) {
        self.data[from * self.n + to] += 1;
    }

    pub fn row(&self, from: usize) -> &[u64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.data.chunks(self.n).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }
}

/// Per-feature transition counts: the integer precursor of a transition matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    features: Vec<CountMatrix>,
}

impl TransitionCounts {
    pub fn zeros(bin_counts: &[usize]) -> Self {
        Self {
            features: bin_counts.iter().map(|&n| CountMatrix::zeros(n)).collect(),
        }
    }

    pub fn for_scheme(scheme: &BinningScheme) -> Self {
        Self::zeros(&scheme.bin_counts())
    }

    pub fn from_matrices(features: Vec<CountMatrix>) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &[CountMatrix] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &CountMatrix {
        &self.features[index]
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.features.iter().map(CountMatrix::n).collect()
    }

    pub fn total_transitions(&self) -> u64 {
        self.features.iter().map(CountMatrix::total).sum()
    }

    /// Length of the flattened form, `sum over features of n * n`.
    pub fn flat_len(&self) -> usize {
        self.features.iter().map(|m| m.n * m.n).sum()
    }

    /// Feature-major, then row-major flattening.
    pub fn flatten(&self) -> Vec<u64> {
        self.features
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .collect()
    }

    pub fn unflatten(bin_counts: &[usize], flat: &[u64]) -> Result<Self> {
        let expected: usize = bin_counts.iter().map(|n| n * n).sum();
        if flat.len() != expected {
            return Err(Error::Dataset(format!(
                "flattened counts have {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let features = bin_counts
            .iter()
            .map(|&n| {
                let m = CountMatrix::from_row_major(n, flat[offset..offset + n * n].to_vec());
                offset += n * n;
                m
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { features })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CountsFile {
            features: self
                .features
                .iter()
                .enumerate()
                .map(|(feature, m)| CountsEntry {
                    feature,
                    n: m.n,
                    total_transitions: m.total(),
                    counts: m.rows(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CountsFile = serde_json::from_str(text)?;
        let mut features = Vec::with_capacity(file.features.len());
        for (i, entry) in file.features.into_iter().enumerate() {
            if entry.feature != i {
                return Err(Error::Dataset(format!(
                    "counts entry {i} is labelled feature {}",
                    entry.feature
                )));
            }
            let m = CountMatrix::from_rows(entry.counts)?;
            if m.n != entry.n || m.total() != entry.total_transitions {
                return Err(Error::Dataset(format!(
                    "counts entry {i}: declared n/total do not match the matrix"
                )));
            }
            features.push(m);
        }
        Ok(Self { features })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl AddAssign<&TransitionCounts> for TransitionCounts {
    /// Entrywise sum. Panics if the shapes differ.
    fn add_assign(&mut self, rhs: &TransitionCounts) {
        assert_eq!(self.bin_counts(), rhs.bin_counts(), "count shapes differ");
        for (a, b) in self.features.iter_mut().zip(&rhs.features) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CountsFile {
    features: Vec<CountsEntry>,
}

#[derive(Serialize, Deserialize)]
struct CountsEntry {
    feature: usize,
    n: usize,
    total_transitions: u64,
    counts: Vec<Vec<u64>>,
}

/// Row-stochastic matrix for one feature, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    /// Validates shape, entry range, and row sums.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Dataset(format!(
                "transition matrix of size {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        for (i, row) in data.chunks(n).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Dataset(format!(
                    "transition matrix row {i} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Dataset(format!(
                    "transition matrix row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dataset("transition matrix rows must form a square".into()));
        }
        Self::from_row_major(n, rows.into_iter().flatten().collect())
    }

    /// Skips the stochasticity check. For scaled or otherwise non-normalized
    /// score matrices; argmax selection never needs normalized rows.
    pub fn from_row_major_unchecked(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Mean over rows of the L1 distance between corresponding rows.
    pub fn mean_row_l1(&self, other: &ProbMatrix) -> f64 {
        assert_eq!(self.n, other.n, "matrix sizes differ");
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        total / self.n as f64
    }
}

/// Per-feature row-stochastic transition matrices (a local or federated model).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    features: Vec<ProbMatrix>,
}

impl TransitionMatrix {
    pub fn new(features: Vec<ProbMatrix>) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &[ProbMatrix] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &ProbMatrix {
        &self.features[index]
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.features.iter().map(ProbMatrix::n).collect()
    }

    /// Average of [`ProbMatrix::mean_row_l1`] over features.
    pub fn mean_row_l1(&self, other: &TransitionMatrix) -> f64 {
        assert_eq!(self.features.len(), other.features.len());
        let sum: f64 = self
            .features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| a.mean_row_l1(b))
            .sum();
        sum / self.features.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MatrixFile {
            features: self
                .features
                .iter()
                .enumerate()
                .map(|(feature, m)| MatrixEntry {
                    feature,
                    n: m.n,
                    rows: m.rows(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MatrixFile = serde_json::from_str(text)?;
        let mut features = Vec::with_capacity(file.features.len());
        for (i, entry) in file.features.into_iter().enumerate() {
            if entry.feature != i {
                return Err(Error::Dataset(format!(
                    "matrix entry {i} is labelled feature {}",
                    entry.feature
                )));
            }
            let m = ProbMatrix::from_rows(entry.rows)?;
            if m.n != entry.n {
                return Err(Error::Dataset(format!("matrix entry {i}: declared n mismatch")));
            }
            features.push(m);
        }
        Ok(Self { features })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    features: Vec<MatrixEntry>,
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    feature: usize,
    n: usize,
    rows: Vec<Vec<f64>>,
}

/// Counts observed `(t, t + lag)` pairs per feature, summed over subjects.
pub fn count_transitions(
    records: &[TimeSeriesRecord],
    scheme: &BinningScheme,
    policy: LagPolicy,
) -> Result<TransitionCounts> {
    count_transitions_with(records, scheme, policy, Execution::default())
}

pub fn count_transitions_with(
    records: &[TimeSeriesRecord],
    scheme: &BinningScheme,
    policy: LagPolicy,
    exec: Execution,
) -> Result<TransitionCounts> {
    let feature_count = scheme.feature_count();
    let window_count = records.first().map_or(0, TimeSeriesRecord::window_count);
    for r in records {
        if r.feature_count() != feature_count {
            return Err(Error::Dataset(format!(
                "subject {}: {} features, binning scheme has {feature_count}",
                r.subject_id,
                r.feature_count()
            )));
        }
        if r.values.iter().any(|s| s.len() != window_count) {
            return Err(Error::Dataset(format!(
                "subject {}: window count differs from {window_count}",
                r.subject_id
            )));
        }
    }

    let chunks: Vec<&[TimeSeriesRecord]> = records.chunks(RECORDS_PER_TASK).collect();
    let partials = exec.try_map(&chunks, |chunk| {
        let mut counts = TransitionCounts::for_scheme(scheme);
        for record in chunk.iter() {
            count_record(record, scheme, policy, &mut counts)?;
        }
        Ok::<_, Error>(counts)
    })?;

    let mut total = TransitionCounts::for_scheme(scheme);
    for p in &partials {
        total += p;
    }
    Ok(total)
}

/// Checks feature names against the scheme before counting.
pub fn count_dataset(
    dataset: &Dataset,
    scheme: &BinningScheme,
    policy: LagPolicy,
) -> Result<TransitionCounts> {
    dataset.check_scheme(scheme)?;
    count_transitions(&dataset.records, scheme, policy)
}

fn count_record(
    record: &TimeSeriesRecord,
    scheme: &BinningScheme,
    policy: LagPolicy,
    counts: &mut TransitionCounts,
) -> Result<()> {
    let lag = policy.count_lag();
    for (f, series) in record.values.iter().enumerate() {
        if series.len() <= lag {
            continue;
        }
        for t in 0..series.len() - lag {
            if let (Some(a), Some(b)) = (series[t], series[t + lag]) {
                let from = scheme.discretize(a, f)?;
                let to = scheme.discretize(b, f)?;
                counts.features[f].increment(from, to);
            }
        }
    }
    Ok(())
}

/// Additively smoothed row normalization. Empty rows without smoothing become uniform.
pub fn normalize(counts: &TransitionCounts, smoothing: f64) -> Result<TransitionMatrix> {
    if !smoothing.is_finite() || smoothing < 0.0 {
        return Err(Error::Config(format!(
            "smoothing must be a finite non-negative number, got {smoothing}"
        )));
    }
    let features = counts
        .features
        .iter()
        .map(|m| {
            let n = m.n;
            let mut data = Vec::with_capacity(n * n);
            for i in 0..n {
                let row = m.row(i);
                let row_sum: u64 = row.iter().sum();
                let denom = row_sum as f64 + n as f64 * smoothing;
                if denom > 0.0 {
                    data.extend(row.iter().map(|&c| (c as f64 + smoothing) / denom));
                } else {
                    data.extend(std::iter::repeat_n(1.0 / n as f64, n));
                }
            }
            ProbMatrix { n, data }
        })
        .collect();
    Ok(TransitionMatrix { features })
}

//! Markov imputation of missing cells, plus the local-mean baseline.
//!
//! A gap is a maximal run of missing slots in one feature of one record. Its
//! bins are chosen as the most probable path under the transition matrix,
//! conditioned on whichever neighbours are observed; ties always go to the
//! lowest bin index. Chosen bins are decoded to their midpoints.

use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::dataset::{Dataset, TimeSeriesRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::transitions::{ProbMatrix, TransitionMatrix};

/// Lowest index among the maxima.
fn argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, s) in scores.into_iter().enumerate() {
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

/// `argmax_j T(left, j) * T(j, right)` for a single missing slot.
pub fn impute_bidirectional(t: &ProbMatrix, left: usize, right: usize) -> usize {
    argmax((0..t.n()).map(|j| t.get(left, j) * t.get(j, right)))
}

/// `argmax_j T(left, j)`.
pub fn impute_forward(t: &ProbMatrix, left: usize) -> usize {
    argmax(t.row(left).iter().copied())
}

/// `argmax_j T(j, right)`.
pub fn impute_backward(t: &ProbMatrix, right: usize) -> usize {
    argmax((0..t.n()).map(|j| t.get(j, right)))
}

/// Most-targeted bin, `argmax_j sum_i T(i, j)`. Used when a feature has no
/// observed cell at all.
pub fn most_targeted_bin(t: &ProbMatrix) -> usize {
    argmax((0..t.n()).map(|j| (0..t.n()).map(|i| t.get(i, j)).sum::<f64>()))
}

/// A maximal run of missing slots with its observed context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub feature: usize,
    pub start: usize,
    pub end: usize,
    pub left_bin: Option<usize>,
    pub right_bin: Option<usize>,
}

impl Gap {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapFill {
    pub bins: Vec<usize>,
    /// Set when neither neighbour was observed.
    pub no_context: bool,
}

/// Fills a gap with the most probable bin path.
///
/// Path score is `T(left, j1) * T(j1, j2) * ... * T(jL, right)`, dropping the
/// factor for an absent neighbour. A backward max-product pass computes the
/// best suffix score from each state; the forward walk then picks the lowest
/// index attaining the optimum at every step, which yields the
/// lexicographically smallest optimal path.
pub fn impute_gap(t: &ProbMatrix, gap: &Gap) -> GapFill {
    let len = gap.len();
    let n = t.n();
    if gap.left_bin.is_none() && gap.right_bin.is_none() {
        return GapFill {
            bins: vec![most_targeted_bin(t); len],
            no_context: true,
        };
    }

    // suffix[k][j]: best product of the factors after slot k given bin j at slot k.
    let mut suffix = vec![vec![1.0; n]; len];
    if let Some(r) = gap.right_bin {
        for (j, s) in suffix[len - 1].iter_mut().enumerate() {
            *s = t.get(j, r);
        }
    }
    for k in (0..len - 1).rev() {
        let (head, tail) = suffix.split_at_mut(k + 1);
        let next = &tail[0];
        for (j, s) in head[k].iter_mut().enumerate() {
            *s = (0..n)
                .map(|j2| t.get(j, j2) * next[j2])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }

    // The prefix product matters once it hits zero: every continuation then
    // ties and the walk must fall back to the lowest bins.
    let mut bins = Vec::with_capacity(len);
    let mut prev = gap.left_bin;
    let mut prefix = 1.0;
    for step in &suffix {
        let factor = |j: usize| prev.map_or(1.0, |p| t.get(p, j));
        let j = argmax((0..n).map(|j| prefix * (factor(j) * step[j])));
        prefix *= factor(j);
        bins.push(j);
        prev = Some(j);
    }
    GapFill {
        bins,
        no_context: false,
    }
}

/// Scans one feature of a record left to right for maximal missing runs.
pub fn find_gaps(
    record: &TimeSeriesRecord,
    feature: usize,
    scheme: &BinningScheme,
) -> Result<Vec<Gap>> {
    let series = &record.values[feature];
    let mut gaps = Vec::new();
    let mut t = 0;
    while t < series.len() {
        if series[t].is_some() {
            t += 1;
            continue;
        }
        let start = t;
        while t < series.len() && series[t].is_none() {
            t += 1;
        }
        let end = t - 1;
        let left_bin = match start.checked_sub(1).and_then(|p| series[p]) {
            Some(v) => Some(scheme.discretize(v, feature)?),
            None => None,
        };
        let right_bin = match series.get(end + 1).copied().flatten() {
            Some(v) => Some(scheme.discretize(v, feature)?),
            None => None,
        };
        gaps.push(Gap {
            feature,
            start,
            end,
            left_bin,
            right_bin,
        });
    }
    Ok(gaps)
}

/// Per-record bookkeeping written to the imputation sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordReport {
    pub subject_id: String,
    pub imputed_cells: usize,
    pub gaps: Vec<Gap>,
    /// Features that had no observed cell, filled with the most-targeted bin.
    pub no_context_features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSidecar {
    pub records: Vec<RecordReport>,
    pub total_imputed_cells: usize,
    pub total_gaps: usize,
    pub records_with_warnings: usize,
}

impl ImputationSidecar {
    pub fn new(records: Vec<RecordReport>) -> Self {
        Self {
            total_imputed_cells: records.iter().map(|r| r.imputed_cells).sum(),
            total_gaps: records.iter().map(|r| r.gaps.len()).sum(),
            records_with_warnings: records
                .iter()
                .filter(|r| !r.no_context_features.is_empty())
                .count(),
            records,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_dims(record: &TimeSeriesRecord, t: &TransitionMatrix, scheme: &BinningScheme) -> Result<()> {
    if record.feature_count() != scheme.feature_count() || t.features().len() != scheme.feature_count()
    {
        return Err(Error::Dataset(format!(
            "subject {}: {} features, scheme has {}, matrix has {}",
            record.subject_id,
            record.feature_count(),
            scheme.feature_count(),
            t.features().len()
        )));
    }
    if t.bin_counts() != scheme.bin_counts() {
        return Err(Error::Dataset(
            "transition matrix bin counts do not match the binning scheme".into(),
        ));
    }
    Ok(())
}

/// Replaces every missing cell of a record; observed cells are copied untouched.
pub fn impute_series(
    record: &TimeSeriesRecord,
    t: &TransitionMatrix,
    scheme: &BinningScheme,
) -> Result<(TimeSeriesRecord, RecordReport)> {
    check_dims(record, t, scheme)?;
    let mut out = record.clone();
    let mut report = RecordReport {
        subject_id: record.subject_id.clone(),
        imputed_cells: 0,
        gaps: Vec::new(),
        no_context_features: Vec::new(),
    };
    for f in 0..record.feature_count() {
        for gap in find_gaps(record, f, scheme)? {
            let fill = impute_gap(t.feature(f), &gap);
            if fill.no_context {
                report.no_context_features.push(f);
            }
            for (slot, bin) in (gap.start..=gap.end).zip(fill.bins) {
                out.values[f][slot] = Some(scheme.bin_midpoint(bin, f)?);
            }
            report.imputed_cells += gap.len();
            report.gaps.push(gap);
        }
    }
    Ok((out, report))
}

/// Imputes every record of a dataset with a shared matrix.
pub fn impute_dataset(
    dataset: &Dataset,
    t: &TransitionMatrix,
    scheme: &BinningScheme,
) -> Result<(Dataset, ImputationSidecar)> {
    impute_dataset_with(dataset, t, scheme, Execution::default())
}

pub fn impute_dataset_with(
    dataset: &Dataset,
    t: &TransitionMatrix,
    scheme: &BinningScheme,
    exec: Execution,
) -> Result<(Dataset, ImputationSidecar)> {
    dataset.check_scheme(scheme)?;
    let results = exec.try_map(&dataset.records, |r| impute_series(r, t, scheme))?;
    let (records, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((
        Dataset {
            features: dataset.features.clone(),
            window_count: dataset.window_count,
            records,
        },
        ImputationSidecar::new(reports),
    ))
}

/// Per-feature means over the observed cells of `training`. Features with no
/// observation get the centre of their configured range.
pub fn feature_means(training: &[TimeSeriesRecord], scheme: &BinningScheme) -> Result<Vec<f64>> {
    let fc = scheme.feature_count();
    let mut sums = vec![0.0; fc];
    let mut counts = vec![0usize; fc];
    for r in training {
        if r.feature_count() != fc {
            return Err(Error::Dataset(format!(
                "subject {}: {} features, scheme has {fc}",
                r.subject_id,
                r.feature_count()
            )));
        }
        for (f, series) in r.values.iter().enumerate() {
            for v in series.iter().flatten() {
                sums[f] += v;
                counts[f] += 1;
            }
        }
    }
    Ok((0..fc)
        .map(|f| {
            if counts[f] == 0 {
                scheme.features()[f].range_midpoint()
            } else {
                sums[f] / counts[f] as f64
            }
        })
        .collect())
}

/// Local-mean baseline: each missing cell gets its feature's mean over `training`.
pub fn impute_local_mean(
    records: &[TimeSeriesRecord],
    training: &[TimeSeriesRecord],
    scheme: &BinningScheme,
) -> Result<Vec<TimeSeriesRecord>> {
    let means = feature_means(training, scheme)?;
    records
        .iter()
        .map(|r| {
            if r.feature_count() != means.len() {
                return Err(Error::Dataset(format!(
                    "subject {}: {} features, scheme has {}",
                    r.subject_id,
                    r.feature_count(),
                    means.len()
                )));
            }
            let mut out = r.clone();
            for (series, mean) in out.values.iter_mut().zip(&means) {
                for cell in series.iter_mut().filter(|c| c.is_none()) {
                    *cell = Some(*mean);
                }
            }
            Ok(out)
        })
        .collect()
}

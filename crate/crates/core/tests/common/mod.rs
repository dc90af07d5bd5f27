//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use fedmarkov::binning::BinningScheme;
use fedmarkov::dataset::TimeSeriesRecord;
use fedmarkov::transitions::ProbMatrix;
use rand::Rng;

pub fn random_stochastic<R: Rng>(n: usize, rng: &mut R) -> ProbMatrix {
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-6).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.iter().map(|x| x / s));
    }
    ProbMatrix::from_row_major(n, data).unwrap()
}

/// Rows drawn from multiples of 1/4, so products are exact and ties are common.
pub fn random_dyadic<R: Rng>(n: usize, rng: &mut R) -> ProbMatrix {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for _ in 0..4 {
            data[i * n + rng.gen_range(0..n)] += 0.25;
        }
    }
    ProbMatrix::from_row_major(n, data).unwrap()
}

/// First index (in scan order) whose score strictly exceeds all earlier ones.
pub fn scan_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = j;
        }
    }
    best
}

pub fn oracle_bidirectional(t: &ProbMatrix, left: usize, right: usize) -> usize {
    let scores: Vec<f64> = (0..t.n()).map(|j| t.get(left, j) * t.get(j, right)).collect();
    scan_argmax(&scores)
}

/// Enumerates all n^L paths in lexicographic order and keeps the first best.
/// The path score is multiplied from the right end inward.
pub fn oracle_gap(
    t: &ProbMatrix,
    len: usize,
    left: Option<usize>,
    right: Option<usize>,
) -> Vec<usize> {
    let n = t.n();
    let total = n.pow(len as u32);
    let mut best_path = vec![0; len];
    let mut best_score = f64::NEG_INFINITY;
    let mut path = vec![0; len];
    for code in 0..total {
        let mut c = code;
        for k in (0..len).rev() {
            path[k] = c % n;
            c /= n;
        }
        let mut acc = match right {
            Some(r) => t.get(path[len - 1], r),
            None => 1.0,
        };
        for k in (0..len - 1).rev() {
            acc *= t.get(path[k], path[k + 1]);
        }
        if let Some(l) = left {
            acc *= t.get(l, path[0]);
        }
        if acc > best_score {
            best_score = acc;
            best_path.copy_from_slice(&path);
        }
    }
    best_path
}

/// Direct nested-loop transition counter over (subject, feature, t).
pub fn oracle_counts(records: &[TimeSeriesRecord], edges: &[Vec<f64>]) -> Vec<Vec<Vec<u64>>> {
    let mut counts: Vec<Vec<Vec<u64>>> = edges
        .iter()
        .map(|e| vec![vec![0; e.len() - 1]; e.len() - 1])
        .collect();
    let bin = |e: &[f64], v: f64| -> usize {
        let n = e.len() - 1;
        let mut b = 0;
        while b + 1 < n && v >= e[b + 1] {
            b += 1;
        }
        b
    };
    for r in records {
        for (f, series) in r.values.iter().enumerate() {
            for t in 0..series.len().saturating_sub(1) {
                if let (Some(a), Some(b)) = (series[t], series[t + 1]) {
                    counts[f][bin(&edges[f], a)][bin(&edges[f], b)] += 1;
                }
            }
        }
    }
    counts
}

pub fn scheme_edges(scheme: &BinningScheme) -> Vec<Vec<f64>> {
    scheme.features().iter().map(|f| f.edges().to_vec()).collect()
}

pub fn random_records<R: Rng>(
    rng: &mut R,
    subjects: usize,
    features: usize,
    windows: usize,
    missing: f64,
    lo: f64,
    hi: f64,
) -> Vec<TimeSeriesRecord> {
    (0..subjects)
        .map(|s| {
            let values = (0..features)
                .map(|_| {
                    (0..windows)
                        .map(|_| (rng.gen::<f64>() >= missing).then(|| rng.gen_range(lo..hi)))
                        .collect()
                })
                .collect();
            TimeSeriesRecord::new(format!("s{s}"), values)
        })
        .collect()
}

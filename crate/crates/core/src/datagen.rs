//! Synthetic ground-truth series with known transition dynamics.
//!
//! Each subject's bin path is sampled from an initial distribution and a
//! per-feature ground-truth transition matrix; values are drawn uniformly inside
//! the sampled bin, so midpoint decoding always carries some error. Observed
//! data is then derived by grid downsampling (`t mod interval != 0` removed) and
//! independent MCAR removal.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{BinningScheme, FeatureRange, DEFAULT_BIN_COUNT};
use crate::dataset::{Dataset, TimeSeriesRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::transitions::{ProbMatrix, TransitionMatrix};

pub const DEFAULT_WINDOW_COUNT: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub features: Vec<FeatureSpec>,
    pub window_count: usize,
    pub bins: usize,
    /// Ground-truth transition matrix per feature.
    pub transitions: Vec<ProbMatrix>,
    /// Initial bin distribution per feature.
    pub initial: Vec<Vec<f64>>,
    pub subjects_per_client: usize,
    pub mcar_rate: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    features: Vec<FeatureSpec>,
    #[serde(default = "default_windows")]
    window_count: usize,
    #[serde(default = "default_bins")]
    bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transitions: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<Vec<f64>>>,
    subjects_per_client: usize,
    #[serde(default)]
    mcar_rate: f64,
    #[serde(default)]
    seed: u64,
}

fn default_windows() -> usize {
    DEFAULT_WINDOW_COUNT
}

fn default_bins() -> usize {
    DEFAULT_BIN_COUNT
}

const VITALS: [(&str, f64, f64); 6] = [
    ("heart_rate", 30.0, 200.0),
    ("sbp", 60.0, 220.0),
    ("resp_rate", 5.0, 45.0),
    ("temperature", 34.0, 42.0),
    ("spo2", 70.0, 100.0),
    ("lactate", 0.0, 10.0),
];

/// Feature list cycling through a few vital-sign ranges.
pub fn default_features(count: usize) -> Vec<FeatureSpec> {
    (0..count)
        .map(|i| {
            let (name, min, max) = VITALS[i % VITALS.len()];
            let name = if i < VITALS.len() {
                name.to_string()
            } else {
                format!("{name}_{}", i / VITALS.len())
            };
            FeatureSpec { name, min, max }
        })
        .collect()
}

fn derived_rng(seed: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"fedmarkov/datagen/");
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

/// Banded, slightly drifting transition matrix: mass concentrates within a
/// bin or two of the current state, as in slowly varying vital signs.
pub fn banded_transition_matrix<R: Rng>(n: usize, rng: &mut R) -> ProbMatrix {
    let drift: f64 = rng.gen_range(-0.4..0.4);
    let width: f64 = rng.gen_range(0.8..1.3);
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let weights: Vec<f64> = (0..n)
            .map(|j| {
                let d = j as f64 - i as f64 - drift;
                (-(d * d) / (2.0 * width * width)).exp() * rng.gen_range(0.75..1.25) + 1e-3
            })
            .collect();
        let total: f64 = weights.iter().sum();
        data.extend(weights.iter().map(|w| w / total));
    }
    ProbMatrix::from_row_major(n, data).expect("normalized rows")
}

impl GeneratorSpec {
    /// A spec with random banded ground-truth matrices and near-uniform
    /// initial distributions, all derived from `seed`.
    pub fn synthetic(
        feature_count: usize,
        bins: usize,
        subjects_per_client: usize,
        mcar_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if feature_count == 0 {
            return Err(Error::Config("need at least one feature".into()));
        }
        if bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
        }
        let mut rng = derived_rng(seed, "ground-truth", &[]);
        let transitions = (0..feature_count)
            .map(|_| banded_transition_matrix(bins, &mut rng))
            .collect();
        let initial = (0..feature_count)
            .map(|_| {
                let w: Vec<f64> = (0..bins).map(|_| rng.gen_range(0.5..1.5)).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            })
            .collect();
        let spec = Self {
            features: default_features(feature_count),
            window_count: DEFAULT_WINDOW_COUNT,
            bins,
            transitions,
            initial,
            subjects_per_client,
            mcar_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fc = self.features.len();
        if fc == 0 || self.window_count == 0 || self.bins < 2 {
            return Err(Error::Config(
                "generator needs ≥1 feature, ≥1 window and ≥2 bins".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.mcar_rate) {
            return Err(Error::Config(format!(
                "mcar_rate must lie in [0, 1), got {}",
                self.mcar_rate
            )));
        }
        if self.transitions.len() != fc || self.initial.len() != fc {
            return Err(Error::Config(
                "one transition matrix and one initial distribution per feature required".into(),
            ));
        }
        if self.transitions.iter().any(|t| t.n() != self.bins) {
            return Err(Error::Config("ground-truth matrix size differs from bins".into()));
        }
        for pi in &self.initial {
            let sum: f64 = pi.iter().sum();
            if pi.len() != self.bins || pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(
                    "initial distribution must have one probability per bin summing to 1".into(),
                ));
            }
        }
        self.scheme()?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<BinningScheme> {
        BinningScheme::new(
            self.features
                .iter()
                .map(|f| FeatureRange {
                    name: f.name.clone(),
                    min: f.min,
                    max: f.max,
                    n: self.bins,
                })
                .collect(),
        )
    }

    pub fn ground_truth_matrix(&self) -> TransitionMatrix {
        TransitionMatrix::new(self.transitions.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SpecFile {
            features: self.features.clone(),
            window_count: self.window_count,
            bins: self.bins,
            transitions: Some(self.transitions.iter().map(ProbMatrix::rows).collect()),
            initial: Some(self.initial.clone()),
            subjects_per_client: self.subjects_per_client,
            mcar_rate: self.mcar_rate,
            seed: self.seed,
        })?)
    }

    /// Missing `transitions`/`initial` are synthesized from the seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpecFile = serde_json::from_str(text)?;
        let fallback = GeneratorSpec::synthetic(
            file.features.len(),
            file.bins,
            file.subjects_per_client,
            file.mcar_rate,
            file.seed,
        )?;
        let transitions = match file.transitions {
            Some(ts) => ts
                .into_iter()
                .map(|rows| ProbMatrix::from_rows(rows).map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()?,
            None => fallback.transitions,
        };
        let spec = Self {
            features: file.features,
            window_count: file.window_count,
            bins: file.bins,
            transitions,
            initial: file.initial.unwrap_or(fallback.initial),
            subjects_per_client: file.subjects_per_client,
            mcar_rate: file.mcar_rate,
            seed: file.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Observed data for one client together with its fully observed truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedClient {
    pub observed: Dataset,
    pub truth: Dataset,
}

pub fn generate_client_data(
    spec: &GeneratorSpec,
    interval_hours: usize,
    client_index: u64,
) -> Result<GeneratedClient> {
    generate_client_data_with(spec, interval_hours, client_index, Execution::default())
}

pub fn generate_client_data_with(
    spec: &GeneratorSpec,
    interval_hours: usize,
    client_index: u64,
    exec: Execution,
) -> Result<GeneratedClient> {
    spec.validate()?;
    if interval_hours == 0 {
        return Err(Error::Config("interval_hours must be at least 1".into()));
    }
    let scheme = spec.scheme()?;
    let rows: Vec<Vec<WeightedIndex<f64>>> = spec
        .transitions
        .iter()
        .map(|t| {
            (0..t.n())
                .map(|i| WeightedIndex::new(t.row(i)).expect("stochastic row"))
                .collect()
        })
        .collect();
    let initial: Vec<WeightedIndex<f64>> = spec
        .initial
        .iter()
        .map(|pi| WeightedIndex::new(pi).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;

    let pairs = exec.map_range(spec.subjects_per_client, |s| {
        let subject_id = format!("c{client_index}-s{s:05}");
        let mut truth_rng = derived_rng(spec.seed, "truth", &[client_index, s as u64]);
        let mut miss_rng = derived_rng(spec.seed, "mcar", &[client_index, s as u64]);
        let mut truth = Vec::with_capacity(spec.features.len());
        let mut observed = Vec::with_capacity(spec.features.len());
        for (f, bins) in scheme.features().iter().enumerate() {
            let mut series = Vec::with_capacity(spec.window_count);
            let mut obs = Vec::with_capacity(spec.window_count);
            let mut b = initial[f].sample(&mut truth_rng);
            for t in 0..spec.window_count {
                if t > 0 {
                    b = rows[f][b].sample(&mut truth_rng);
                }
                let (lo, hi) = (bins.edges()[b], bins.edges()[b + 1]);
                let mut v = lo + truth_rng.gen::<f64>() * (hi - lo);
                if bins.bin_of(v) != b {
                    v = bins.midpoints()[b];
                }
                series.push(Some(v));
                // Drawn for every cell so that the MCAR pattern does not depend on the interval.
                let dropped = miss_rng.gen::<f64>() < spec.mcar_rate;
                let on_grid = t % interval_hours == 0;
                obs.push(if on_grid && !dropped { Some(v) } else { None });
            }
            truth.push(series);
            observed.push(obs);
        }
        (
            TimeSeriesRecord::new(subject_id.clone(), observed),
            TimeSeriesRecord::new(subject_id, truth),
        )
    });
    let (observed, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let names = scheme.names();
    Ok(GeneratedClient {
        observed: Dataset::new(names.clone(), spec.window_count, observed)?,
        truth: Dataset::new(names, spec.window_count, truth)?,
    })
}

//! Equal-width discretization shared by every participant of a federation.
//!
//! A [`BinningScheme`] is a global configuration artifact: all clients load the
//! same JSON file so that bin `i` means the same value interval everywhere.
//! Bins are left-closed and right-open, except that out-of-range values clamp
//! into the first or last bin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BIN_COUNT: usize = 10;

/// Position of a feature within a dataset, with its display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub index: usize,
    pub name: String,
}

/// Per-feature range and bin count, as written in the scheme JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    #[serde(default = "default_bin_count")]
    pub n: usize,
}

fn default_bin_count() -> usize {
    DEFAULT_BIN_COUNT
}

/// Bin edges and midpoints for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBins {
    range: FeatureRange,
    edges: Vec<f64>,
    midpoints: Vec<f64>,
}

impl FeatureBins {
    fn new(index: usize, range: FeatureRange) -> Result<Self> {
        let FeatureRange { min, max, n, .. } = range;
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::Config(format!(
                "feature {index} ({}): bounds must be finite, got [{min}, {max}]",
                range.name
            )));
        }
        if min >= max {
            return Err(Error::Config(format!(
                "feature {index} ({}): min {min} must be below max {max}",
                range.name
            )));
        }
        if n < 2 {
            return Err(Error::Config(format!(
                "feature {index} ({}): need at least 2 bins, got {n}",
                range.name
            )));
        }

        let width = max - min;
        let mut edges: Vec<f64> = (0..=n)
            .map(|i| min + width * (i as f64) / (n as f64))
            .collect();
        edges[n] = max;
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "feature {index} ({}): range [{min}, {max}] is too narrow for {n} distinct bins",
                range.name
            )));
        }
        let midpoints: Vec<f64> = edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        // Midpoint decoding must land back in the same bin.
        for (b, m) in midpoints.iter().enumerate() {
            if !(edges[b] <= *m && *m < edges[b + 1]) {
                return Err(Error::Config(format!(
                    "feature {index} ({}): bin {b} too narrow to hold its midpoint",
                    range.name
                )));
            }
        }
        Ok(Self {
            range,
            edges,
            midpoints,
        })
    }

    pub fn name(&self) -> &str {
        &self.range.name
    }

    pub fn bin_count(&self) -> usize {
        self.range.n
    }

    pub fn min(&self) -> f64 {
        self.range.min
    }

    pub fn max(&self) -> f64 {
        self.range.max
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Centre of the configured range; used when a feature has no observations at all.
    pub fn range_midpoint(&self) -> f64 {
        (self.range.min + self.range.max) / 2.0
    }

    /// Maps a finite value to its bin, clamping outside the configured range.
    pub fn bin_of(&self, value: f64) -> usize {
        let n = self.range.n;
        // Number of interior edges at or below the value.
        self.edges[1..n].partition_point(|e| *e <= value)
    }
}

/// Per-feature equal-width binning.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningScheme {
    features: Vec<FeatureBins>,
}

#[derive(Serialize, Deserialize)]
struct SchemeFile {
    features: Vec<FeatureRange>,
}

impl BinningScheme {
    pub fn new(ranges: Vec<FeatureRange>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Config("binning scheme needs at least one feature".into()));
        }
        let features = ranges
            .into_iter()
            .enumerate()
            .map(|(i, r)| FeatureBins::new(i, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { features })
    }

    /// Same range and bin count for every named feature.
    pub fn uniform<S: AsRef<str>>(names: &[S], min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|name| FeatureRange {
                    name: name.as_ref().to_string(),
                    min,
                    max,
                    n,
                })
                .collect(),
        )
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[FeatureBins] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> Result<&FeatureBins> {
        self.features.get(index).ok_or_else(|| {
            Error::Dataset(format!(
                "feature index {index} out of range for scheme with {} features",
                self.features.len()
            ))
        })
    }

    pub fn feature_ids(&self) -> Vec<FeatureId> {
        self.features
            .iter()
            .enumerate()
            .map(|(index, f)| FeatureId {
                index,
                name: f.name().to_string(),
            })
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }

    /// Bin count of every feature, in feature order.
    pub fn bin_counts(&self) -> Vec<usize> {
        self.features.iter().map(FeatureBins::bin_count).collect()
    }

    pub fn discretize(&self, value: f64, feature: usize) -> Result<usize> {
        let bins = self.feature(feature)?;
        if !value.is_finite() {
            return Err(Error::InvalidValue { feature, value });
        }
        Ok(bins.bin_of(value))
    }

    pub fn bin_midpoint(&self, bin: usize, feature: usize) -> Result<f64> {
        let bins = self.feature(feature)?;
        bins.midpoints
            .get(bin)
            .copied()
            .ok_or(Error::BinIndex {
                feature,
                bin,
                bins: bins.bin_count(),
            })
    }

    pub fn ranges(&self) -> Vec<FeatureRange> {
        self.features.iter().map(|f| f.range.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SchemeFile {
            features: self.ranges(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        Self::new(file.features)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

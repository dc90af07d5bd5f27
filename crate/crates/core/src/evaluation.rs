//! Imputation scoring against ground truth and the three-way method comparison.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::datagen::{generate_client_data_with, GeneratedClient, GeneratorSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::federation::{run_federation, run_lmi, ClientConfig, LmiOutcome, RoundParams};
use crate::imputer::impute_local_mean;
use crate::secure_agg::{ClientId, RingConfig, SeedBook};

/// Accuracy and error over the cells that were missing before imputation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub imputed_cells: usize,
    pub correct_bins: usize,
    pub squared_error: f64,
}

impl Score {
    /// `None` when nothing was imputed.
    pub fn bin_accuracy(&self) -> Option<f64> {
        (self.imputed_cells > 0).then(|| self.correct_bins as f64 / self.imputed_cells as f64)
    }

    pub fn value_rmse(&self) -> Option<f64> {
        (self.imputed_cells > 0).then(|| (self.squared_error / self.imputed_cells as f64).sqrt())
    }
}

fn same_shape(a: &Dataset, b: &Dataset, what: &str) -> Result<()> {
    let shape = |d: &Dataset| {
        (
            d.features.clone(),
            d.window_count,
            d.records
                .iter()
                .map(|r| r.subject_id.clone())
                .collect::<Vec<_>>(),
        )
    };
    if shape(a) != shape(b) {
        return Err(Error::Dataset(format!("{what}: dataset shapes differ")));
    }
    Ok(())
}

/// Scores `imputed` on exactly the cells missing in `original`.
pub fn score(
    original: &Dataset,
    imputed: &Dataset,
    truth: &Dataset,
    scheme: &BinningScheme,
) -> Result<Score> {
    same_shape(original, imputed, "imputed vs. original")?;
    same_shape(original, truth, "ground truth vs. original")?;
    let mut s = Score::default();
    for ((o, i), t) in original.records.iter().zip(&imputed.records).zip(&truth.records) {
        for (f, ((os, is), ts)) in o.values.iter().zip(&i.values).zip(&t.values).enumerate() {
            for ((ov, iv), tv) in os.iter().zip(is).zip(ts) {
                if ov.is_some() {
                    continue;
                }
                let (iv, tv) = match (iv, tv) {
                    (Some(iv), Some(tv)) => (*iv, *tv),
                    (None, _) => {
                        return Err(Error::Dataset(format!(
                            "subject {}: cell left missing after imputation",
                            i.subject_id
                        )))
                    }
                    (_, None) => {
                        return Err(Error::Dataset(format!(
                            "subject {}: ground truth is not fully observed",
                            t.subject_id
                        )))
                    }
                };
                s.imputed_cells += 1;
                if scheme.discretize(iv, f)? == scheme.discretize(tv, f)? {
                    s.correct_bins += 1;
                }
                s.squared_error += (iv - tv) * (iv - tv);
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Regular,
    Irregular,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Regular => "regular",
            Scenario::Irregular => "irregular",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regular" => Ok(Scenario::Regular),
            "irregular" => Ok(Scenario::Irregular),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    LocalMean,
    Lmi,
    Fmi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LocalMean, Method::Lmi, Method::Fmi];

    pub fn label(self) -> &'static str {
        match self {
            Method::LocalMean => "local_mean",
            Method::Lmi => "lmi",
            Method::Fmi => "fmi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Scored {
        score: Score,
        /// Mean per-row L1 distance of the matrix used to the ground truth.
        matrix_l1_error: Option<f64>,
    },
    Infeasible,
}

impl Outcome {
    pub fn score(&self) -> Option<&Score> {
        match self {
            Outcome::Scored { score, .. } => Some(score),
            Outcome::Infeasible => None,
        }
    }

    pub fn bin_accuracy(&self) -> Option<f64> {
        self.score().and_then(Score::bin_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientResult {
    pub client: ClientId,
    pub interval_hours: usize,
    pub local_mean: Outcome,
    pub lmi: Outcome,
    pub fmi: Outcome,
}

impl ClientResult {
    pub fn outcome(&self, method: Method) -> &Outcome {
        match method {
            Method::LocalMean => &self.local_mean,
            Method::Lmi => &self.lmi,
            Method::Fmi => &self.fmi,
        }
    }
}

/// Per-client, per-method results for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationReport {
    pub scenario: Scenario,
    pub clients: Vec<ClientResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    BinAccuracy,
    ValueRmse,
    MatrixL1Error,
    ImputedCells,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::BinAccuracy,
        Metric::ValueRmse,
        Metric::MatrixL1Error,
        Metric::ImputedCells,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::BinAccuracy => "bin_accuracy",
            Metric::ValueRmse => "value_rmse",
            Metric::MatrixL1Error => "matrix_l1_error",
            Metric::ImputedCells => "imputed_cells",
        }
    }

    fn value(self, outcome: &Outcome) -> Option<f64> {
        match outcome {
            Outcome::Infeasible => None,
            Outcome::Scored {
                score,
                matrix_l1_error,
            } => match self {
                Metric::BinAccuracy => score.bin_accuracy(),
                Metric::ValueRmse => score.value_rmse(),
                Metric::MatrixL1Error => *matrix_l1_error,
                Metric::ImputedCells => Some(score.imputed_cells as f64),
            },
        }
    }
}

const INFEASIBLE: &str = "INFEASIBLE";
const NOT_AVAILABLE: &str = "n/a";

impl ImputationReport {
    /// Unweighted mean over clients; `None` if any client lacks the metric.
    pub fn mean(&self, method: Method, metric: Metric) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .clients
            .iter()
            .map(|c| metric.value(c.outcome(method)))
            .collect();
        let values = values?;
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    fn cell(outcome: &Outcome, metric: Metric) -> String {
        match (outcome, metric.value(outcome)) {
            (Outcome::Infeasible, _) => INFEASIBLE.into(),
            (_, None) => NOT_AVAILABLE.into(),
            (_, Some(v)) if metric == Metric::ImputedCells => format!("{v:.0}"),
            (_, Some(v)) => format!("{v:.6}"),
        }
    }

    fn mean_cell(&self, method: Method, metric: Metric) -> String {
        match self.mean(method, metric) {
            Some(v) if metric == Metric::ImputedCells => format!("{v:.1}"),
            Some(v) => format!("{v:.6}"),
            None => NOT_AVAILABLE.into(),
        }
    }

    /// Rows laid out like a per-site comparison table: one column per client
    /// plus the mean, one row per (method, metric), led by the interval row.
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        let mut header = vec!["scenario".to_string(), "method".into(), "metric".into()];
        header.extend(self.clients.iter().map(|c| c.client.0.clone()));
        header.push("mean".into());
        rows.push(header);

        let mut interval = vec![self.scenario.to_string(), String::new(), "interval_hours".into()];
        interval.extend(self.clients.iter().map(|c| c.interval_hours.to_string()));
        interval.push(NOT_AVAILABLE.into());
        rows.push(interval);

        for method in Method::ALL {
            for metric in Metric::ALL {
                let mut row = vec![
                    self.scenario.to_string(),
                    method.label().to_string(),
                    metric.label().to_string(),
                ];
                row.extend(self.clients.iter().map(|c| Self::cell(c.outcome(method), metric)));
                row.push(self.mean_cell(method, metric));
                rows.push(row);
            }
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for row in self.table_rows() {
            wtr.write_record(&row)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::Dataset(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Dataset(e.to_string()))
    }

    /// Aligned text table of bin accuracy with the best method per column starred.
    pub fn to_text(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.clients.iter().map(|c| format!("{} ({}h)", c.client, c.interval_hours)));
        header.push("mean".into());

        let best_per_client: Vec<Option<f64>> = self
            .clients
            .iter()
            .map(|c| {
                Method::ALL
                    .iter()
                    .filter_map(|m| c.outcome(*m).bin_accuracy())
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            })
            .collect();
        let best_mean = Method::ALL
            .iter()
            .filter_map(|m| self.mean(*m, Metric::BinAccuracy))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

        let mut rows = vec![header];
        for method in Method::ALL {
            let mut row = vec![method.label().to_string()];
            for (c, best) in self.clients.iter().zip(&best_per_client) {
                let outcome = c.outcome(method);
                row.push(match outcome.bin_accuracy() {
                    Some(v) if Some(v) == *best => format!("{v:.4}*"),
                    Some(v) => format!("{v:.4}"),
                    None if matches!(outcome, Outcome::Infeasible) => INFEASIBLE.into(),
                    None => NOT_AVAILABLE.into(),
                });
            }
            row.push(match self.mean(method, Metric::BinAccuracy) {
                Some(v) if Some(v) == best_mean => format!("{v:.4}*"),
                Some(v) => format!("{v:.4}"),
                None => NOT_AVAILABLE.into(),
            });
            rows.push(row);
        }

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}  (bin accuracy, * = best)", self.scenario);
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Everything needed to reproduce one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub clients: usize,
    pub spec: GeneratorSpec,
    pub smoothing: f64,
    pub ring: RingConfig,
}

/// Experiment settings as accepted in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub scenario: Scenario,
    pub clients: usize,
    pub seed: u64,
    pub bins: usize,
    pub features: usize,
    pub windows: usize,
    pub subjects_per_client: usize,
    pub mcar: f64,
    pub smoothing: f64,
    pub ring_bits: u32,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            scenario: Scenario::Irregular,
            clients: 7,
            seed: 42,
            bins: 10,
            features: 4,
            windows: 6,
            subjects_per_client: 150,
            mcar: 0.2,
            smoothing: 0.0,
            ring_bits: crate::secure_agg::DEFAULT_RING_BITS,
        }
    }
}

impl ExperimentSettings {
    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut spec = GeneratorSpec::synthetic(
            self.features,
            self.bins,
            self.subjects_per_client,
            self.mcar,
            self.seed,
        )?;
        if self.windows == 0 {
            return Err(Error::Config("windows must be at least 1".into()));
        }
        spec.window_count = self.windows;
        Ok(ExperimentConfig {
            scenario: self.scenario,
            clients: self.clients,
            spec,
            smoothing: self.smoothing,
            ring: RingConfig::new(self.ring_bits)?,
        })
    }
}

/// Sampling intervals per client: all 1h, or two random clients at 2h and two at 3h.
pub fn assign_intervals(scenario: Scenario, clients: usize, seed: u64) -> Result<Vec<usize>> {
    match scenario {
        Scenario::Regular => Ok(vec![1; clients]),
        Scenario::Irregular => {
            if clients < 4 {
                return Err(Error::Config(format!(
                    "the irregular scenario needs at least 4 clients, got {clients}"
                )));
            }
            let mut order: Vec<usize> = (0..clients).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E_5A3D_0000_0001);
            order.shuffle(&mut rng);
            let mut intervals = vec![1; clients];
            for (rank, &c) in order.iter().take(4).enumerate() {
                intervals[c] = if rank < 2 { 2 } else { 3 };
            }
            Ok(intervals)
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ImputationReport> {
    run_experiment_with(config, Execution::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, exec: Execution) -> Result<ImputationReport> {
    if config.clients < 2 {
        return Err(Error::Config("an experiment needs at least 2 clients".into()));
    }
    let spec = &config.spec;
    let scheme = spec.scheme()?;
    let truth_matrix = spec.ground_truth_matrix();
    let intervals = assign_intervals(config.scenario, config.clients, spec.seed)?;
    let ids: Vec<ClientId> = (0..config.clients).map(|i| ClientId(format!("c{i}"))).collect();

    let generated: Vec<GeneratedClient> = (0..config.clients)
        .map(|i| generate_client_data_with(spec, intervals[i], i as u64, exec))
        .collect::<Result<_>>()?;
    let configs: Vec<ClientConfig> = ids
        .iter()
        .zip(&generated)
        .zip(&intervals)
        .map(|((id, g), &k)| ClientConfig {
            id: id.clone(),
            dataset: g.observed.clone(),
            interval_hours: k as u32,
        })
        .collect();

    let baselines = exec.try_map(&configs, |client| {
        let g = &generated[configs.iter().position(|c| c.id == client.id).expect("own id")];
        let mean_imputed = Dataset {
            features: g.observed.features.clone(),
            window_count: g.observed.window_count,
            records: impute_local_mean(&g.observed.records, &g.observed.records, &scheme)?,
        };
        let local_mean = Outcome::Scored {
            score: score(&g.observed, &mean_imputed, &g.truth, &scheme)?,
            matrix_l1_error: None,
        };
        let lmi = match run_lmi(client, &scheme, config.smoothing)? {
            LmiOutcome::Infeasible { .. } => Outcome::Infeasible,
            LmiOutcome::Imputed {
                matrix, dataset, ..
            } => Outcome::Scored {
                score: score(&g.observed, &dataset, &g.truth, &scheme)?,
                matrix_l1_error: Some(matrix.mean_row_l1(&truth_matrix)),
            },
        };
        Ok::<_, Error>((local_mean, lmi))
    })?;

    let seeds = SeedBook::provision(spec.seed, &ids)?;
    let params = RoundParams {
        ring: config.ring,
        smoothing: config.smoothing,
        ..RoundParams::default()
    };
    let federated = run_federation(configs, &scheme, &seeds, params)?;
    let fmi_l1 = federated.matrix.mean_row_l1(&truth_matrix);

    let mut clients = Vec::with_capacity(config.clients);
    for (i, (local_mean, lmi)) in baselines.into_iter().enumerate() {
        let outcome = federated
            .clients
            .iter()
            .find(|c| c.id == ids[i])
            .ok_or_else(|| Error::Protocol(format!("no federated result for {}", ids[i])))?;
        let g = &generated[i];
        clients.push(ClientResult {
            client: ids[i].clone(),
            interval_hours: intervals[i],
            local_mean,
            lmi,
            fmi: Outcome::Scored {
                score: score(&g.observed, &outcome.imputed, &g.truth, &scheme)?,
                matrix_l1_error: Some(fmi_l1),
            },
        });
    }
    Ok(ImputationReport {
        scenario: config.scenario,
        clients,
    })
}

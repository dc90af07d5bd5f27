//! Multivariate time series on a fixed window grid, and their CSV form.
//!
//! CSV layout: header `subject_id,window,<feature_1>,...,<feature_F>`, one row
//! per (subject, window), windows 0-based and consecutive, missing cells empty.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::binning::BinningScheme;
use crate::error::{Error, Result};

/// One subject's series. `values[feature][window]`, `None` marks a missing cell.
/// One parsed CSV line: window index and per-feature cells.
type WindowRow = (usize, Vec<Option<f64>>);

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub subject_id: String,
    pub values: Vec<Vec<Option<f64>>>,
}

impl TimeSeriesRecord {
    pub fn new(subject_id: impl Into<String>, values: Vec<Vec<Option<f64>>>) -> Self {
        Self {
            subject_id: subject_id.into(),
            values,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.values.len()
    }

    pub fn window_count(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    fn validate(&self, feature_count: usize, window_count: usize) -> Result<()> {
        if self.values.len() != feature_count {
            return Err(Error::Dataset(format!(
                "subject {}: {} features, expected {feature_count}",
                self.subject_id,
                self.values.len()
            )));
        }
        for (f, series) in self.values.iter().enumerate() {
            if series.len() != window_count {
                return Err(Error::Dataset(format!(
                    "subject {} feature {f}: {} windows, expected {window_count}",
                    self.subject_id,
                    series.len()
                )));
            }
            if let Some(v) = series.iter().flatten().find(|v| !v.is_finite()) {
                return Err(Error::InvalidValue {
                    feature: f,
                    value: *v,
                });
            }
        }
        Ok(())
    }
}

/// A client's records, all sharing one feature set and window count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<String>,
    pub window_count: usize,
    pub records: Vec<TimeSeriesRecord>,
}

impl Dataset {
    pub fn new(
        features: Vec<String>,
        window_count: usize,
        records: Vec<TimeSeriesRecord>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Dataset("dataset needs at least one feature".into()));
        }
        if window_count == 0 {
            return Err(Error::Dataset("window_count must be at least 1".into()));
        }
        for r in &records {
            r.validate(features.len(), window_count)?;
        }
        Ok(Self {
            features,
            window_count,
            records,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn missing_count(&self) -> usize {
        self.records.iter().map(TimeSeriesRecord::missing_count).sum()
    }

    /// Fails unless the dataset's features line up with the scheme's.
    pub fn check_scheme(&self, scheme: &BinningScheme) -> Result<()> {
        let names = scheme.names();
        if names != self.features {
            return Err(Error::Dataset(format!(
                "dataset features {:?} do not match binning scheme features {:?}",
                self.features, names
            )));
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "subject_id" || &header[1] != "window" {
            return Err(Error::Dataset(
                "CSV header must start with subject_id,window followed by feature columns".into(),
            ));
        }
        let features: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let feature_count = features.len();

        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<WindowRow>> = HashMap::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let line = line + 2;
            if row.len() != feature_count + 2 {
                return Err(Error::Dataset(format!(
                    "line {line}: {} fields, expected {}",
                    row.len(),
                    feature_count + 2
                )));
            }
            let subject = row[0].to_string();
            let window: usize = row[1].trim().parse().map_err(|_| {
                Error::Dataset(format!("line {line}: bad window index {:?}", &row[1]))
            })?;
            let cells = row
                .iter()
                .skip(2)
                .enumerate()
                .map(|(f, cell)| parse_cell(cell, f, line))
                .collect::<Result<Vec<_>>>()?;
            rows.entry(subject.clone())
                .or_insert_with(|| {
                    order.push(subject);
                    Vec::new()
                })
                .push((window, cells));
        }

        let mut window_count = None;
        let mut records = Vec::with_capacity(order.len());
        for subject in order {
            let mut windows = rows.remove(&subject).unwrap_or_default();
            windows.sort_by_key(|(w, _)| *w);
            if windows.iter().enumerate().any(|(i, (w, _))| *w != i) {
                return Err(Error::Dataset(format!(
                    "subject {subject}: windows must be consecutive from 0"
                )));
            }
            let count = *window_count.get_or_insert(windows.len());
            if count != windows.len() {
                return Err(Error::Dataset(format!(
                    "subject {subject}: {} windows, expected {count}",
                    windows.len()
                )));
            }
            let mut values = vec![Vec::with_capacity(count); feature_count];
            for (_, cells) in windows {
                for (f, cell) in cells.into_iter().enumerate() {
                    values[f].push(cell);
                }
            }
            records.push(TimeSeriesRecord::new(subject, values));
        }
        let window_count = window_count
            .ok_or_else(|| Error::Dataset("CSV contains no data rows".into()))?;
        Self::new(features, window_count, records)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["subject_id".to_string(), "window".to_string()];
        header.extend(self.features.iter().cloned());
        wtr.write_record(&header)?;
        for r in &self.records {
            for w in 0..self.window_count {
                let mut row = Vec::with_capacity(self.features.len() + 2);
                row.push(r.subject_id.clone());
                row.push(w.to_string());
                for series in &r.values {
                    row.push(series[w].map(|v| v.to_string()).unwrap_or_default());
                }
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Dataset(e.to_string()))
    }
}

fn parse_cell(cell: &str, feature: usize, line: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let value: f64 = cell
        .parse()
        .map_err(|_| Error::Dataset(format!("line {line}: cannot parse {cell:?} as a number")))?;
    if !value.is_finite() {
        return Err(Error::InvalidValue { feature, value });
    }
    Ok(Some(value))
}

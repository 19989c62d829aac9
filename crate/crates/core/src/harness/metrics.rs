use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectives::LossReport;

/// One evaluation point: the training-batch loss at `step` plus
/// diagnostics on held-out data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: usize,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub term_d: f64,
    pub total: f64,
    /// Accuracy of the active discriminator on held-out samples.
    pub disc_acc: Option<f64>,
    /// Unbiased MMD² between held-out latents and a prior draw.
    pub mmd: Option<f64>,
    /// Exact reference values, keyed by column name.
    #[serde(flatten)]
    pub oracle: BTreeMap<String, f64>,
}

impl MetricRecord {
    pub fn from_report(step: usize, r: &LossReport) -> Self {
        Self {
            step,
            term_a: r.a,
            term_b: r.b,
            term_c: r.c,
            term_d: r.d,
            total: r.total,
            disc_acc: None,
            mmd: None,
            oracle: BTreeMap::new(),
        }
    }
}

/// Append-only log with strictly increasing steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
}

pub const BASE_COLUMNS: [&str; 8] = ["step", "term_a", "term_b", "term_c", "term_d", "total", "disc_acc", "mmd"];

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:?}"))
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, rec: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.step <= last.step {
                return Err(Error::invalid(format!(
                    "metric step {} does not follow step {}",
                    rec.step, last.step
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    /// Appends `other` with its steps shifted by `offset`.
    pub fn extend_shifted(&mut self, other: MetricLog, offset: usize) -> Result<()> {
        for mut r in other.records {
            r.step += offset;
            self.push(r)?;
        }
        Ok(())
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// Oracle column names across all records, sorted.
    pub fn oracle_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.records.iter().flat_map(|r| r.oracle.keys().cloned()).collect();
        cols.sort();
        cols.dedup();
        cols
    }

    /// CSV with the base columns then any oracle columns. Missing values
    /// are empty cells; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> Result<String> {
        let oracle = self.oracle_columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = BASE_COLUMNS.iter().copied().chain(oracle.iter().map(String::as_str)).collect();
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                format!("{:?}", r.term_a),
                format!("{:?}", r.term_b),
                format!("{:?}", r.term_c),
                format!("{:?}", r.term_d),
                format!("{:?}", r.total),
                cell(r.disc_acc),
                cell(r.mmd),
            ];
            row.extend(oracle.iter().map(|k| cell(r.oracle.get(k).copied())));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    /// JSON array of records; missing values are `null`.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Mean of `values[range]`.
pub fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> Option<f64> {
    let s = values.get(range)?;
    if s.is_empty() {
        return None;
    }
    Some(s.iter().sum::<f64>() / s.len() as f64)
}

//! Logged trajectories and their CSV encoding.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Uniformly sampled table of named numeric columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub(crate) fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

impl TimeSeries {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("no column named '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn time(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// Values of a column restricted to `t_from <= t <= t_to`.
    pub fn window(&self, name: &str, t_from: f64, t_to: f64) -> Result<Vec<f64>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("no column named '{name}'")))?;
        Ok(self
            .rows
            .iter()
            .filter(|r| r[0] >= t_from - 1e-9 && r[0] <= t_to + 1e-9)
            .map(|r| r[i])
            .collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| fmt9(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical coverage rate: fraction of samples whose prediction shares at
/// least one element with the gold set.
pub fn ecr<T: PartialEq>(predictions: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold sets",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("coverage of an empty evaluation set"));
    }
    let covered = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.iter().any(|x| g.contains(x)))
        .count();
    Ok(covered as f64 / predictions.len() as f64)
}

/// Average prediction set size.
pub fn apss<T>(predictions: &[Vec<T>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::contract("set size of an empty evaluation set"));
    }
    Ok(predictions.iter().map(Vec::len).sum::<usize>() as f64 / predictions.len() as f64)
}

/// The first `min(k, len)` candidates of every ranked list.
pub fn topk_baseline<T: Clone>(ranked: &[Vec<T>], k: usize) -> Vec<Vec<T>> {
    ranked
        .iter()
        .map(|r| r.iter().take(k).cloned().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub alpha: f64,
    pub method: String,
    /// `None` when the method has no valid configuration at this alpha.
    pub ecr: Option<f64>,
    pub apss: Option<f64>,
    pub n_test: usize,
    pub truncation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| x.to_string())
}

impl MetricsReport {
    pub fn row(&self, alpha: f64, method: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.alpha == alpha && r.method == method)
    }

    /// `alpha,method,ecr,apss,n_test,truncation_count`; absent values are `-`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,method,ecr,apss,n_test,truncation_count\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.alpha,
                r.method,
                cell(r.ecr),
                cell(r.apss),
                r.n_test,
                r.truncation_count
            );
        }
        out
    }

    /// One `alpha,method,metric,value` line per metric.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("alpha,method,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},ecr,{}", r.alpha, r.method, cell(r.ecr));
            let _ = writeln!(out, "{},{},apss,{}", r.alpha, r.method, cell(r.apss));
        }
        out
    }
}

//! Ranking quality against known anomaly labels.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{GawsError, Result};

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub correction: f64,
    pub relative_f_score: f64,
    pub excess_rank: f64,
}

/// Metrics for one ranked collection. `metrics` is `None` when the
/// collection has no anomalies, since every measure is then undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top_k: usize,
    pub n_series: usize,
    pub n_anomalies: usize,
    pub metrics: Option<Metrics>,
}

fn check_truth(ranked: &[String], truth: &BTreeSet<String>) -> Result<()> {
    let known: BTreeSet<&String> = ranked.iter().collect();
    if known.len() != ranked.len() {
        return Err(GawsError::LabelMismatch("ranking lists a series twice".into()));
    }
    match truth.iter().find(|t| !known.contains(t)) {
        Some(t) => Err(GawsError::LabelMismatch(format!("anomaly '{t}' is not in the ranking"))),
        None => Ok(()),
    }
}

/// Precision, recall and F over the first `top_k` ranked ids.
pub fn precision_recall_f(
    ranked: &[String],
    truth: &BTreeSet<String>,
    top_k: usize,
) -> Result<Option<(f64, f64, f64)>> {
    if top_k == 0 || top_k > ranked.len() {
        return Err(GawsError::InvalidArgument(format!(
            "top_k = {top_k} must be in 1..={}",
            ranked.len()
        )));
    }
    check_truth(ranked, truth)?;
    if truth.is_empty() {
        return Ok(None);
    }
    let tp = ranked[..top_k].iter().filter(|id| truth.contains(*id)).count() as f64;
    let p = tp / top_k as f64;
    let r = tp / truth.len() as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok(Some((p, r, f)))
}

/// `1 − 2q/(1 + q)` with `q = min(k_a, top_k)/top_k`: the F-score shortfall
/// forced by having fewer anomalies than ranked slots.
pub fn correction(n_anomalies: usize, top_k: usize) -> f64 {
    let q = n_anomalies.min(top_k) as f64 / top_k as f64;
    1.0 - 2.0 * q / (1.0 + q)
}

pub fn relative_f(f: f64, n_anomalies: usize, top_k: usize) -> f64 {
    f + correction(n_anomalies, top_k)
}

/// `p − max(R)/N`, with `p` the anomaly fraction and `R` the 1-based ranks of
/// the true anomalies.
pub fn excess_rank(ranked: &[String], truth: &BTreeSet<String>) -> Result<Option<f64>> {
    check_truth(ranked, truth)?;
    if truth.is_empty() {
        return Ok(None);
    }
    let n = ranked.len() as f64;
    let deepest = ranked
        .iter()
        .enumerate()
        .filter(|(_, id)| truth.contains(*id))
        .map(|(i, _)| i + 1)
        .max()
        .unwrap_or(0);
    Ok(Some(truth.len() as f64 / n - deepest as f64 / n))
}

pub fn evaluate(ranked: &[String], truth: &BTreeSet<String>, top_k: usize) -> Result<MetricsReport> {
    let prf = precision_recall_f(ranked, truth, top_k)?;
    let excess = excess_rank(ranked, truth)?;
    let metrics = prf.zip(excess).map(|((precision, recall, f_score), excess_rank)| {
        let correction = correction(truth.len(), top_k);
        Metrics {
            precision,
            recall,
            f_score,
            correction,
            relative_f_score: f_score + correction,
            excess_rank,
        }
    });
    Ok(MetricsReport {
        top_k,
        n_series: ranked.len(),
        n_anomalies: truth.len(),
        metrics,
    })
}

/// Replicate averages, grouped by anomaly count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub n_anomalies: usize,
    pub replicates: usize,
    pub mean_relative_f: f64,
    pub mean_abs_excess_rank: f64,
}

/// Averages defined reports per anomaly count; undefined reports are skipped.
pub fn summarize(reports: &[MetricsReport]) -> Vec<BenchmarkRow> {
    let mut groups: HashMap<usize, Vec<Metrics>> = HashMap::new();
    for r in reports {
        if let Some(m) = r.metrics {
            groups.entry(r.n_anomalies).or_default().push(m);
        }
    }
    let mut rows: Vec<BenchmarkRow> = groups
        .into_iter()
        .map(|(k, ms)| {
            let n = ms.len() as f64;
            BenchmarkRow {
                n_anomalies: k,
                replicates: ms.len(),
                mean_relative_f: ms.iter().map(|m| m.relative_f_score).sum::<f64>() / n,
                mean_abs_excess_rank: ms.iter().map(|m| m.excess_rank.abs()).sum::<f64>() / n,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.n_anomalies);
    rows
}

/// Means over all defined reports: `(relative F, |excess rank|)`.
pub fn overall(reports: &[MetricsReport]) -> Option<(f64, f64)> {
    let ms: Vec<Metrics> = reports.iter().filter_map(|r| r.metrics).collect();
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    Some((
        ms.iter().map(|m| m.relative_f_score).sum::<f64>() / n,
        ms.iter().map(|m| m.excess_rank.abs()).sum::<f64>() / n,
    ))
}

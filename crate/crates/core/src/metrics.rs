//! Error metrics and cross-dataset aggregates.

use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;

use crate::error::{Result, XrfmError};

/// Shift used by the shifted geometric mean in all reports.
pub const SGM_SHIFT: f64 = 0.01;

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(XrfmError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// RMSE divided by the population standard deviation of `y_true`.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    let err = rmse(y_true, y_pred)?;
    let sigma = population_std(y_true);
    if !(sigma > 0.0) {
        return Err(XrfmError::ZeroVariance);
    }
    Ok(err / sigma)
}

/// Fraction of positions where the labels differ.
pub fn classification_error<T: PartialEq>(labels_true: &[T], labels_pred: &[T]) -> Result<f64> {
    if labels_true.len() != labels_pred.len() {
        return Err(XrfmError::LengthMismatch(
            labels_true.len(),
            labels_pred.len(),
        ));
    }
    if labels_true.is_empty() {
        return Ok(0.0);
    }
    let wrong = labels_true
        .iter()
        .zip(labels_pred)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / labels_true.len() as f64)
}

/// Shifted geometric mean `exp(mean(log(shift + e_i)))`.
pub fn sgm(errors: &[f64], shift: f64) -> f64 {
    let mean_log = errors.iter().map(|e| (shift + e).ln()).sum::<f64>() / errors.len() as f64;
    mean_log.exp()
}

pub fn arithmetic_mean(errors: &[f64]) -> f64 {
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// Min-max normalizes one dataset's errors across methods. An all-equal map
/// (zero range) yields zeros.
pub fn minmax_normalize(errors: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let min = errors.values().copied().fold(f64::INFINITY, f64::min);
    let max = errors.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        warn!("min-max normalization over a degenerate range; returning zeros");
        return errors.keys().map(|k| (k.clone(), 0.0)).collect();
    }
    errors
        .iter()
        .map(|(k, &e)| {
            let v = if e == max { 1.0 } else { (e - min) / range };
            (k.clone(), v)
        })
        .collect()
}

/// Per-method aggregates over a set of datasets.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub datasets: usize,
    pub sgm: f64,
    pub mean: f64,
    pub normalized_mean: f64,
}

/// Errors keyed by `(dataset, method)`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    pub errors: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn record(&mut self, dataset: &str, method: &str, error: f64) {
        self.errors
            .entry(dataset.to_string())
            .or_default()
            .insert(method.to_string(), error);
    }

    pub fn methods(&self) -> Vec<String> {
        let mut m: Vec<String> = self
            .errors
            .values()
            .flat_map(|per| per.keys().cloned())
            .collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn summarize(&self) -> Vec<MethodSummary> {
        let normalized: BTreeMap<&String, BTreeMap<String, f64>> = self
            .errors
            .iter()
            .map(|(ds, per)| (ds, minmax_normalize(per)))
            .collect();
        self.methods()
            .into_iter()
            .map(|method| {
                let raw: Vec<f64> = self
                    .errors
                    .values()
                    .filter_map(|per| per.get(&method).copied())
                    .collect();
                let norm: Vec<f64> = normalized
                    .values()
                    .filter_map(|per| per.get(&method).copied())
                    .collect();
                MethodSummary {
                    datasets: raw.len(),
                    sgm: sgm(&raw, SGM_SHIFT),
                    mean: arithmetic_mean(&raw),
                    normalized_mean: arithmetic_mean(&norm),
                    method,
                }
            })
            .collect()
    }

    /// `dataset,method,error` rows followed by nothing else; aggregates go to
    /// [`MetricReport::summary_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,error\n");
        for (ds, per) in &self.errors {
            for (method, e) in per {
                out.push_str(&format!("{ds},{method},{e}\n"));
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,datasets,sgm,mean,normalized_mean\n");
        for s in self.summarize() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.method, s.datasets, s.sgm, s.mean, s.normalized_mean
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            errors: &'a BTreeMap<String, BTreeMap<String, f64>>,
            summary: Vec<MethodSummary>,
        }
        serde_json::to_string_pretty(&Doc {
            errors: &self.errors,
            summary: self.summarize(),
        })
        .expect("report serialization")
    }
}

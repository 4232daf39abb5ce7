//! Multi-label ranking and threshold metrics, plus score histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("predictions {predictions:?} and labels {labels:?} differ in shape")]
    ShapeMismatch {
        predictions: Vec<usize>,
        labels: Vec<usize>,
    },
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("no class has a positive label")]
    NoPositives,
    #[error("score and label lists differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Non-interpolated AP: mean of precision@k over the ranks of positives.
/// Scores sort descending with ties kept in index order. Returns `None`
/// when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<Option<f64>, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps ties in ascending index order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1.0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| total / hits as f64))
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "CP")]
    pub cp: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "CF1")]
    pub cf1: f64,
    #[serde(rename = "OP")]
    pub op: f64,
    #[serde(rename = "OR")]
    pub or_: f64,
    #[serde(rename = "OF1")]
    pub of1: f64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Pooled confusion counts over all classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Scores `predictions` (rows = samples, cols = classes) against 0/1
/// `labels`. A prediction counts as positive when it exceeds `tau`.
/// Classes without any positive label are left out of every per-class
/// average; they still contribute false positives to the pooled counts.
pub fn evaluate(predictions: &Tensor, labels: &Tensor, tau: f64) -> Result<MetricReport, MetricsError> {
    if predictions.shape() != labels.shape() || predictions.rank() != 2 {
        return Err(MetricsError::ShapeMismatch {
            predictions: predictions.shape().to_vec(),
            labels: labels.shape().to_vec(),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MetricsError::Threshold(tau));
    }
    let (n, c) = (predictions.rows(), predictions.cols());
    let mut ap_sum = 0.0;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut counted = 0usize;
    let mut pooled = Confusion::default();
    let mut scores = vec![0.0; n];
    let mut ys = vec![0.0; n];
    for k in 0..c {
        let mut conf = Confusion::default();
        for i in 0..n {
            scores[i] = predictions.get(i, k);
            ys[i] = labels.get(i, k);
            let predicted = scores[i] > tau;
            let actual = ys[i] == 1.0;
            match (predicted, actual) {
                (true, true) => conf.tp += 1,
                (true, false) => conf.fp += 1,
                (false, true) => conf.fn_ += 1,
                (false, false) => {}
            }
        }
        pooled.tp += conf.tp;
        pooled.fp += conf.fp;
        pooled.fn_ += conf.fn_;
        if let Some(ap) = average_precision(&scores, &ys)? {
            ap_sum += ap;
            p_sum += ratio(conf.tp, conf.tp + conf.fp);
            r_sum += ratio(conf.tp, conf.tp + conf.fn_);
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(MetricsError::NoPositives);
    }
    let cp = p_sum / counted as f64;
    let cr = r_sum / counted as f64;
    let op = ratio(pooled.tp, pooled.tp + pooled.fp);
    let or_ = ratio(pooled.tp, pooled.tp + pooled.fn_);
    Ok(MetricReport {
        map: ap_sum / counted as f64,
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or_,
        of1: f1(op, or_),
    })
}

/// 50 equal-width bins on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; HISTOGRAM_BINS],
}

impl Histogram {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges() -> Vec<f64> {
        (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect()
    }

    /// `bin_start,bin_end,count` rows under a header line.
    pub fn to_csv(&self) -> String {
        let edges = Self::bin_edges();
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", edges[i], edges[i + 1], count).expect("string write");
        }
        out
    }
}

/// Bins every value; 1.0 lands in the last bin and out-of-range values
/// are clamped into the end bins.
pub fn prediction_histogram(values: &[f64]) -> Histogram {
    let mut counts = [0u64; HISTOGRAM_BINS];
    for &v in values {
        let idx = (v * HISTOGRAM_BINS as f64).floor();
        let idx = if idx.is_nan() { 0 } else { (idx.max(0.0) as usize).min(HISTOGRAM_BINS - 1) };
        counts[idx] += 1;
    }
    Histogram { counts }
}

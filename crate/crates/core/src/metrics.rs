//! Precision-recall curves and average precision.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, thresholds strictly decreasing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn n_thresholds(&self) -> usize {
        self.points.len()
    }

    /// Step-wise area: `sum p_i (r_i - r_{i-1})` with `r_0 = 0`.
    pub fn average_precision(&self) -> ApScore {
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for p in &self.points {
            ap += p.precision * (p.recall - prev_recall);
            prev_recall = p.recall;
        }
        ApScore(ap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct ApScore(pub f64);

impl ApScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    Ok(positives)
}

/// Precision and recall at every distinct score, highest score first. Tied
/// scores form a single threshold group.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    let positives = validate(scores, labels)? as f64;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives,
        });
    }
    Ok(PrCurve { points })
}

pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<ApScore> {
    Ok(pr_curve(scores, labels)?.average_precision())
}

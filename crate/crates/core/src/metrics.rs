//! Segmentation overlap metrics and binary classification metrics/curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;

/// Dice and IoU of two binary masks. Two empty masks score `(1, 1)`.
pub fn dice_iou(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    pred.grid().ensure_same_shape(gt.grid(), "dice/iou")?;
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::Contract("dice/iou expects binary masks".into()));
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (a, b) = (a == 1.0, b == 1.0);
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        return Ok((1.0, 1.0));
    }
    let union = p + g - inter;
    Ok((2.0 * inter as f64 / (p + g) as f64, inter as f64 / union as f64))
}

/// Dice of soft masks after thresholding both at `threshold`.
pub fn dice_at(pred: &Mask, gt: &Mask, threshold: f64) -> Result<f64> {
    Ok(dice_iou(&pred.binarize(threshold)?, &gt.binarize(threshold)?)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts predictions `score ≥ threshold` against labels.
    pub fn from_scores(scores: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = Self::default();
        for &(s, label) in scores {
            match (s >= threshold, label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    if c.total() == 0 {
        return Err(Error::Contract("confusion counts are all zero".into()));
    }
    let mut degenerate = Vec::new();
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        degenerate.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Piecewise-linear curve in the unit square with its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Cumulative `(tp, fp)` after each group of tied scores, highest first.
fn ranked_counts(scores: &[(f64, bool)]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::DataIntegrity(format!("non-finite score {s}")));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = sorted.iter().filter(|s| s.1).count() as u64;
    let neg = sorted.len() as u64 - pos;
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let level = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == level {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    Ok((out, pos, neg))
}

/// ROC curve by threshold sweep over unique scores; AUC by trapezoid.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<Curve> {
    let (steps, pos, neg) = ranked_counts(scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("ROC needs both positive and negative labels".into()));
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(steps.iter().map(|&(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)));
    let area = trapezoid(&points);
    Ok(Curve { points, area })
}

/// Precision-recall curve (x = recall, y = precision), starting at `(0, 1)`.
/// The area is step-interpolated average precision `Σ (Rᵢ − Rᵢ₋₁) Pᵢ`.
pub fn pr_curve(scores: &[(f64, bool)]) -> Result<Curve> {
    let (steps, pos, _) = ranked_counts(scores)?;
    if pos == 0 {
        return Err(Error::Contract("PR curve needs at least one positive".into()));
    }
    let mut points = vec![(0.0, 1.0)];
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &(tp, fp) in &steps {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(Curve { points, area })
}

/// Probability that a random positive outranks a random negative, ties ½.
/// Direct O(P·N) pair count.
pub fn mann_whitney_auc(scores: &[(f64, bool)]) -> Result<f64> {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract("Mann-Whitney needs both labels".into()));
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

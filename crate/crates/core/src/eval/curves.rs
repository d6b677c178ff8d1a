//! Pixel-pooled ROC and precision-recall curves with trapezoid AUC.
//!
//! Curves sweep every unique score as a threshold — exact at this scale, no
//! subsampling. [`mann_whitney_auc`] is an independent rank-statistic route
//! to the same ROC area and stays in the crate as a cross-check.

use serde::Serialize;

use crate::error::{AruError, Result};

#[derive(Clone, Debug, Serialize)]
pub struct Curves {
    /// (threshold, fpr, tpr), threshold descending; includes (0,0) and (1,1) endpoints.
    pub roc: Vec<(f64, f64, f64)>,
    /// (threshold, recall, precision), threshold descending, anchored at recall 0.
    pub pr: Vec<(f64, f64, f64)>,
    /// None when the target has a single class (no negatives or no positives).
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
}

/// Builds both curves from pooled scores and binary labels.
pub fn roc_pr_curves(scores: &[f64], labels: &[u8]) -> Result<Curves> {
    if scores.len() != labels.len() {
        return Err(AruError::ShapeMismatch {
            op: "roc_pr_curves",
            detail: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    if scores.is_empty() {
        return Err(AruError::InvalidArgument("empty score set".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(AruError::InvalidArgument("labels must be binary".into()));
    }
    if scores.iter().any(|s| !s.is_finite() || !(0.0..=1.0).contains(s)) {
        return Err(AruError::InvalidArgument(
            "scores must be probabilities in [0,1]".into(),
        ));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());

    // sweep thresholds at each distinct score: predict positive iff s >= thr
    let mut roc = vec![(f64::INFINITY, 0.0, 0.0)];
    let mut pr = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = if pos > 0 { tp as f64 / pos as f64 } else { 0.0 };
        let fpr = if neg > 0 { fp as f64 / neg as f64 } else { 0.0 };
        roc.push((thr, fpr, tpr));
        let recall = tpr;
        let precision = tp as f64 / (tp + fp) as f64;
        pr.push((thr, recall, precision));
    }

    // conventional anchors: PR starts at recall 0 with the first precision
    // carried back (precision 1 when the top-scored pixel is positive)
    let first_precision = pr.first().map_or(1.0, |&(_, _, p)| p);
    pr.insert(0, (f64::INFINITY, 0.0, first_precision));

    let auc_roc = (pos > 0 && neg > 0).then(|| trapezoid(roc.iter().map(|&(_, x, y)| (x, y))));
    let auc_pr = (pos > 0).then(|| trapezoid(pr.iter().map(|&(_, x, y)| (x, y))));

    Ok(Curves {
        roc,
        pr,
        auc_roc,
        auc_pr,
        positives: pos,
        negatives: neg,
    })
}

fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut area = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (x, y) in points {
        if let Some((px, py)) = prev {
            area += (x - px) * (y + py) / 2.0;
        }
        prev = Some((x, y));
    }
    area
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked concordantly, ties counting half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut concordant = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                concordant += 1.0;
            } else if p == n {
                concordant += 0.5;
            }
        }
    }
    Some(concordant / (pos.len() as f64 * neg.len() as f64))
}

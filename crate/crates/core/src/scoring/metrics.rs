//! Accuracy, support-weighted precision/recall/F1 and macro averages.
//! Zero denominators give 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("no samples to score")]
    Empty,
    #[error("class index {index} out of range for {classes} classes")]
    UnknownClass { index: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub weighted_f1: f64,
    pub macro_pre: f64,
    pub macro_rec: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class counts: (true positives, gold support, predicted count).
fn class_metrics(name: &str, tp: usize, support: usize, predicted: usize) -> ClassMetrics {
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    ClassMetrics {
        class: name.to_string(),
        support,
        predicted,
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

/// Support-weighted and macro means over `per_class`. Macro averages run
/// over classes that occur in either golds or predictions.
fn averages(per_class: &[ClassMetrics]) -> (f64, f64, f64, f64, f64, f64) {
    let total: usize = per_class.iter().map(|c| c.support).sum();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    let active: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0 || c.predicted > 0).collect();
    let macro_avg = |f: fn(&ClassMetrics) -> f64| {
        if active.is_empty() {
            0.0
        } else {
            active.iter().map(|c| f(c)).sum::<f64>() / active.len() as f64
        }
    };
    (
        weighted(|c| c.precision),
        weighted(|c| c.recall),
        weighted(|c| c.f1),
        macro_avg(|c| c.precision),
        macro_avg(|c| c.recall),
        macro_avg(|c| c.f1),
    )
}

/// Single-label metrics. Labels are indices into `classes`.
pub fn compute_single_label_metrics(
    golds: &[usize],
    preds: &[usize],
    classes: &[&str],
) -> Result<MetricsReport, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = classes.len();
    let mut tp = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    for (&g, &p) in golds.iter().zip(preds) {
        for index in [g, p] {
            if index >= k {
                return Err(MetricsError::UnknownClass { index, classes: k });
            }
        }
        support[g] += 1;
        predicted[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| class_metrics(classes[c], tp[c], support[c], predicted[c]))
        .collect();
    let (pre, rec, weighted_f1, macro_pre, macro_rec, macro_f1) = averages(&per_class);
    Ok(MetricsReport {
        n: golds.len(),
        acc: tp.iter().sum::<usize>() as f64 / golds.len() as f64,
        pre,
        rec,
        weighted_f1,
        macro_pre,
        macro_rec,
        macro_f1,
        per_class,
        warnings: Vec::new(),
    })
}

/// Multi-label metrics over `labels.len()` binary labels. Each sample is a
/// set of label indices. Accuracy is exact set match.
pub fn compute_multilabel_metrics(
    gold_sets: &[Vec<usize>],
    pred_sets: &[Vec<usize>],
    labels: &[&str],
) -> Result<MetricsReport, MetricsError> {
    if gold_sets.len() != pred_sets.len() {
        return Err(MetricsError::LengthMismatch {
            golds: gold_sets.len(),
            preds: pred_sets.len(),
        });
    }
    if gold_sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = labels.len();
    let mut tp = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut exact = 0usize;
    for (gold, pred) in gold_sets.iter().zip(pred_sets) {
        let mut g = vec![false; k];
        let mut p = vec![false; k];
        for (set, flags) in [(gold, &mut g), (pred, &mut p)] {
            for &index in set {
                if index >= k {
                    return Err(MetricsError::UnknownClass { index, classes: k });
                }
                flags[index] = true;
            }
        }
        if g == p {
            exact += 1;
        }
        for l in 0..k {
            support[l] += g[l] as usize;
            predicted[l] += p[l] as usize;
            tp[l] += (g[l] && p[l]) as usize;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|l| class_metrics(labels[l], tp[l], support[l], predicted[l]))
        .collect();
    let (pre, rec, weighted_f1, macro_pre, macro_rec, macro_f1) = averages(&per_class);
    let mut warnings = Vec::new();
    if support.iter().all(|&s| s == 0) {
        let w = "no gold label has positive support; weighted precision/recall/F1 reported as 0".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(MetricsReport {
        n: gold_sets.len(),
        acc: exact as f64 / gold_sets.len() as f64,
        pre,
        rec,
        weighted_f1,
        macro_pre,
        macro_rec,
        macro_f1,
        per_class,
        warnings,
    })
}

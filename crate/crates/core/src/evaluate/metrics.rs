use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

/// Rows are true classes, columns predictions, both in (L, M, H) order.
pub type ConfusionMatrix = [[usize; 3]; 3];

pub fn confusion_matrix(y_true: &[ClassLabel], y_pred: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut cm = [[0usize; 3]; 3];
    for (t, p) in y_true.iter().zip(y_pred) {
        cm[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

pub fn add_confusion(acc: &mut ConfusionMatrix, other: &ConfusionMatrix) {
    for i in 0..3 {
        for j in 0..3 {
            acc[i][j] += other[i][j];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// One entry per metric that was 0/0 and reported as 0.
    pub flags: Vec<String>,
}

/// Precision, recall and F1 per class of a square confusion matrix.
pub fn classification_metrics<R: AsRef<[usize]>>(cm: &[R]) -> Result<ClassificationMetrics> {
    let k = cm.len();
    if k == 0 || cm.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::invalid("confusion matrix must be square and non-empty"));
    }
    let at = |i: usize, j: usize| cm[i].as_ref()[j];
    let total: usize = (0..k).map(|i| cm[i].as_ref().iter().sum::<usize>()).sum();
    let trace: usize = (0..k).map(|i| at(i, i)).sum();
    let mut flags = Vec::new();
    let ratio = |num: usize, den: usize, what: &str, flags: &mut Vec<String>| {
        if den == 0 {
            flags.push(what.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(trace, total, "accuracy", &mut flags);
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let predicted: usize = (0..k).map(|i| at(i, c)).sum();
        let support: usize = cm[c].as_ref().iter().sum();
        let precision = ratio(at(c, c), predicted, &format!("precision[{c}]"), &mut flags);
        let recall = ratio(at(c, c), support, &format!("recall[{c}]"), &mut flags);
        let f1 = if precision + recall == 0.0 {
            flags.push(format!("f1[{c}]"));
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(ClassificationMetrics {
        accuracy,
        per_class,
        macro_f1,
        flags,
    })
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme observations within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::invalid("box statistics need at least one value"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    Ok(BoxStats {
        min: s[0],
        q1,
        median,
        q3,
        max: s[s.len() - 1],
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (divide-by-n) standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

//! Support-weighted one-vs-rest classification metrics, reported in percent.

use serde::{Deserialize, Serialize};

use crate::backbones::ComplexityReport;
use crate::error::{Error, Result};
use crate::fusion::argmax;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::shape(labels.len(), predictions.len()));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: y.max(p),
                    classes,
                });
            }
            counts[y][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> usize {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum::<usize>() - self.counts[class][class]
    }

    pub fn false_negatives(&self, class: usize) -> usize {
        self.support(class) - self.counts[class][class]
    }

    pub fn true_negatives(&self, class: usize) -> usize {
        self.total() - self.support(class) - self.false_positives(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted_f1: f64,
    pub weighted_sensitivity: f64,
    pub weighted_specificity: f64,
    /// `NaN` (serialised as `null`) when no class has both positives and negatives.
    #[serde(deserialize_with = "nullable_f64")]
    pub weighted_auc: f64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<ComplexityReport>,
}

fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest ROC area by the trapezoidal rule over every distinct threshold.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Weighted F1, sensitivity, specificity and AUC from per-item class
/// distributions. Predictions are argmax with ties to the lowest class.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape(labels.len(), probs.len()));
    }
    if let Some(p) = probs.iter().find(|p| p.len() != classes) {
        return Err(Error::shape(classes, p.len()));
    }
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let cm = ConfusionMatrix::new(labels, &predictions, classes)?;
    let n = labels.len() as f64;

    let (mut f1, mut sens, mut spec) = (0.0, 0.0, 0.0);
    let (mut auc, mut auc_weight) = (0.0, 0.0);
    for c in 0..classes {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        let w = support as f64 / n;
        let tp = cm.true_positives(c);
        let precision = ratio(tp, tp + cm.false_positives(c), 0.0);
        let recall = ratio(tp, support, 0.0);
        let class_f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let tn = cm.true_negatives(c);
        f1 += w * class_f1;
        sens += w * recall;
        spec += w * ratio(tn, tn + cm.false_positives(c), 1.0);

        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(a) = roc_auc(&scores, &positive) {
            auc += w * a;
            auc_weight += w;
        }
    }
    let accuracy = (0..classes).map(|c| cm.true_positives(c)).sum::<usize>() as f64 / n;
    Ok(MetricsReport {
        weighted_f1: 100.0 * f1,
        weighted_sensitivity: 100.0 * sens,
        weighted_specificity: 100.0 * spec,
        weighted_auc: if auc_weight > 0.0 {
            100.0 * auc / auc_weight
        } else {
            f64::NAN
        },
        accuracy: 100.0 * accuracy,
        n_samples: labels.len(),
        confusion: cm,
        complexity: None,
    })
}

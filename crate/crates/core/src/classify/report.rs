use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at threshold 0 plus the six summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassReport {
    /// Metrics from counts; a ratio with an empty denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize, auc: f64) -> Self {
        let precision = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        Self {
            auc,
            precision,
            sensitivity,
            specificity: ratio(tn, tn + fp),
            f1,
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Single-row table in the column order AUC, Precision, Sensitivity,
    /// Specificity, F1-score, Accuracy, followed by the confusion matrix.
    pub fn to_table(&self, label: &str) -> String {
        format!(
            "Method\tAUC\tPrecision\tSensitivity\tSpecificity\tF1-score\tAccuracy\n\
             {label}\t{:.4}\t{:.2}%\t{:.2}%\t{:.2}%\t{:.2}%\t{:.2}%\n\
             \n\
             \tpred +\tpred -\n\
             actual +\t{}\t{}\n\
             actual -\t{}\t{}\n",
            self.auc,
            100.0 * self.precision,
            100.0 * self.sensitivity,
            100.0 * self.specificity,
            100.0 * self.f1,
            100.0 * self.accuracy,
            self.tp,
            self.fn_,
            self.fp,
            self.tn
        )
    }
}

/// Area under the ROC curve by trapezoids over the distinct score
/// thresholds. Tied scores form one diagonal step, so the area equals the
/// Mann–Whitney statistic `(#{s₊ > s₋} + ½#{s₊ = s₋}) / (n₊n₋)`.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // twice the area, in units of one positive × one negative
    let (mut tp, mut fp, mut twice_area) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] > 0.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
    }
    Ok(twice_area as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Report over pooled scores; a score above 0 predicts the positive class.
pub fn classification_report(scores: &[f64], labels: &[f64]) -> Result<ClassReport> {
    let auc = roc_auc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > 0.0, y > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ClassReport::from_counts(tp, fp, tn, fn_, auc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let y = [1.0, 1.0, -1.0, -1.0];
        let r = classification_report(&[2.0, 1.0, -1.0, -3.0], &y).unwrap();
        for m in [r.auc, r.precision, r.sensitivity, r.specificity, r.f1, r.accuracy] {
            assert_eq!(m, 1.0);
        }
        let r = classification_report(&[-2.0, -1.0, 1.0, 3.0], &y).unwrap();
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn hand_counts() {
        let r = ClassReport::from_counts(83, 17, 40, 10, 0.5);
        assert!((r.precision - 0.83).abs() < 1e-12);
        assert!((r.sensitivity - 83.0 / 93.0).abs() < 1e-12);
        assert!((r.sensitivity - 0.8925).abs() < 1e-4);
        assert!((r.accuracy - 0.82).abs() < 1e-12);
        assert_eq!(r.total(), 150);
    }

    #[test]
    fn ties_count_half() {
        let auc = roc_auc(&[1.0, 1.0], &[1.0, -1.0]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            classification_report(&[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }
}

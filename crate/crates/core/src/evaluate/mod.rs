//! Confusion matrices and micro/macro averaged classification metrics.
//!
//! Micro averages pool the per-class TP/FP/FN/TN counts before dividing:
//!
//! ```text
//! accuracy  = (ΣTP + ΣTN) / Σ(TP + FP + FN + TN)
//! precision = ΣTP / (ΣTP + ΣFP)
//! recall    = ΣTP / (ΣTP + ΣFN)
//! f1        = 2ΣTP / (2ΣTP + ΣFP + ΣFN)
//! ```
//!
//! Macro averages take the mean of the per-class precision, recall and
//! harmonic-mean F1 over the whole label universe (`n` is the matrix size,
//! five for priorities, whether or not a class occurs). Accuracy has the
//! same definition under both averagings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Priority;

pub mod report;

pub use report::{distribution_report, DistributionReport, PhaseTiming, TimingReport};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix must have at least one class")]
    NoClasses,
}

/// Square count matrix, rows are gold labels and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self, EvalError> {
        if classes == 0 {
            return Err(EvalError::NoClasses);
        }
        Ok(ConfusionMatrix {
            classes,
            cells: vec![0; classes * classes],
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, EvalError> {
        let mut cm = Self::new(rows.len())?;
        for (g, row) in rows.iter().enumerate() {
            if row.len() != rows.len() {
                return Err(EvalError::LabelOutOfRange {
                    label: row.len(),
                    classes: rows.len(),
                });
            }
            for (p, &c) in row.iter().enumerate() {
                cm.cells[g * cm.classes + p] = c;
            }
        }
        Ok(cm)
    }

    pub fn from_indices(golds: &[usize], preds: &[usize], classes: usize) -> Result<Self, EvalError> {
        if golds.len() != preds.len() {
            return Err(EvalError::LengthMismatch {
                golds: golds.len(),
                preds: preds.len(),
            });
        }
        let mut cm = Self::new(classes)?;
        for (&g, &p) in golds.iter().zip(preds) {
            for label in [g, p] {
                if label >= classes {
                    return Err(EvalError::LabelOutOfRange { label, classes });
                }
            }
            cm.cells[g * classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.cells[gold * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.cells.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn tp(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    /// Predicted as `class` but gold is something else.
    pub fn fp(&self, class: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, class)).sum::<u64>() - self.tp(class)
    }

    /// Gold is `class` but predicted as something else.
    pub fn fn_(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum::<u64>() - self.tp(class)
    }

    pub fn tn(&self, class: usize) -> u64 {
        self.total() - self.tp(class) - self.fp(class) - self.fn_(class)
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.tp(c)).sum()
    }
}

pub fn confusion(golds: &[Priority], preds: &[Priority]) -> Result<ConfusionMatrix, EvalError> {
    let g: Vec<usize> = golds.iter().map(|p| p.index()).collect();
    let p: Vec<usize> = preds.iter().map(|p| p.index()).collect();
    ConfusionMatrix::from_indices(&g, &p, Priority::COUNT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// How a per-class `0/0` is treated in macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDivision {
    /// The undefined term counts as 0 and stays in the mean.
    #[default]
    Zero,
    /// The class is left out of that metric's mean.
    Exclude,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let (mut tp, mut tn, mut all) = (0u64, 0u64, 0u64);
    for c in 0..cm.classes() {
        tp += cm.tp(c);
        tn += cm.tn(c);
        all += cm.tp(c) + cm.fp(c) + cm.fn_(c) + cm.tn(c);
    }
    ratio(tp + tn, all)
}

pub fn micro_metrics(cm: &ConfusionMatrix) -> Result<Averages, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for c in 0..cm.classes() {
        tp += cm.tp(c);
        fp += cm.fp(c);
        fn_ += cm.fn_(c);
    }
    Ok(Averages {
        accuracy: accuracy(cm),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}

/// Per-class precision, recall and F1; `None` marks a `0/0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
            let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect()
}

fn mean_with(values: impl Iterator<Item = Option<f64>>, classes: usize, policy: ZeroDivision) -> f64 {
    match policy {
        ZeroDivision::Zero => values.map(|v| v.unwrap_or(0.0)).sum::<f64>() / classes as f64,
        ZeroDivision::Exclude => {
            let defined: Vec<f64> = values.flatten().collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        }
    }
}

pub fn macro_metrics(cm: &ConfusionMatrix, policy: ZeroDivision) -> Result<Averages, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let per_class = per_class_metrics(cm);
    let n = cm.classes();
    let f1_terms = per_class.iter().map(|m| match policy {
        // under the zero policy an undefined precision or recall is 0, so is F1
        ZeroDivision::Zero => Some(m.f1.unwrap_or(0.0)),
        ZeroDivision::Exclude => m.f1,
    });
    Ok(Averages {
        accuracy: accuracy(cm),
        precision: mean_with(per_class.iter().map(|m| m.precision), n, policy),
        recall: mean_with(per_class.iter().map(|m| m.recall), n, policy),
        f1: mean_with(f1_terms, n, policy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub correct: u64,
    pub zero_division: ZeroDivision,
    pub micro: Averages,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub per_class: Vec<ClassReport>,
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        labels: &[&str],
        policy: ZeroDivision,
    ) -> Result<MetricsReport, EvalError> {
        let per_class = per_class_metrics(cm)
            .into_iter()
            .zip(labels)
            .map(|(m, label)| ClassReport {
                label: label.to_string(),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support: m.support,
            })
            .collect();
        Ok(MetricsReport {
            total: cm.total(),
            correct: cm.correct(),
            zero_division: policy,
            micro: micro_metrics(cm)?,
            macro_avg: macro_metrics(cm, policy)?,
            per_class,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            confusion: cm.rows(),
        })
    }

    pub fn for_priorities(golds: &[Priority], preds: &[Priority], policy: ZeroDivision) -> Result<Self, EvalError> {
        let labels: Vec<&str> = Priority::ALL.iter().map(|p| p.as_str()).collect();
        Self::from_confusion(&confusion(golds, preds)?, &labels, policy)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}{:>10}{:>10}{:>10}{:>10}\n", "", "accuracy", "precision", "recall", "f1");
        for (name, a) in [("micro", &self.micro), ("macro", &self.macro_avg)] {
            out += &format!(
                "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
                name, a.accuracy, a.precision, a.recall, a.f1
            );
        }
        out += &format!("\n{:<8}{:>10}{:>10}{:>10}{:>10}\n", "class", "precision", "recall", "f1", "support");
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for c in &self.per_class {
            out += &format!(
                "{:<8}{:>10}{:>10}{:>10}{:>10}\n",
                c.label,
                cell(c.precision),
                cell(c.recall),
                cell(c.f1),
                c.support
            );
        }
        out
    }

    /// `averaging,metric,value` rows followed by per-class rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,metric,value\n");
        for (scope, a) in [("micro", &self.micro), ("macro", &self.macro_avg)] {
            for (metric, v) in [
                ("accuracy", a.accuracy),
                ("precision", a.precision),
                ("recall", a.recall),
                ("f1", a.f1),
            ] {
                out += &format!("{scope},{metric},{v}\n");
            }
        }
        for c in &self.per_class {
            for (metric, v) in [("precision", c.precision), ("recall", c.recall), ("f1", c.f1)] {
                out += &format!("{},{metric},{}\n", c.label, v.map_or(String::new(), |v| v.to_string()));
            }
            out += &format!("{},support,{}\n", c.label, c.support);
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = format!("gold\\pred,{}\n", self.labels.join(","));
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out += &format!("{label},{}\n", cells.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Priority::*;

    #[test]
    fn confusion_cells() {
        let cm = confusion(&[P1, P2], &[P1, P3]).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.total(), 2);
        let empty = confusion(&[], &[]).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.classes(), 5);
        assert!(matches!(confusion(&[P1], &[]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn perfect_classifier() {
        let g = [P1, P2, P3, P4, P5, P3];
        let cm = confusion(&g, &g).unwrap();
        for a in [micro_metrics(&cm).unwrap(), macro_metrics(&cm, ZeroDivision::Zero).unwrap()] {
            assert_eq!((a.accuracy, a.precision, a.recall, a.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn empty_matrix_is_error() {
        let cm = ConfusionMatrix::new(5).unwrap();
        assert_eq!(micro_metrics(&cm), Err(EvalError::EmptyMatrix));
        assert_eq!(macro_metrics(&cm, ZeroDivision::Zero), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn three_class_hand_computed() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 1, 0], vec![0, 3, 0], vec![1, 0, 3]]).unwrap();
        // N = 10, C = 8; per class (tp, fp, fn): (2,1,1) (3,1,0) (3,0,1)
        let micro = micro_metrics(&cm).unwrap();
        assert_eq!(micro.precision, 0.8);
        assert_eq!(micro.recall, 0.8);
        assert_eq!(micro.f1, 0.8);
        // tn: 6, 6, 6 → (8 + 18) / 30
        assert!((micro.accuracy - 26.0 / 30.0).abs() < 1e-15);
        let m = macro_metrics(&cm, ZeroDivision::Zero).unwrap();
        let p = (2.0 / 3.0 + 3.0 / 4.0 + 1.0) / 3.0;
        let r = (2.0 / 3.0 + 1.0 + 3.0 / 4.0) / 3.0;
        let f = (2.0 / 3.0 + 2.0 * 0.75 / 1.75 + 2.0 * 0.75 / 1.75) / 3.0;
        assert!((m.precision - p).abs() < 1e-15);
        assert!((m.recall - r).abs() < 1e-15);
        assert!((m.f1 - f).abs() < 1e-15);
    }

    #[test]
    fn all_majority_predictor_closed_form() {
        let golds: Vec<Priority> = (0..1000)
            .map(|i| if i < 879 { P3 } else { Priority::ALL[[0, 1, 3, 4][i % 4]] })
            .collect();
        let preds = vec![P3; 1000];
        let cm = confusion(&golds, &preds).unwrap();
        let micro = micro_metrics(&cm).unwrap();
        assert!((micro.precision - 0.879).abs() < 1e-12);
        assert!((micro.recall - 0.879).abs() < 1e-12);
        assert!((micro.accuracy - 0.9516).abs() < 1e-12);
        assert_eq!(macro_metrics(&cm, ZeroDivision::Zero).unwrap().recall, 0.2);
    }

    #[test]
    fn exclude_policy_drops_undefined_terms() {
        // only P1 and P2 occur and only P1 is predicted
        let cm = confusion(&[P1, P2], &[P1, P1]).unwrap();
        let zero = macro_metrics(&cm, ZeroDivision::Zero).unwrap();
        let excl = macro_metrics(&cm, ZeroDivision::Exclude).unwrap();
        assert_eq!(zero.precision, 0.5 / 5.0);
        assert_eq!(excl.precision, 0.5);
        assert_eq!(zero.recall, 1.0 / 5.0);
        assert_eq!(excl.recall, 0.5);
    }

    #[test]
    fn report_renders() {
        let r = MetricsReport::for_priorities(&[P1, P3, P3], &[P1, P3, P2], ZeroDivision::Zero).unwrap();
        assert_eq!(r.total, 3);
        assert_eq!(r.correct, 2);
        assert!(r.to_table().contains("micro"));
        assert!(r.to_csv().starts_with("scope,metric,value\nmicro,accuracy,"));
        assert!(r.confusion_csv().starts_with("gold\\pred,P1,P2,P3,P4,P5\nP1,1,0,0,0,0\n"));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["macro"]["recall"].is_number());
        assert!(json["per_class"][3]["precision"].is_null());
    }

    fn arb_labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..=20).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..5, n),
                proptest::collection::vec(0usize..5, n),
            )
        })
    }

    proptest! {
        #[test]
        fn single_label_identities((golds, preds) in arb_labels()) {
            let cm = ConfusionMatrix::from_indices(&golds, &preds, 5).unwrap();
            let n = golds.len() as f64;
            let c = golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64;
            let micro = micro_metrics(&cm).unwrap();
            prop_assert_eq!(micro.precision, c / n);
            prop_assert_eq!(micro.recall, c / n);
            prop_assert!((micro.f1 - c / n).abs() < 1e-15);
            prop_assert!((micro.accuracy - (3.0 * n + 2.0 * c) / (5.0 * n)).abs() < 1e-15);
            for class in 0..5 {
                prop_assert_eq!(cm.tp(class) + cm.fp(class) + cm.fn_(class) + cm.tn(class), cm.total());
            }
        }

        #[test]
        fn macro_invariant_under_relabeling((golds, preds) in arb_labels(), perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle()) {
            let cm = ConfusionMatrix::from_indices(&golds, &preds, 5).unwrap();
            let g2: Vec<usize> = golds.iter().map(|&g| perm[g]).collect();
            let p2: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
            let cm2 = ConfusionMatrix::from_indices(&g2, &p2, 5).unwrap();
            for policy in [ZeroDivision::Zero, ZeroDivision::Exclude] {
                let a = macro_metrics(&cm, policy).unwrap();
                let b = macro_metrics(&cm2, policy).unwrap();
                prop_assert!((a.precision - b.precision).abs() < 1e-12);
                prop_assert!((a.recall - b.recall).abs() < 1e-12);
                prop_assert!((a.f1 - b.f1).abs() < 1e-12);
                prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
                for v in [a.precision, a.recall, a.f1, a.accuracy] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}

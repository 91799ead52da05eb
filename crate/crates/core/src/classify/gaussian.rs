//! Gaussian naive Bayes over raw (unscaled) count features.
//!
//! Features are restricted to the vocabulary indices that occur in the
//! training rows. Means and variances are computed from the sparse rows
//! directly: implicit zeros contribute `(n_c − nnz) · μ²` to the squared
//! deviation sum. Every variance is floored at
//! `ε = var_smoothing · max variance` (itself at least 1e-12).

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_lengths, ClassifierKind, ClassifyError, PriorityModel, Sample, TrainContext, Verdict};
use crate::corpus::Priority;
use crate::textprep::CountVector;

pub const KIND: &str = "gaussian_nb";
pub const MIN_EPSILON: f64 = 1e-12;

/// A sparse feature row, `(feature index, value)` with unique indices.
pub type SparseRow = Vec<(u32, f64)>;

pub fn count_row(doc: &CountVector) -> SparseRow {
    doc.entries().iter().map(|&(i, c)| (i, c as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    epsilon: f64,
    features: Vec<u32>,
    class_counts: [u64; Priority::COUNT],
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    log_prior: [f64; Priority::COUNT],
    /// Log density of the all-zero row per class, excluding the prior.
    zero_row: [f64; Priority::COUNT],
}

#[derive(Serialize, Deserialize)]
struct Params {
    epsilon: f64,
    features: Vec<u32>,
    class_counts: [u64; Priority::COUNT],
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

pub fn train_gaussian_nb(
    rows: &[SparseRow],
    labels: &[Priority],
    var_smoothing: f64,
) -> Result<GaussianNb, ClassifyError> {
    check_lengths(rows.len(), labels.len())?;
    if !(var_smoothing >= 0.0 && var_smoothing.is_finite()) {
        return Err(ClassifyError::InvalidParameter(format!(
            "var_smoothing must be non-negative, got {var_smoothing}"
        )));
    }
    let features: Vec<u32> = rows
        .iter()
        .flat_map(|r| r.iter().map(|&(i, _)| i))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let f = features.len();
    let pos = |idx: u32| features.binary_search(&idx).expect("feature collected above");

    let mut class_counts = [0u64; Priority::COUNT];
    let mut sums = vec![vec![0.0; f]; Priority::COUNT];
    let mut nnz = vec![vec![0u64; f]; Priority::COUNT];
    for (row, label) in rows.iter().zip(labels) {
        let c = label.index();
        class_counts[c] += 1;
        for &(i, x) in row {
            let p = pos(i);
            sums[c][p] += x;
            nnz[c][p] += 1;
        }
    }
    let mut means = vec![Vec::new(); Priority::COUNT];
    for c in 0..Priority::COUNT {
        if class_counts[c] > 0 {
            let n = class_counts[c] as f64;
            means[c] = sums[c].iter().map(|s| s / n).collect();
        }
    }
    let mut sq = vec![vec![0.0; f]; Priority::COUNT];
    for (row, label) in rows.iter().zip(labels) {
        let c = label.index();
        for &(i, x) in row {
            let p = pos(i);
            let d = x - means[c][p];
            sq[c][p] += d * d;
        }
    }
    let mut variances = vec![Vec::new(); Priority::COUNT];
    let mut max_var: f64 = 0.0;
    for c in 0..Priority::COUNT {
        if class_counts[c] == 0 {
            continue;
        }
        let n = class_counts[c] as f64;
        variances[c] = (0..f)
            .map(|p| {
                let zeros = (class_counts[c] - nnz[c][p]) as f64;
                let mu = means[c][p];
                (sq[c][p] + zeros * mu * mu) / n
            })
            .collect();
        max_var = variances[c].iter().copied().fold(max_var, f64::max);
    }
    let epsilon = (var_smoothing * max_var).max(MIN_EPSILON);
    for v in variances.iter_mut().flatten() {
        *v = v.max(epsilon);
    }
    Ok(GaussianNb::from_parts(Params {
        epsilon,
        features,
        class_counts,
        means,
        variances,
    }))
}

impl GaussianNb {
    fn from_parts(p: Params) -> GaussianNb {
        let n: u64 = p.class_counts.iter().sum();
        let mut log_prior = [f64::NEG_INFINITY; Priority::COUNT];
        let mut zero_row = [0.0; Priority::COUNT];
        for c in 0..Priority::COUNT {
            if p.class_counts[c] == 0 {
                continue;
            }
            log_prior[c] = (p.class_counts[c] as f64 / n as f64).ln();
            zero_row[c] = p.means[c]
                .iter()
                .zip(&p.variances[c])
                .map(|(&mu, &var)| log_normal(0.0, mu, var))
                .sum();
        }
        GaussianNb {
            epsilon: p.epsilon,
            features: p.features,
            class_counts: p.class_counts,
            means: p.means,
            variances: p.variances,
            log_prior,
            zero_row,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Vocabulary indices used as features, ascending.
    pub fn features(&self) -> &[u32] {
        &self.features
    }

    pub fn log_prior(&self) -> &[f64; Priority::COUNT] {
        &self.log_prior
    }

    /// Per-feature means of a class (empty when the class was absent).
    pub fn means(&self, class: Priority) -> &[f64] {
        &self.means[class.index()]
    }

    pub fn variances(&self, class: Priority) -> &[f64] {
        &self.variances[class.index()]
    }

    /// Log prior plus the sum of per-feature log normal densities. Row
    /// entries outside the feature set are ignored.
    pub fn scores(&self, row: &[(u32, f64)]) -> [f64; Priority::COUNT] {
        let mut scores = self.log_prior;
        for c in 0..Priority::COUNT {
            if !scores[c].is_finite() {
                continue;
            }
            let mut s = self.zero_row[c];
            for &(i, x) in row {
                if let Ok(p) = self.features.binary_search(&i) {
                    let (mu, var) = (self.means[c][p], self.variances[c][p]);
                    s += log_normal(x, mu, var) - log_normal(0.0, mu, var);
                }
            }
            scores[c] += s;
        }
        scores
    }

    pub fn predict_row(&self, row: &[(u32, f64)]) -> Verdict {
        Verdict::from_scores(self.scores(row))
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

impl PriorityModel for GaussianNb {
    fn kind(&self) -> &str {
        KIND
    }

    fn predict_batch(&self, samples: &[Sample<'_>]) -> Result<Vec<Verdict>, ClassifyError> {
        Ok(samples
            .iter()
            .map(|s| self.predict_row(&count_row(s.counts)))
            .collect())
    }

    fn to_params(&self) -> Result<serde_json::Value, ClassifyError> {
        serde_json::to_value(Params {
            epsilon: self.epsilon,
            features: self.features.clone(),
            class_counts: self.class_counts,
            means: self.means.clone(),
            variances: self.variances.clone(),
        })
        .map_err(|e| ClassifyError::MalformedParams(e.to_string()))
    }
}

pub struct GaussianNbKind {
    pub var_smoothing: f64,
}

impl ClassifierKind for GaussianNbKind {
    fn name(&self) -> &str {
        KIND
    }

    fn train(
        &self,
        _ctx: &TrainContext,
        samples: &[Sample<'_>],
        labels: &[Priority],
    ) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        let rows: Vec<SparseRow> = samples.iter().map(|s| count_row(s.counts)).collect();
        Ok(Box::new(train_gaussian_nb(&rows, labels, self.var_smoothing)?))
    }

    fn restore(&self, params: &serde_json::Value) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        let p: Params =
            serde_json::from_value(params.clone()).map_err(|e| ClassifyError::MalformedParams(e.to_string()))?;
        let f = p.features.len();
        let shapes_ok = p.means.len() == Priority::COUNT
            && p.variances.len() == Priority::COUNT
            && (0..Priority::COUNT).all(|c| {
                let want = if p.class_counts[c] > 0 { f } else { 0 };
                p.means[c].len() == want && p.variances[c].len() == want
            })
            && p.variances.iter().flatten().all(|&v| v > 0.0)
            && p.class_counts.iter().any(|&n| n > 0);
        if !shapes_ok {
            return Err(ClassifyError::MalformedParams("inconsistent gaussian parameters".into()));
        }
        Ok(Box::new(GaussianNb::from_parts(p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoint_goes_to_nearer_mean() {
        let rows: Vec<SparseRow> = vec![vec![], vec![], vec![(0, 10.0)], vec![(0, 10.0)]];
        // the two classes differ only in their single feature; jitter keeps variances equal
        let rows: Vec<SparseRow> = rows
            .into_iter()
            .chain([vec![(0, 1.0)], vec![(0, 11.0)]])
            .collect();
        let labels = [Priority::P1, Priority::P1, Priority::P2, Priority::P2, Priority::P1, Priority::P2];
        let m = train_gaussian_nb(&rows, &labels, 1e-9).unwrap();
        assert_eq!(m.predict_row(&[(0, 4.0)]).priority, Priority::P1);
        assert_eq!(m.predict_row(&[(0, 7.0)]).priority, Priority::P2);
    }

    #[test]
    fn constant_feature_uses_floor() {
        let rows: Vec<SparseRow> = vec![vec![(0, 2.0), (1, 1.0)], vec![(0, 2.0), (1, 3.0)], vec![(1, 5.0)]];
        let labels = [Priority::P3, Priority::P3, Priority::P4];
        let m = train_gaussian_nb(&rows, &labels, 1e-9).unwrap();
        assert_eq!(m.variances(Priority::P3)[0], m.epsilon());
        assert!(m.epsilon() >= MIN_EPSILON);
        let s = m.scores(&[(0, 2.0), (1, 2.0)]);
        assert!(s[2].is_finite() && s[3].is_finite());
        assert_eq!(s[0], f64::NEG_INFINITY);
    }

    #[test]
    fn variances_match_dense_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<SparseRow> = (0..40)
            .map(|_| {
                let mut r: Vec<(u32, f64)> = (0..6u32)
                    .filter_map(|i| if rng.gen_bool(0.4) { Some((i, rng.gen_range(1..5) as f64)) } else { None })
                    .collect();
                r.dedup_by_key(|e| e.0);
                r
            })
            .collect();
        let labels: Vec<Priority> = (0..40).map(|i| Priority::ALL[i % 3]).collect();
        let m = train_gaussian_nb(&rows, &labels, 0.0).unwrap();
        for c in &Priority::ALL[..3] {
            for (p, &feat) in m.features().iter().enumerate() {
                let xs: Vec<f64> = rows
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| *l == c)
                    .map(|(r, _)| r.iter().find(|e| e.0 == feat).map_or(0.0, |e| e.1))
                    .collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                assert!((m.means(*c)[p] - mean).abs() < 1e-12);
                assert!((m.variances(*c)[p] - var.max(m.epsilon())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_scores_match_dense_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<SparseRow> = (0..50)
            .map(|_| (0..8u32).filter_map(|i| if rng.gen_bool(0.5) { Some((i, rng.gen_range(1..6) as f64)) } else { None }).collect())
            .collect();
        let labels: Vec<Priority> = (0..50).map(|_| Priority::ALL[rng.gen_range(0..5)]).collect();
        let m = train_gaussian_nb(&rows, &labels, 1e-9).unwrap();
        for _ in 0..1000 {
            let row: SparseRow = (0..8u32).filter_map(|i| if rng.gen_bool(0.3) { Some((i, rng.gen_range(1..8) as f64)) } else { None }).collect();
            let mut best = (f64::NEG_INFINITY, 0);
            for c in Priority::ALL {
                let mut s = m.log_prior()[c.index()];
                if s.is_finite() {
                    for (p, &feat) in m.features().iter().enumerate() {
                        let x = row.iter().find(|e| e.0 == feat).map_or(0.0, |e| e.1);
                        let (mu, var) = (m.means(c)[p], m.variances(c)[p]);
                        s += -0.5 * (2.0 * PI * var).ln() - (x - mu).powi(2) / (2.0 * var);
                    }
                }
                if s > best.0 {
                    best = (s, c.index());
                }
            }
            assert_eq!(m.predict_row(&row).priority.index(), best.1);
            assert!(m.scores(&row).iter().any(|s| s.is_finite()));
        }
    }

    #[test]
    fn params_round_trip() {
        let rows: Vec<SparseRow> = vec![vec![(0, 1.0)], vec![(1, 2.5)], vec![(0, 3.0), (1, 1.0)]];
        let labels = [Priority::P1, Priority::P5, Priority::P1];
        let m = train_gaussian_nb(&rows, &labels, 1e-9).unwrap();
        let kind = GaussianNbKind { var_smoothing: 1e-9 };
        let back = kind.restore(&m.to_params().unwrap()).unwrap();
        let doc = CountVector::from_pairs([(0, 2)]);
        let s = Sample { bug_id: 0, text: "", counts: &doc };
        assert_eq!(back.predict(&s).unwrap(), m.predict_row(&count_row(&doc)));
        assert!(kind.restore(&serde_json::json!({"epsilon": 1.0})).is_err());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(train_gaussian_nb(&[], &[], 1e-9), Err(ClassifyError::EmptyTrainingSet)));
    }
}

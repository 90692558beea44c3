//! Discrimination and business-cost metrics for score evaluation, plus the
//! repeated-holdout experiment driver that compares feature variants.
//!
//! Rank statistics use midranks throughout so ties are handled identically
//! in AUC, KS and the Mann-Whitney test, and `relation_auc_u` keeps the
//! classical identity AUC = U⁺/(n₁·n₀) observable as a cross-check between
//! two independently coded paths.

pub mod bootstrap;
pub mod cost;
pub mod mwu;

pub use bootstrap::{
    run_bootstrap, write_experiment_json, write_iterations_csv, BootstrapConfig, BootstrapError,
    ExperimentResult, IterationMetrics, MetricComparison, MetricStats, VariantSummary,
};
pub use cost::{
    baseline_cost, choose_threshold, decisions_from, example_costs, savings, total_cost,
    CostMatrixRow, CostParameters,
};
pub use mwu::{mann_whitney_u, Alternative, MwuMethod, MwuResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric input is empty")]
    EmptyInput,
    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("labels must contain both classes")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("scores must be finite")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn validate_scored(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(MetricsError::BadLabel(bad));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(MetricsError::SingleClass);
    }
    Ok(())
}

/// 1-based midranks: tied values share the average of the ranks they span.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let mid = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, with ties counted half. Computed from the
/// rank-sum form with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    validate_scored(scores, labels)?;
    let ranks = midranks(scores);
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n0 = labels.len() as f64 - n1;
    let r1: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| r)
        .sum();
    Ok((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Kolmogorov–Smirnov separation: the largest gap between the cumulative
/// score distributions of the two classes, equal to max |TPR − FPR| over
/// all decision thresholds.
pub fn ks(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    validate_scored(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n0 = n as f64 - n1;
    let mut cum1 = 0.0;
    let mut cum0 = 0.0;
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        // whole tie group enters the CDF together
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                cum1 += 1.0;
            } else {
                cum0 += 1.0;
            }
        }
        best = best.max((cum1 / n1 - cum0 / n0).abs());
        i = j + 1;
    }
    Ok(best)
}

/// Diagnostic pairing of two independently computed quantities that must
/// agree: the midrank AUC and the Mann-Whitney U of positives over
/// negatives divided by n₁·n₀.
pub fn relation_auc_u(scores: &[f64], labels: &[u8]) -> Result<(f64, f64), MetricsError> {
    validate_scored(scores, labels)?;
    let a = auc(scores, labels)?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 0)
        .map(|(s, _)| *s)
        .collect();
    let result = mann_whitney_u(&neg, &pos, Alternative::TwoSided)?;
    let u_norm = result.u_b / (pos.len() as f64 * neg.len() as f64);
    Ok((a, u_norm))
}

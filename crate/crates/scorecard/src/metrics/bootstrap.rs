//! Repeated stratified holdout evaluation of feature-set variants.
//!
//! Every iteration draws one stratified train/test split that all variants
//! share, so per-iteration metric differences reflect the feature sets and
//! not split luck. Per-variant metric samples are then summarized and
//! later variants are compared against the first (baseline) variant with
//! the rank-sum test.

use super::cost::{
    baseline_cost, choose_threshold, decisions_from, example_costs, savings, total_cost,
    CostParameters,
};
use super::mwu::{mann_whitney_u, Alternative};
use super::{auc, ks, MetricsError};
use crate::features::{FeatureError, FeatureMatrix, Variant};
use crate::gbdt::{fit, fit_full, GbdtError, TrainConfig};
use crate::mix_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Number of independent train/test redraws.
    pub iterations: usize,
    /// Fraction of each class assigned to the training fold.
    pub train_fraction: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub cost: CostParameters,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            train_fraction: 0.70,
            seed: 0,
            train: TrainConfig::default(),
            cost: CostParameters::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.iterations == 0 {
            return Err(BootstrapError::InvalidConfig(
                "iterations must be at least 1".to_string(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(BootstrapError::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.cost.validate()?;
        Ok(())
    }
}

/// Test-fold metrics of one variant on one split.
#[derive(Debug, Clone, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub variant: Variant,
    pub auc: f64,
    pub ks: f64,
    pub cost: f64,
    pub savings: f64,
    pub threshold: f64,
}

/// Five-number summary plus mean and sample standard deviation.
#[derive(Debug, Clone, Serialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "stats need at least one value");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self {
            mean,
            std,
            min: sorted[0],
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Linear-interpolation quantile of an already-sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub iterations: usize,
    pub auc: MetricStats,
    pub ks: MetricStats,
    pub cost: MetricStats,
    pub savings: MetricStats,
}

/// Rank-sum comparison of one variant's metric sample against the
/// baseline variant's.
#[derive(Debug, Clone, Serialize)]
pub struct MetricComparison {
    pub metric: String,
    pub baseline: Variant,
    pub variant: Variant,
    pub u: f64,
    pub z: Option<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub iterations: Vec<IterationMetrics>,
    pub summaries: Vec<VariantSummary>,
    pub comparisons: Vec<MetricComparison>,
}

impl ExperimentResult {
    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    pub fn comparison(&self, variant: Variant, metric: &str) -> Option<&MetricComparison> {
        self.comparisons
            .iter()
            .find(|c| c.variant == variant && c.metric == metric)
    }
}

fn gather<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i]).collect()
}

/// Run the full experiment: for each iteration draw one stratified split,
/// then train, threshold and score every variant on it. The first variant
/// is the comparison baseline.
pub fn run_bootstrap(
    matrix: &FeatureMatrix,
    labels: &[u8],
    credit_lines: &[f64],
    variants: &[Variant],
    cfg: &BootstrapConfig,
) -> Result<ExperimentResult, BootstrapError> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(BootstrapError::InvalidConfig(
            "need at least one variant".to_string(),
        ));
    }
    if variants
        .iter()
        .enumerate()
        .any(|(i, v)| variants[..i].contains(v))
    {
        return Err(BootstrapError::InvalidConfig(
            "duplicate variant".to_string(),
        ));
    }
    let n = matrix.n_rows();
    if labels.len() != n || credit_lines.len() != n {
        return Err(MetricsError::LengthMismatch {
            left: n,
            right: labels.len().min(credit_lines.len()),
        }
        .into());
    }
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(BootstrapError::InvalidConfig(
            "need at least two examples of each class".to_string(),
        ));
    }

    let projected: Vec<FeatureMatrix> = variants
        .iter()
        .map(|&v| matrix.project_variant(v))
        .collect::<Result<_, _>>()?;

    let mut iterations = Vec::with_capacity(cfg.iterations * variants.len());
    for iter in 0..cfg.iterations {
        let split_seed = mix_seed(cfg.seed, (iter as u64) << 8);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let mut p = pos.clone();
        let mut g = neg.clone();
        p.shuffle(&mut rng);
        g.shuffle(&mut rng);
        let k_pos = split_count(p.len(), cfg.train_fraction);
        let k_neg = split_count(g.len(), cfg.train_fraction);
        let mut train_idx: Vec<usize> = p[..k_pos].iter().chain(&g[..k_neg]).copied().collect();
        let mut test_idx: Vec<usize> = p[k_pos..].iter().chain(&g[k_neg..]).copied().collect();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        // With early stopping on, part of the training fold is withheld so
        // each refit can pick its own round count. The slice is taken from
        // the tail of the per-iteration class shuffles, so it is stratified
        // and shared across variants just like the folds themselves.
        let early_stop = cfg.train.early_stopping_rounds.is_some() && k_pos >= 2 && k_neg >= 2;
        let (fit_idx, eval_idx) = if early_stop {
            let f_pos = split_count(k_pos, ES_FIT_SHARE);
            let f_neg = split_count(k_neg, ES_FIT_SHARE);
            let mut fit_idx: Vec<usize> =
                p[..f_pos].iter().chain(&g[..f_neg]).copied().collect();
            let mut eval_idx: Vec<usize> = p[f_pos..k_pos]
                .iter()
                .chain(&g[f_neg..k_neg])
                .copied()
                .collect();
            fit_idx.sort_unstable();
            eval_idx.sort_unstable();
            (fit_idx, eval_idx)
        } else {
            (Vec::new(), Vec::new())
        };
        let train_y = gather(labels, &train_idx);
        let test_y = gather(labels, &test_idx);
        let train_cl = gather(credit_lines, &train_idx);
        let test_cl = gather(credit_lines, &test_idx);
        let train_costs = example_costs(&train_cl, &train_y, &cfg.cost)?;
        let test_costs = example_costs(&test_cl, &test_y, &cfg.cost)?;
        let test_base = baseline_cost(&test_y, &test_costs)?;

        for (v_idx, (&variant, proj)) in variants.iter().zip(&projected).enumerate() {
            let train_m = proj.select_rows(&train_idx);
            let test_m = proj.select_rows(&test_idx);
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = mix_seed(cfg.seed, ((iter as u64) << 8) | (v_idx as u64 + 1));
            let model = if early_stop {
                let fit_m = proj.select_rows(&fit_idx);
                let eval_m = proj.select_rows(&eval_idx);
                let fit_y = gather(labels, &fit_idx);
                let eval_y = gather(labels, &eval_idx);
                fit_full(&fit_m, &fit_y, &train_cfg, Some((&eval_m, &eval_y)), false)?.model
            } else {
                fit(&train_m, &train_y, &train_cfg)?
            };
            let p_train = model.predict_proba(&train_m)?;
            let threshold = choose_threshold(&p_train, &train_y, &train_costs)?;
            let p_test = model.predict_proba(&test_m)?;
            let cost = total_cost(&decisions_from(&p_test, threshold), &test_y, &test_costs)?;
            iterations.push(IterationMetrics {
                iteration: iter,
                variant,
                auc: auc(&p_test, &test_y)?,
                ks: ks(&p_test, &test_y)?,
                cost,
                savings: savings(cost, test_base)?,
                threshold,
            });
        }
        log::info!(
            "holdout iteration {}/{} done ({} variants)",
            iter + 1,
            cfg.iterations,
            variants.len()
        );
    }

    let metric_values = |variant: Variant, pick: fn(&IterationMetrics) -> f64| -> Vec<f64> {
        iterations
            .iter()
            .filter(|m| m.variant == variant)
            .map(pick)
            .collect()
    };
    let summaries = variants
        .iter()
        .map(|&v| VariantSummary {
            variant: v,
            iterations: cfg.iterations,
            auc: MetricStats::from_values(&metric_values(v, |m| m.auc)),
            ks: MetricStats::from_values(&metric_values(v, |m| m.ks)),
            cost: MetricStats::from_values(&metric_values(v, |m| m.cost)),
            savings: MetricStats::from_values(&metric_values(v, |m| m.savings)),
        })
        .collect();

    let baseline = variants[0];
    let mut comparisons = Vec::new();
    for &variant in &variants[1..] {
        let picks: [(&str, fn(&IterationMetrics) -> f64); 3] = [
            ("auc", |m| m.auc),
            ("ks", |m| m.ks),
            ("savings", |m| m.savings),
        ];
        for (name, pick) in picks {
            let base_vals = metric_values(baseline, pick);
            let var_vals = metric_values(variant, pick);
            let r = mann_whitney_u(&base_vals, &var_vals, Alternative::TwoSided)?;
            comparisons.push(MetricComparison {
                metric: name.to_string(),
                baseline,
                variant,
                u: r.u_b,
                z: r.z,
                p_value: r.p_value,
            });
        }
    }

    Ok(ExperimentResult {
        iterations,
        summaries,
        comparisons,
    })
}

/// Share of the training fold grown into trees when early stopping is on;
/// the remainder scores candidate round counts.
const ES_FIT_SHARE: f64 = 0.75;

/// Training-fold size for one class: rounded share, but both folds keep at
/// least one member.
fn split_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Long-format per-iteration metrics, one line per (iteration, variant).
pub fn write_iterations_csv(path: &Path, result: &ExperimentResult) -> Result<(), BootstrapError> {
    let io_err = |source| BootstrapError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "iteration,variant,auc,ks,cost,savings,threshold").map_err(io_err)?;
    for m in &result.iterations {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            m.iteration,
            m.variant.as_str(),
            m.auc,
            m.ks,
            m.cost,
            m.savings,
            m.threshold
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Summaries and baseline comparisons as a JSON document.
pub fn write_experiment_json(path: &Path, result: &ExperimentResult) -> Result<(), BootstrapError> {
    let file = File::create(path).map_err(|source| BootstrapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(file), result).map_err(|e| BootstrapError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    })
}

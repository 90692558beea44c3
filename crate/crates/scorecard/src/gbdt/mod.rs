//! Second-order gradient-boosted decision trees with logistic loss,
//! built from scratch.
//!
//! Trees store raw Newton leaf weights; the learning rate is applied at
//! prediction time, so the ensemble margin is
//! `base_score + learning_rate · Σ_k tree_k(x)` and the probability is the
//! sigmoid of that margin. Missing feature values (NaN) route along each
//! split's learned default direction.

mod train;

pub use train::{fit, fit_full, FitOutcome, LeafAudit};

use crate::features::FeatureMatrix;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("labels contain a single class; need both 0 and 1")]
    DegenerateLabels,
    #[error("matrix has {rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("matrix columns do not match model features (expected {expected:?}…, got {got:?}…)")]
    ColumnMismatch {
        expected: Option<String>,
        got: Option<String>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
}

fn nan() -> f64 {
    f64::NAN
}

/// One regression-tree node. `cover` is the number of training rows routed
/// through the node when the tree was grown; the explainer uses the
/// child/parent cover ratio as the branch probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        /// Where rows with a missing feature value go.
        default_left: bool,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        #[serde(default = "nan")]
        cover: f64,
    },
    Leaf {
        weight: f64,
        #[serde(default = "nan")]
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    /// Tree output for one row; NaN feature values take the default branch.
    pub fn value(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Split {
                feature_index,
                threshold,
                default_left,
                left,
                right,
                ..
            } => {
                let v = row[*feature_index];
                let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                if go_left {
                    left.value(row)
                } else {
                    right.value(row)
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// True when every node in the tree carries a finite cover.
    pub fn has_cover(&self) -> bool {
        match self {
            TreeNode::Leaf { cover, .. } => cover.is_finite(),
            TreeNode::Split {
                cover, left, right, ..
            } => cover.is_finite() && left.has_cover() && right.has_cover(),
        }
    }

    /// Feature indexes referenced anywhere in the tree.
    pub fn used_features(&self, out: &mut std::collections::BTreeSet<usize>) {
        if let TreeNode::Split {
            feature_index,
            left,
            right,
            ..
        } = self
        {
            out.insert(*feature_index);
            left.used_features(out);
            right.used_features(out);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamp a probability into the open interval (0, 1) so downstream
/// log-odds and logloss stay finite.
pub fn clamp_proba(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON)
}

/// First and second derivative of the logistic loss with respect to the
/// margin. The hessian is floored at 1e−16 to keep leaf weights finite.
pub fn logistic_grad_hess(y: u8, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    let g = p - y as f64;
    let h = (p * (1.0 - p)).max(1e-16);
    (g, h)
}

/// Mean negative log-likelihood of Bernoulli labels under probabilities.
pub fn logloss(labels: &[u8], probs: &[f64]) -> f64 {
    assert_eq!(labels.len(), probs.len());
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = clamp_proba(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

/// A trained boosted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

impl TreeEnsemble {
    /// Raw margin (log-odds) for one row.
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.value(row)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn proba_row(&self, row: &[f64]) -> f64 {
        clamp_proba(sigmoid(self.margin_row(row)))
    }

    fn check_columns(&self, matrix: &FeatureMatrix) -> Result<(), GbdtError> {
        let names = matrix.column_names();
        if names != self.feature_names {
            let mismatch = self
                .feature_names
                .iter()
                .zip(&names)
                .find(|(a, b)| a != b);
            return Err(GbdtError::ColumnMismatch {
                expected: mismatch
                    .map(|(a, _)| a.clone())
                    .or_else(|| self.feature_names.first().cloned()),
                got: mismatch
                    .map(|(_, b)| b.clone())
                    .or_else(|| names.first().cloned()),
            });
        }
        Ok(())
    }

    /// Margins for every row of a matrix whose columns match the model.
    pub fn predict_margin(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        self.check_columns(matrix)?;
        Ok((0..matrix.n_rows())
            .map(|r| self.margin_row(matrix.row(r)))
            .collect())
    }

    /// Default-probability estimates in the open interval (0, 1).
    pub fn predict_proba(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        Ok(self
            .predict_margin(matrix)?
            .into_iter()
            .map(|m| clamp_proba(sigmoid(m)))
            .collect())
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(TreeNode::n_leaves).sum()
    }

    /// Write the model as versioned JSON; the same file feeds the explainer.
    pub fn save(&self, path: &Path) -> Result<(), GbdtError> {
        let file = File::create(path).map_err(|source| GbdtError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let record = ModelFile {
            version: MODEL_FILE_VERSION,
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            feature_names: self.feature_names.clone(),
            trees: self.trees.clone(),
        };
        serde_json::to_writer(BufWriter::new(file), &record).map_err(|e| {
            GbdtError::BadModelFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<TreeEnsemble, GbdtError> {
        let file = File::open(path).map_err(|source| GbdtError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let record: ModelFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| GbdtError::BadModelFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if record.version != MODEL_FILE_VERSION {
            return Err(GbdtError::BadModelFile {
                path: path.display().to_string(),
                reason: format!(
                    "unsupported version {} (expected {MODEL_FILE_VERSION})",
                    record.version
                ),
            });
        }
        Ok(TreeEnsemble {
            base_score: record.base_score,
            learning_rate: record.learning_rate,
            feature_names: record.feature_names,
            trees: record.trees,
        })
    }
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    base_score: f64,
    learning_rate: f64,
    feature_names: Vec<String>,
    trees: Vec<TreeNode>,
}

/// How split candidates are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Greedy scan over all distinct observed values per feature.
    Exact,
    /// Quantile-binned candidates; much faster on large cohorts.
    Histogram { max_bins: usize },
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Exact
    }
}

/// Training hyperparameters. The defaults are conventional for this model
/// family and frozen here for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub subsample_rows: f64,
    pub subsample_cols: f64,
    pub seed: u64,
    pub early_stopping_rounds: Option<usize>,
    pub split_mode: SplitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            subsample_rows: 0.8,
            subsample_cols: 0.8,
            seed: 0,
            early_stopping_rounds: None,
            split_mode: SplitMode::Exact,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let ok = self.n_rounds > 0
            && self.max_depth > 0
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.min_child_weight >= 0.0
            && (0.0..=1.0).contains(&self.subsample_rows)
            && self.subsample_rows > 0.0
            && (0.0..=1.0).contains(&self.subsample_cols)
            && self.subsample_cols > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GbdtError::BadModelFile {
                path: "<config>".to_string(),
                reason: "training hyperparameters out of bounds".to_string(),
            })
        }
    }
}

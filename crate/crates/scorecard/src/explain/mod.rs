//! Exact per-feature Shapley attribution for tree ensembles, computed in
//! margin (log-odds) space by the polynomial-time path-dependent recursion,
//! plus global importance summaries and plot-ready exports.
//!
//! The branch probabilities of the conditional expectation come from the
//! training row counts (`cover`) stored on every node, so attribution needs
//! only the model file — no background dataset. The recursion tracks, for
//! every subset size, the proportion of feature subsets flowing down the
//! current path ("hot" = the branch the explained row takes, "cold" = the
//! other), and unwinds duplicate features so repeated splits on one feature
//! are conditioned once.

use crate::features::FeatureMatrix;
use crate::gbdt::{GbdtError, TreeEnsemble, TreeNode};
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("model has a node without cover; refit or backfill covers before explaining")]
    MissingCover,
    #[error("no attributions to summarize")]
    Empty,
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shapley attribution of one row's margin prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub row_id: String,
    /// One value per feature, in matrix column order.
    pub phi: Vec<f64>,
    /// Expected model margin over the training distribution; `base_value +
    /// Σ phi` equals the row's margin.
    pub base_value: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PathItem {
    feature_index: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

/// Cover-weighted average leaf value: the tree's output expectation over
/// the training distribution.
fn tree_expectation(node: &TreeNode) -> f64 {
    match node {
        TreeNode::Leaf { weight, .. } => *weight,
        TreeNode::Split {
            left, right, cover, ..
        } => {
            let wl = left.cover() / cover;
            let wr = right.cover() / cover;
            wl * tree_expectation(left) + wr * tree_expectation(right)
        }
    }
}

/// Expected ensemble margin over the training distribution.
pub fn expected_margin(model: &TreeEnsemble) -> f64 {
    let sum: f64 = model.trees.iter().map(tree_expectation).sum();
    model.base_score + model.learning_rate * sum
}

fn check_covers(model: &TreeEnsemble) -> Result<(), ExplainError> {
    fn ok(node: &TreeNode) -> bool {
        match node {
            TreeNode::Leaf { cover, .. } => cover.is_finite() && *cover > 0.0,
            TreeNode::Split {
                cover, left, right, ..
            } => cover.is_finite() && *cover > 0.0 && ok(left) && ok(right),
        }
    }
    if model.trees.iter().all(ok) {
        Ok(())
    } else {
        Err(ExplainError::MissingCover)
    }
}

/// Exact Shapley values for every row. Output is in margin space; a
/// feature no tree splits on gets exactly zero.
pub fn tree_shap(
    model: &TreeEnsemble,
    matrix: &FeatureMatrix,
) -> Result<Vec<Attribution>, ExplainError> {
    check_covers(model)?;
    // Column alignment is enforced the same way prediction does it.
    model.predict_margin(matrix).map(drop)?;
    let base_value = expected_margin(model);
    let n_features = matrix.n_cols();
    let max_depth = model
        .trees
        .iter()
        .map(TreeNode::depth)
        .max()
        .unwrap_or(0);
    let buf_len = (max_depth + 2) * (max_depth + 3) / 2;

    let attrs: Vec<Attribution> = (0..matrix.n_rows())
        .into_par_iter()
        .map(|r| {
            let row = matrix.row(r);
            let mut phi = vec![0.0; n_features];
            let mut path = vec![PathItem::default(); buf_len];
            for tree in &model.trees {
                tree_shap_recursive(&mut phi, row, tree, &mut path, 0, 1.0, 1.0, None);
            }
            for p in phi.iter_mut() {
                *p *= model.learning_rate;
            }
            Attribution {
                row_id: matrix.row_ids[r].clone(),
                phi,
                base_value,
            }
        })
        .collect();
    Ok(attrs)
}

fn hot_cold<'a>(
    row: &[f64],
    feature_index: usize,
    threshold: f64,
    default_left: bool,
    left: &'a TreeNode,
    right: &'a TreeNode,
) -> (&'a TreeNode, &'a TreeNode) {
    let v = row[feature_index];
    let go_left = if v.is_nan() { default_left } else { v < threshold };
    if go_left {
        (left, right)
    } else {
        (right, left)
    }
}

#[allow(clippy::too_many_arguments)]
fn tree_shap_recursive(
    phi: &mut [f64],
    row: &[f64],
    node: &TreeNode,
    unique_path: &mut [PathItem],
    unique_depth: usize,
    parent_zero_fraction: f64,
    parent_one_fraction: f64,
    parent_feature_index: Option<usize>,
) {
    extend_path(
        unique_path,
        unique_depth,
        parent_zero_fraction,
        parent_one_fraction,
        parent_feature_index,
    );
    match node {
        TreeNode::Leaf { weight, .. } => {
            for path_index in 1..=unique_depth {
                let w = unwound_path_sum(unique_path, unique_depth, path_index);
                let item = &unique_path[path_index];
                let scale = w * (item.one_fraction - item.zero_fraction);
                phi[item.feature_index.expect("non-root path item has a feature")] +=
                    scale * *weight;
            }
        }
        TreeNode::Split {
            feature_index,
            threshold,
            default_left,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = hot_cold(row, *feature_index, *threshold, *default_left, left, right);
            let hot_zero_fraction = hot.cover() / cover;
            let cold_zero_fraction = cold.cover() / cover;
            let mut incoming_zero_fraction = 1.0;
            let mut incoming_one_fraction = 1.0;
            let mut unique_depth = unique_depth;
            // A feature already on the path is conditioned exactly once:
            // pull its fractions out and unwind it before re-extending.
            if let Some(k) = (1..=unique_depth)
                .find(|&i| unique_path[i].feature_index == Some(*feature_index))
            {
                incoming_zero_fraction = unique_path[k].zero_fraction;
                incoming_one_fraction = unique_path[k].one_fraction;
                unwind_path(unique_path, unique_depth, k);
                unique_depth -= 1;
            }
            let (parent_path, child_path) = unique_path.split_at_mut(unique_depth + 1);
            child_path[..parent_path.len()].copy_from_slice(parent_path);
            tree_shap_recursive(
                phi,
                row,
                hot,
                child_path,
                unique_depth + 1,
                hot_zero_fraction * incoming_zero_fraction,
                incoming_one_fraction,
                Some(*feature_index),
            );
            child_path[..parent_path.len()].copy_from_slice(parent_path);
            tree_shap_recursive(
                phi,
                row,
                cold,
                child_path,
                unique_depth + 1,
                cold_zero_fraction * incoming_zero_fraction,
                0.0,
                Some(*feature_index),
            );
        }
    }
}

fn extend_path(
    unique_path: &mut [PathItem],
    unique_depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature_index: Option<usize>,
) {
    unique_path[unique_depth] = PathItem {
        feature_index,
        zero_fraction,
        one_fraction,
        pweight: if unique_depth == 0 { 1.0 } else { 0.0 },
    };
    for i in (0..unique_depth).rev() {
        unique_path[i + 1].pweight +=
            one_fraction * unique_path[i].pweight * (i + 1) as f64 / (unique_depth + 1) as f64;
        unique_path[i].pweight =
            zero_fraction * unique_path[i].pweight * (unique_depth - i) as f64
                / (unique_depth + 1) as f64;
    }
}

fn unwind_path(unique_path: &mut [PathItem], unique_depth: usize, path_index: usize) {
    let one_fraction = unique_path[path_index].one_fraction;
    let zero_fraction = unique_path[path_index].zero_fraction;
    let mut next_one_portion = unique_path[unique_depth].pweight;
    for i in (0..unique_depth).rev() {
        if one_fraction != 0.0 {
            let tmp = unique_path[i].pweight;
            unique_path[i].pweight =
                next_one_portion * (unique_depth + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one_portion = tmp
                - unique_path[i].pweight * zero_fraction * (unique_depth - i) as f64
                    / (unique_depth + 1) as f64;
        } else {
            unique_path[i].pweight = unique_path[i].pweight * (unique_depth + 1) as f64
                / (zero_fraction * (unique_depth - i) as f64);
        }
    }
    for i in path_index..unique_depth {
        unique_path[i].feature_index = unique_path[i + 1].feature_index;
        unique_path[i].zero_fraction = unique_path[i + 1].zero_fraction;
        unique_path[i].one_fraction = unique_path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(unique_path: &[PathItem], unique_depth: usize, path_index: usize) -> f64 {
    let one_fraction = unique_path[path_index].one_fraction;
    let zero_fraction = unique_path[path_index].zero_fraction;
    let mut next_one_portion = unique_path[unique_depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..unique_depth).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion =
                unique_path[i].pweight - tmp * zero_fraction * (unique_depth - i) as f64;
        }
    } else {
        for i in (0..unique_depth).rev() {
            total += unique_path[i].pweight / (zero_fraction * (unique_depth - i) as f64);
        }
    }
    total * (unique_depth + 1) as f64
}

/// Direction of a feature's effect: the sign of the correlation between
/// feature values and their attributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignProfile {
    Positive,
    Negative,
    Flat,
}

/// One row of the global importance ranking.
#[derive(Debug, Clone, Serialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub sign_profile: SignProfile,
}

/// Rank features by mean |φ| (descending; ties alphabetical) and attach a
/// direction-of-effect profile from the φ–value correlation over rows
/// where the feature is present.
pub fn importance_summary(
    attrs: &[Attribution],
    matrix: &FeatureMatrix,
) -> Result<Vec<ImportanceEntry>, ExplainError> {
    if attrs.is_empty() || attrs.len() != matrix.n_rows() {
        return Err(ExplainError::Empty);
    }
    let n_features = matrix.n_cols();
    let n_rows = attrs.len();
    let mut entries = Vec::with_capacity(n_features);
    for c in 0..n_features {
        let mean_abs = attrs.iter().map(|a| a.phi[c].abs()).sum::<f64>() / n_rows as f64;
        // correlation over present cells only
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, a) in attrs.iter().enumerate() {
            if !matrix.is_missing(r, c) {
                xs.push(matrix.get(r, c));
                ys.push(a.phi[c]);
            }
        }
        let sign_profile = correlation_sign(&xs, &ys);
        entries.push(ImportanceEntry {
            feature: matrix.columns[c].name.clone(),
            mean_abs_phi: mean_abs,
            sign_profile,
        });
    }
    entries.sort_by(|a, b| {
        b.mean_abs_phi
            .partial_cmp(&a.mean_abs_phi)
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(entries)
}

fn correlation_sign(xs: &[f64], ys: &[f64]) -> SignProfile {
    let n = xs.len();
    if n < 2 {
        return SignProfile::Flat;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return SignProfile::Flat;
    }
    let corr = cov / (vx.sqrt() * vy.sqrt());
    if corr > 1e-9 {
        SignProfile::Positive
    } else if corr < -1e-9 {
        SignProfile::Negative
    } else {
        SignProfile::Flat
    }
}

/// Long-format export: one line per (row, feature) with the φ value and
/// the raw feature value (empty when missing).
pub fn write_attributions_csv(
    path: &Path,
    attrs: &[Attribution],
    matrix: &FeatureMatrix,
) -> Result<(), ExplainError> {
    let io_err = |source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "row_id,feature,phi,feature_value").map_err(io_err)?;
    for (r, a) in attrs.iter().enumerate() {
        for (c, col) in matrix.columns.iter().enumerate() {
            let value = if matrix.is_missing(r, c) {
                String::new()
            } else {
                format!("{}", matrix.get(r, c))
            };
            writeln!(w, "{},{},{},{}", a.row_id, col.name, a.phi[c], value).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    base_value: f64,
    ranking: &'a [ImportanceEntry],
}

/// JSON ranking file consumed by reports.
pub fn write_summary_json(
    path: &Path,
    base_value: f64,
    ranking: &[ImportanceEntry],
) -> Result<(), ExplainError> {
    let file = File::create(path).map_err(|source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(file), &SummaryFile { base_value, ranking })
        .map_err(|e| ExplainError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::Other, e),
        })
}

/// Plot-ready beeswarm data: (feature, φ, feature-value percentile within
/// the column). Percentile is empty for missing values.
pub fn write_beeswarm_csv(
    path: &Path,
    attrs: &[Attribution],
    matrix: &FeatureMatrix,
) -> Result<(), ExplainError> {
    let io_err = |source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    };
    // per-column percentile of each present value
    let n_rows = matrix.n_rows();
    let mut percentiles = vec![f64::NAN; n_rows * matrix.n_cols()];
    for c in 0..matrix.n_cols() {
        let mut present: Vec<(f64, usize)> = (0..n_rows)
            .filter(|&r| !matrix.is_missing(r, c))
            .map(|r| (matrix.get(r, c), r))
            .collect();
        present.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let m = present.len();
        for (rank, &(_, r)) in present.iter().enumerate() {
            let p = if m > 1 { rank as f64 / (m - 1) as f64 } else { 0.5 };
            percentiles[r * matrix.n_cols() + c] = p;
        }
    }
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "feature,phi,value_percentile").map_err(io_err)?;
    for (r, a) in attrs.iter().enumerate() {
        for (c, col) in matrix.columns.iter().enumerate() {
            let p = percentiles[r * matrix.n_cols() + c];
            let cell = if p.is_nan() { String::new() } else { format!("{p}") };
            writeln!(w, "{},{},{}", col.name, a.phi[c], cell).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

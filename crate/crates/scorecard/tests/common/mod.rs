//! Shared helpers for integration tests: an exponential-time Shapley oracle
//! for small trees (written independently of the production recursion) and a
//! random-tree generator used to compare the two.
#![allow(dead_code)]

use scorecard::gbdt::{TreeEnsemble, TreeNode};

/// Deterministic 64-bit mix; a tiny standalone RNG so oracle fixtures do not
/// share code with the library under test.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// uniform in [0, 1)
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

/// Value of the model on `row` when only the features in `subset` (bitmask)
/// are known: known features route normally, unknown splits average both
/// children weighted by training coverage.
fn conditional_expectation(node: &TreeNode, row: &[f64], subset: u32) -> f64 {
    match node {
        TreeNode::Leaf { weight, .. } => *weight,
        TreeNode::Split {
            feature_index,
            threshold,
            default_left,
            left,
            right,
            cover,
        } => {
            if subset & (1 << feature_index) != 0 {
                let v = row[*feature_index];
                let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                if go_left {
                    conditional_expectation(left, row, subset)
                } else {
                    conditional_expectation(right, row, subset)
                }
            } else {
                (left.cover() / cover) * conditional_expectation(left, row, subset)
                    + (right.cover() / cover) * conditional_expectation(right, row, subset)
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Exact Shapley values for one tree by full subset enumeration. Only
/// feasible for small feature counts (2^n subsets).
pub fn shapley_brute_force(tree: &TreeNode, row: &[f64], n_features: usize) -> Vec<f64> {
    assert!(n_features <= 16, "oracle is exponential in feature count");
    let full = factorial(n_features);
    let mut phi = vec![0.0; n_features];
    for j in 0..n_features {
        let bit = 1u32 << j;
        for subset in 0..(1u32 << n_features) {
            if subset & bit != 0 {
                continue;
            }
            let s = subset.count_ones() as usize;
            let weight = factorial(s) * factorial(n_features - s - 1) / full;
            let with = conditional_expectation(tree, row, subset | bit);
            let without = conditional_expectation(tree, row, subset);
            phi[j] += weight * (with - without);
        }
    }
    phi
}

/// Oracle attribution for a whole ensemble: per-tree Shapley values summed
/// and scaled by the learning rate, matching how the margin composes.
pub fn ensemble_shapley_brute_force(model: &TreeEnsemble, row: &[f64]) -> Vec<f64> {
    let n_features = model.feature_names.len();
    let mut phi = vec![0.0; n_features];
    for tree in &model.trees {
        for (p, q) in phi.iter_mut().zip(shapley_brute_force(tree, row, n_features)) {
            *p += model.learning_rate * q;
        }
    }
    phi
}

/// Random tree with consistent covers: leaves get random positive counts,
/// split covers are the sum of their children.
pub fn random_tree(rng: &mut SplitMix64, depth: usize, n_features: usize) -> TreeNode {
    if depth == 0 || rng.next_f64() < 0.15 {
        return TreeNode::Leaf {
            weight: rng.next_f64() * 4.0 - 2.0,
            cover: (1 + rng.below(40)) as f64,
        };
    }
    let left = random_tree(rng, depth - 1, n_features);
    let right = random_tree(rng, depth - 1, n_features);
    let cover = left.cover() + right.cover();
    TreeNode::Split {
        feature_index: rng.below(n_features as u64) as usize,
        // thresholds land strictly inside the row-value grid below
        threshold: (1 + rng.below(9)) as f64 / 2.0,
        default_left: rng.next_u64() % 2 == 0,
        left: Box::new(left),
        right: Box::new(right),
        cover,
    }
}

/// Row whose values straddle the random thresholds; ~1 in 5 cells missing.
pub fn random_row(rng: &mut SplitMix64, n_features: usize) -> Vec<f64> {
    (0..n_features)
        .map(|_| {
            if rng.next_f64() < 0.2 {
                f64::NAN
            } else {
                rng.below(6) as f64
            }
        })
        .collect()
}

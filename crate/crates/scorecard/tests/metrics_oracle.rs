//! Cross-checks the rank-based metric implementations against slower,
//! independently written reference routes: AUC against O(n²) pairwise
//! counting, KS against an explicit CDF sup-distance, and both against
//! their distribution-free invariances.

mod common;

use common::SplitMix64;
use proptest::prelude::*;
use scorecard::metrics::{auc, ks, relation_auc_u};

/// AUC by brute force: count positive-over-negative pairs, ties half.
fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
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
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// KS as the sup distance between the two class-conditional empirical
/// CDFs, evaluated on the merged grid of observed scores.
fn ks_cdf(scores: &[f64], labels: &[u8]) -> f64 {
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
    let cdf = |sample: &[f64], x: f64| -> f64 {
        sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64
    };
    scores
        .iter()
        .map(|&x| (cdf(&pos, x) - cdf(&neg, x)).abs())
        .fold(0.0, f64::max)
}

fn random_case(rng: &mut SplitMix64, n: usize, grid: u64) -> (Vec<f64>, Vec<u8>) {
    loop {
        // coarse grid forces plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.below(grid) as f64 / grid as f64).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| (rng.next_f64() < 0.3 + 0.4 * s) as u8)
            .collect();
        let pos = labels.iter().filter(|&&y| y == 1).count();
        if pos > 0 && pos < n {
            return (scores, labels);
        }
    }
}

#[test]
fn auc_agrees_with_pairwise_counting() {
    let mut rng = SplitMix64(0xa0c);
    for _ in 0..40 {
        let (scores, labels) = random_case(&mut rng, 80, 12);
        let fast = auc(&scores, &labels).unwrap();
        let slow = auc_pairwise(&scores, &labels);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn ks_agrees_with_cdf_sup_distance() {
    let mut rng = SplitMix64(0x6b5);
    for _ in 0..40 {
        let (scores, labels) = random_case(&mut rng, 80, 12);
        let fast = ks(&scores, &labels).unwrap();
        let slow = ks_cdf(&scores, &labels);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn auc_equals_normalized_u_on_random_data() {
    let mut rng = SplitMix64(0x0e11);
    for _ in 0..40 {
        let (scores, labels) = random_case(&mut rng, 60, 8);
        let (a, u) = relation_auc_u(&scores, &labels).unwrap();
        assert!((a - u).abs() < 1e-12, "auc {a} vs U/(n1*n0) {u}");
    }
}

proptest! {
    /// Rank statistics cannot change under strictly increasing transforms.
    #[test]
    fn rank_metrics_ignore_monotone_transforms(
        raw in prop::collection::vec((0u8..6, 0u8..2), 4..60)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 5.0).collect();
        let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        // exp is strictly increasing; affine too
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        let a0 = auc(&scores, &labels).unwrap();
        let a1 = auc(&warped, &labels).unwrap();
        prop_assert!((a0 - a1).abs() < 1e-12);
        let k0 = ks(&scores, &labels).unwrap();
        let k1 = ks(&warped, &labels).unwrap();
        prop_assert!((k0 - k1).abs() < 1e-12);
    }

    /// Flipping every label complements the AUC.
    #[test]
    fn auc_complements_under_label_flip(
        raw in prop::collection::vec((0u8..8, 0u8..2), 4..60)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

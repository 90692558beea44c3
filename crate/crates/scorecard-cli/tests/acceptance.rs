//! Acceptance gate: eight checks that the shipped pipeline must pass.
//!
//! Each test prints one `PASS` line with the measured figures; a failure
//! panics with the figures instead. The checks pair every nontrivial
//! computation with an independently coded oracle — pairwise counting for
//! rank metrics, a hand-built cost ledger, exhaustive subset enumeration
//! for attributions, finite differences for the training gradients — and
//! drive the real binary for the end-to-end claims.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scorecard::explain::tree_shap;
use scorecard::features::{
    default_feature_catalog, featurize, Aggregate, ColumnInfo, FeatureMatrix, FeatureSource,
    Variant, Vocabulary,
};
use scorecard::gbdt::{
    fit_full, logistic_grad_hess, SplitMode, TrainConfig, TreeEnsemble, TreeNode,
};
use scorecard::metrics::{
    auc, baseline_cost, decisions_from, example_costs, ks, relation_auc_u, run_bootstrap,
    savings, total_cost, BootstrapConfig, CostParameters,
};
use scorecard::segments::{segment_scores, split, SegmentName};
use scorecard::synth::{generate, snapshot_date, GeneratorConfig};

// ---------------------------------------------------------------- helpers

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scorecard"))
}

fn run_bin(dir: &Path, seed: u64, args: &[&str]) {
    let out = bin()
        .arg("--out")
        .arg(dir)
        .arg("--seed")
        .arg(seed.to_string())
        .args(args)
        .output()
        .expect("binary should start");
    assert!(
        out.status.success(),
        "scorecard {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| {
        panic!("cannot read {}: {e}", path.display());
    }))
    .unwrap_or_else(|e| panic!("bad json in {}: {e}", path.display()))
}

/// Random scored sample with heavy ties and both classes present.
fn random_sample(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n1 = 2 + rng.gen_range(0..30);
    let n0 = 2 + rng.gen_range(0..30);
    let mut scores = Vec::with_capacity(n1 + n0);
    let mut labels = Vec::with_capacity(n1 + n0);
    for i in 0..n1 + n0 {
        // quantized scores force tie groups across and within classes
        scores.push((rng.gen_range(0..=16) as f64) / 16.0);
        labels.push(u8::from(i < n1));
    }
    (scores, labels)
}

// ------------------------------------------------- 1. rank metric oracles

/// AUC by direct pairwise counting: wins + half-ties over all pos/neg pairs.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
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
    let mut num = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                num += 1.0;
            } else if p == q {
                num += 0.5;
            }
        }
    }
    num / (pos.len() as f64 * neg.len() as f64)
}

/// KS by sweeping every observed score as a threshold.
fn sweep_ks(scores: &[f64], labels: &[u8]) -> f64 {
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n0 = labels.len() as f64 - n1;
    let mut best: f64 = 0.0;
    for &t in scores {
        let mut c1 = 0.0;
        let mut c0 = 0.0;
        for (&s, &y) in scores.iter().zip(labels) {
            if s <= t {
                if y == 1 {
                    c1 += 1.0;
                } else {
                    c0 += 1.0;
                }
            }
        }
        best = best.max((c1 / n1 - c0 / n0).abs());
    }
    best
}

#[test]
fn a1_rank_metrics_match_their_definitions() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4101);
    let mut worst_auc: f64 = 0.0;
    let mut worst_u: f64 = 0.0;
    let mut worst_ks: f64 = 0.0;
    for _ in 0..100 {
        let (scores, labels) = random_sample(&mut rng);
        let a = auc(&scores, &labels).unwrap();
        worst_auc = worst_auc.max((a - pairwise_auc(&scores, &labels)).abs());
        let (a2, u_norm) = relation_auc_u(&scores, &labels).unwrap();
        assert_eq!(a, a2);
        worst_u = worst_u.max((a - u_norm).abs());
        let k = ks(&scores, &labels).unwrap();
        worst_ks = worst_ks.max((k - sweep_ks(&scores, &labels)).abs());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    assert!(worst_auc <= 1e-12, "auc vs pairwise counting: {worst_auc:e}");
    assert!(worst_u <= 1e-12, "auc vs normalized rank-sum: {worst_u:e}");
    assert!(worst_ks <= 1e-12, "ks vs threshold sweep: {worst_ks:e}");
    assert!(elapsed < 10.0, "rank metric check too slow: {elapsed:.1}s");
    println!(
        "PASS rank metrics: 100 samples, max |auc-pairwise| {worst_auc:.1e}, \
         |auc-U/(n1*n0)| {worst_u:.1e}, |ks-sweep| {worst_ks:.1e}, {elapsed:.2}s"
    );
}

// ----------------------------------------------------- 2. the cost ledger

#[test]
fn a2_cost_ledger_matches_hand_computation() {
    let params = CostParameters {
        int_r: 0.40,
        int_cf: 0.10,
        l_gd: 0.75,
    };
    let lines = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0];
    let labels = [1u8, 0, 0, 1, 0, 0];

    // ledger derived from the cost definitions, written out independently:
    // a denied payer forfeits the line's lending margin plus the shared
    // replacement term; a granted defaulter loses the line times severity
    let margin: f64 = 0.40 - 0.10;
    let pi: f64 = 2.0 / 6.0;
    let mean_cl: f64 = (100.0 + 200.0 + 300.0 + 400.0 + 500.0 + 600.0) / 6.0;
    let shared = (pi * mean_cl * 0.75 - (1.0 - pi) * (mean_cl * margin)).max(0.0);
    assert!((shared - 17.5).abs() < 1e-9, "shared term {shared}");

    let rows = example_costs(&lines, &labels, &params).unwrap();
    for (row, &cl) in rows.iter().zip(&lines) {
        assert_eq!(row.c_fn, cl * 0.75, "false-negative cost for line {cl}");
        assert_eq!(
            row.c_fp,
            cl * margin + shared,
            "false-positive cost for line {cl}"
        );
    }

    // deny users 1, 3 and 6: one true positive, two false positives,
    // one false negative (user 4), two true negatives
    let deny = [true, false, true, false, false, true];
    let hand_total = (300.0 * margin + shared) + 400.0 * 0.75 + (600.0 * margin + shared);
    let total = total_cost(&deny, &labels, &rows).unwrap();
    assert_eq!(total, hand_total, "ledger total");
    assert!((total - 605.0).abs() < 1e-9, "ledger magnitude {total}");

    // closed forms: deny-all pays every payer's margin plus the shared
    // term; grant-all pays every defaulter's severity
    let deny_all = total_cost(&[true; 6], &labels, &rows).unwrap();
    let hand_deny_all = (200.0 + 300.0 + 500.0 + 600.0) * margin + 4.0 * shared;
    assert_eq!(deny_all, hand_deny_all, "deny-all closed form");
    let grant_all = total_cost(&[false; 6], &labels, &rows).unwrap();
    assert_eq!(grant_all, (100.0 + 400.0) * 0.75, "grant-all closed form");
    assert_eq!(grant_all, 375.0);

    let base = baseline_cost(&labels, &rows).unwrap();
    assert_eq!(base, grant_all.min(deny_all), "baseline is the better trivial policy");

    // a perfect classifier pays nothing, so it saves the whole baseline
    let perfect: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
    let perfect_cost = total_cost(&perfect, &labels, &rows).unwrap();
    assert_eq!(perfect_cost, 0.0);
    assert_eq!(savings(perfect_cost, base).unwrap(), 1.0);

    // scores at the class boundary reproduce the ledger decisions
    let scores = [0.9, 0.2, 0.6, 0.4, 0.1, 0.55];
    assert_eq!(decisions_from(&scores, 0.5), deny.to_vec());
    println!(
        "PASS cost ledger: 6-user ledger total {total}, deny-all {deny_all:.1}, \
         grant-all {grant_all}, perfect savings 1.0"
    );
}

// ------------------------------------- 3. attributions vs exact Shapley

/// Random tree with consistent covers; every branch keeps cover mass.
fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, depth: usize, cover: f64) -> TreeNode {
    if depth == 0 || (depth < 3 && rng.gen::<f64>() < 0.25) {
        return TreeNode::Leaf {
            weight: rng.gen_range(-1.0..1.0),
            cover,
        };
    }
    let frac = rng.gen_range(0.2..0.8);
    let left_cover = cover * frac;
    TreeNode::Split {
        feature_index: rng.gen_range(0..n_features),
        threshold: rng.gen_range(-1.5..1.5),
        default_left: rng.gen::<bool>(),
        left: Box::new(random_tree(rng, n_features, depth - 1, left_cover)),
        right: Box::new(random_tree(rng, n_features, depth - 1, cover - left_cover)),
        cover,
    }
}

/// Expectation of the tree conditioned on the features in `known` taking
/// the row's values; everything else is averaged with cover weights.
fn conditional_expectation(node: &TreeNode, row: &[f64], known: u32) -> f64 {
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
            if known & (1 << feature_index) != 0 {
                let v = row[*feature_index];
                let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                if go_left {
                    conditional_expectation(left, row, known)
                } else {
                    conditional_expectation(right, row, known)
                }
            } else {
                (left.cover() * conditional_expectation(left, row, known)
                    + right.cover() * conditional_expectation(right, row, known))
                    / cover
            }
        }
    }
}

/// Shapley values by enumerating every feature subset.
fn exhaustive_shapley(tree: &TreeNode, row: &[f64], n_features: usize) -> Vec<f64> {
    let mut factorial = vec![1.0f64; n_features + 1];
    for i in 1..=n_features {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; n_features];
    for i in 0..n_features {
        let others: Vec<usize> = (0..n_features).filter(|&j| j != i).collect();
        for mask in 0u32..(1 << others.len()) {
            let mut subset = 0u32;
            let mut size = 0usize;
            for (bit, &j) in others.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    subset |= 1 << j;
                    size += 1;
                }
            }
            let weight = factorial[size] * factorial[n_features - size - 1]
                / factorial[n_features];
            let with = conditional_expectation(tree, row, subset | (1 << i));
            let without = conditional_expectation(tree, row, subset);
            phi[i] += weight * (with - without);
        }
    }
    phi
}

fn plain_matrix(names: &[String], values: Vec<f64>, n_rows: usize) -> FeatureMatrix {
    let columns = names
        .iter()
        .map(|n| ColumnInfo {
            name: n.clone(),
            source: FeatureSource::Delivery,
            aggregate: Aggregate::Sum,
        })
        .collect();
    let missing = values.iter().map(|v| v.is_nan()).collect();
    FeatureMatrix {
        columns,
        values,
        missing,
        row_ids: (0..n_rows).map(|i| format!("r{i}")).collect(),
    }
}

#[test]
fn a3_attributions_match_exhaustive_shapley() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4303);
    let n_features = 8;
    let names: Vec<String> = (0..n_features).map(|i| format!("f{i}")).collect();

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let tree = random_tree(&mut rng, n_features, 3, 256.0);
        let base_score = rng.gen_range(-1.0..1.0);
        let learning_rate = rng.gen_range(0.1..1.0);
        let model = TreeEnsemble {
            base_score,
            learning_rate,
            feature_names: names.clone(),
            trees: vec![tree.clone()],
        };
        let mut values = Vec::with_capacity(3 * n_features);
        for _ in 0..3 * n_features {
            values.push(if rng.gen::<f64>() < 0.15 {
                f64::NAN
            } else {
                rng.gen_range(-2.0..2.0)
            });
        }
        let matrix = plain_matrix(&names, values.clone(), 3);
        let attrs = tree_shap(&model, &matrix).unwrap();
        for (r, attr) in attrs.iter().enumerate() {
            let row = &values[r * n_features..(r + 1) * n_features];
            let oracle = exhaustive_shapley(&tree, row, n_features);
            for (i, &phi) in attr.phi.iter().enumerate() {
                worst = worst.max((phi - learning_rate * oracle[i]).abs());
            }
            let expected_base =
                base_score + learning_rate * conditional_expectation(&tree, row, 0);
            worst = worst.max((attr.base_value - expected_base).abs());
        }
    }
    assert!(worst <= 1e-9, "attribution vs exhaustive Shapley: {worst:e}");

    // additivity on a bigger matrix under a multi-tree model
    let mut values = Vec::with_capacity(1000 * n_features);
    for _ in 0..1000 * n_features {
        values.push(if rng.gen::<f64>() < 0.1 {
            f64::NAN
        } else {
            rng.gen_range(-2.0..2.0)
        });
    }
    let matrix = plain_matrix(&names, values, 1000);
    let model = TreeEnsemble {
        base_score: -1.2,
        learning_rate: 0.3,
        feature_names: names.clone(),
        trees: (0..30)
            .map(|_| random_tree(&mut rng, n_features, 3, 512.0))
            .collect(),
    };
    let margins = model.predict_margin(&matrix).unwrap();
    let attrs = tree_shap(&model, &matrix).unwrap();
    let mut worst_add = 0.0f64;
    for (attr, &margin) in attrs.iter().zip(&margins) {
        let total = attr.base_value + attr.phi.iter().sum::<f64>();
        worst_add = worst_add.max((total - margin).abs());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    assert!(worst_add <= 1e-6, "additivity gap {worst_add:e}");
    assert!(elapsed < 60.0, "attribution check too slow: {elapsed:.1}s");
    println!(
        "PASS attributions: 200 trees within {worst:.1e} of exhaustive Shapley, \
         additivity gap {worst_add:.1e} over 1000 rows, {elapsed:.1}s"
    );
}

// --------------------------------------------- 4. training loss geometry

/// Numerically stable pointwise logistic loss, written independently.
fn point_logloss(y: u8, margin: f64) -> f64 {
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - f64::from(y) * margin
}

#[test]
fn a4_training_follows_the_loss_geometry() {
    // gradients and hessians against finite differences
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    for y in [0u8, 1] {
        let mut m = -6.0;
        while m <= 6.0 {
            let (g, h) = logistic_grad_hess(y, m);
            let eps = 1e-5;
            let fd_g = (point_logloss(y, m + eps) - point_logloss(y, m - eps)) / (2.0 * eps);
            worst_g = worst_g.max((g - fd_g).abs());
            let eps2 = 1e-4;
            let fd_h = (point_logloss(y, m + eps2) - 2.0 * point_logloss(y, m)
                + point_logloss(y, m - eps2))
                / (eps2 * eps2);
            worst_h = worst_h.max((h - fd_h).abs());
            m += 0.25;
        }
    }
    assert!(worst_g <= 1e-6, "gradient vs finite differences: {worst_g:e}");
    assert!(worst_h <= 1e-6, "hessian vs finite differences: {worst_h:e}");

    // unregularized boosting must never increase the training loss
    let mut rng = ChaCha8Rng::seed_from_u64(4404);
    let n = 400;
    let n_features = 6;
    let mut values = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut logit = -0.7;
        for j in 0..n_features {
            let v: f64 = rng.gen_range(-1.0..1.0);
            values.push(v);
            logit += v * (j as f64 - 2.0) * 0.8;
        }
        labels.push(u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-logit).exp())));
    }
    let names: Vec<String> = (0..n_features).map(|i| format!("x{i}")).collect();
    let matrix = plain_matrix(&names, values, n);
    let cfg = TrainConfig {
        n_rounds: 100,
        max_depth: 3,
        learning_rate: 0.3,
        lambda: 0.0,
        gamma: 0.0,
        min_child_weight: 0.0,
        subsample_rows: 1.0,
        subsample_cols: 1.0,
        seed: 9,
        early_stopping_rounds: None,
        split_mode: SplitMode::Exact,
    };
    let outcome = fit_full(&matrix, &labels, &cfg, None, true).unwrap();
    assert_eq!(outcome.train_logloss.len(), 100);
    for (round, pair) in outcome.train_logloss.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0] + 1e-12,
            "training loss rose at round {}: {} -> {}",
            round + 1,
            pair[0],
            pair[1]
        );
    }
    let drop = outcome.train_logloss[0] - outcome.train_logloss[99];

    // every stored leaf weight must equal the weight recomputed from the
    // rows routed to that leaf, in both split modes
    let audit = outcome.audit.expect("audit requested");
    assert!(audit.covers_consistent, "covers inconsistent in exact mode");
    assert!(
        audit.max_abs_deviation <= 1e-8,
        "leaf weights off by {:e} in exact mode",
        audit.max_abs_deviation
    );
    let hist_cfg = TrainConfig {
        split_mode: SplitMode::Histogram { max_bins: 16 },
        lambda: 1.0,
        min_child_weight: 2.0,
        n_rounds: 40,
        ..cfg
    };
    let hist = fit_full(&matrix, &labels, &hist_cfg, None, true).unwrap();
    let hist_audit = hist.audit.expect("audit requested");
    assert!(hist_audit.covers_consistent, "covers inconsistent in histogram mode");
    assert!(
        hist_audit.max_abs_deviation <= 1e-8,
        "leaf weights off by {:e} in histogram mode",
        hist_audit.max_abs_deviation
    );
    println!(
        "PASS loss geometry: max gradient gap {worst_g:.1e}, hessian gap {worst_h:.1e}, \
         loss fell {drop:.4} over 100 monotone rounds, leaf audits within {:.1e}/{:.1e}",
        audit.max_abs_deviation, hist_audit.max_abs_deviation
    );
}

// ------------------------------------ 5. headline comparison, both scales

struct HeadlineFigures {
    auc: (f64, f64),
    ks: (f64, f64),
    savings: (f64, f64),
    p_auc: f64,
    p_ks: f64,
    elapsed: f64,
}

fn run_headline(dir: &Path, preset: &str, segments: Option<&str>) -> HeadlineFigures {
    let clock = Instant::now();
    run_bin(dir, 7, &["generate", "--preset", preset]);
    run_bin(dir, 7, &["featurize"]);
    match segments {
        Some(list) => run_bin(dir, 7, &["compare", "--segments", list]),
        None => run_bin(dir, 7, &["compare"]),
    }
    let elapsed = clock.elapsed().as_secs_f64();

    let summary = read_json(&dir.join("compare_summary.json"));
    let whole = summary
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["segment"] == "none")
        .expect("whole-cohort population present");
    let sums = whole["summaries"].as_array().unwrap();
    let mean = |v: &serde_json::Value, metric: &str| v[metric]["mean"].as_f64().unwrap();
    let table = read_csv(&dir.join("compare_table.csv"));
    let none_row = table
        .iter()
        .find(|r| r[0] == "none")
        .expect("whole-cohort row in the p-value table");
    HeadlineFigures {
        auc: (mean(&sums[0], "auc"), mean(&sums[1], "auc")),
        ks: (mean(&sums[0], "ks"), mean(&sums[1], "ks")),
        savings: (mean(&sums[0], "savings"), mean(&sums[1], "savings")),
        p_auc: none_row[3].parse().unwrap(),
        p_ks: none_row[4].parse().unwrap(),
        elapsed,
    }
}

#[test]
fn a5_app_features_lift_all_headline_metrics() {
    let tmp = tempfile::tempdir().unwrap();

    let big = tmp.path().join("country_a");
    fs::create_dir_all(&big).unwrap();
    let f = run_headline(&big, "country_a", Some(""));
    assert!(f.auc.1 > f.auc.0, "mean AUC direction: {:?}", f.auc);
    assert!(f.ks.1 > f.ks.0, "mean KS direction: {:?}", f.ks);
    assert!(f.savings.1 > f.savings.0, "mean savings direction: {:?}", f.savings);
    assert!(f.p_auc < 0.01, "AUC comparison p-value {:.3e}", f.p_auc);
    assert!(f.p_ks < 0.01, "KS comparison p-value {:.3e}", f.p_ks);
    assert!(f.elapsed < 900.0, "50k run took {:.0}s", f.elapsed);
    let big_line = format!(
        "50k: auc {:.4}->{:.4}, ks {:.4}->{:.4}, savings {:.4}->{:.4}, \
         p_auc {:.1e}, p_ks {:.1e}, {:.0}s",
        f.auc.0, f.auc.1, f.ks.0, f.ks.1, f.savings.0, f.savings.1, f.p_auc, f.p_ks, f.elapsed
    );

    let small = tmp.path().join("fast");
    fs::create_dir_all(&small).unwrap();
    let g = run_headline(&small, "fast", None);
    assert!(g.auc.1 > g.auc.0, "fast mean AUC direction: {:?}", g.auc);
    assert!(g.ks.1 > g.ks.0, "fast mean KS direction: {:?}", g.ks);
    assert!(
        g.savings.1 > g.savings.0,
        "fast mean savings direction: {:?}",
        g.savings
    );
    assert!(g.elapsed < 120.0, "fast run took {:.0}s", g.elapsed);
    println!(
        "PASS headline lift: {big_line}; 5k: auc {:.4}->{:.4}, ks {:.4}->{:.4}, \
         savings {:.4}->{:.4}, {:.0}s",
        g.auc.0, g.auc.1, g.ks.0, g.ks.1, g.savings.0, g.savings.1, g.elapsed
    );
}

// --------------------------------------------------- 6. null-signal guard

#[test]
fn a6_null_app_signal_shows_no_false_lift() {
    let clock = Instant::now();
    let mut quiet = 0usize;
    let runs = 20;
    let mut p_values = Vec::with_capacity(runs);
    for run in 0..runs {
        let gen_cfg = GeneratorConfig {
            n_users: 2_500,
            base_default_rate: 0.08,
            app_effect: 0.0,
            seed: 6_000 + run as u64,
            ..GeneratorConfig::default()
        };
        let cohort = generate(&gen_cfg).unwrap();
        let vocab = Vocabulary::build(&cohort.users);
        let matrix = featurize(
            &cohort.users,
            &cohort.events,
            &default_feature_catalog(),
            &vocab,
            gen_cfg.window_months,
        )
        .unwrap();
        let labels: Vec<u8> = cohort.users.iter().map(|u| u.label).collect();
        let lines: Vec<f64> = cohort.users.iter().map(|u| u.credit_line.as_f64()).collect();
        let bcfg = BootstrapConfig {
            iterations: 16,
            train_fraction: 0.7,
            seed: 60 + run as u64,
            train: TrainConfig {
                n_rounds: 20,
                max_depth: 2,
                min_child_weight: 5.0,
                split_mode: SplitMode::Histogram { max_bins: 32 },
                ..TrainConfig::default()
            },
            cost: CostParameters::default(),
        };
        let result = run_bootstrap(
            &matrix,
            &labels,
            &lines,
            &[Variant::BureauOnly, Variant::BureauPlusApp],
            &bcfg,
        )
        .unwrap();
        let p = result
            .comparisons
            .iter()
            .find(|c| c.metric == "auc")
            .unwrap()
            .p_value;
        p_values.push(p);
        if p > 0.05 {
            quiet += 1;
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    assert!(
        quiet >= 18,
        "app-less worlds still looked different: only {quiet}/{runs} quiet, p-values {p_values:.3?}"
    );
    println!(
        "PASS null-signal guard: {quiet}/{runs} runs with p > 0.05 when the app \
         carries no signal, {elapsed:.0}s"
    );
}

// ------------------------------------------- 7. segment splits and rates

#[test]
fn a7_segment_splits_are_sound_and_calibrated() {
    // planted vs realized default rates per segment side on the big cohort
    let cfg = GeneratorConfig::country_a();
    let cohort = generate(&cfg).unwrap();
    let n = cohort.users.len();
    for (u, t) in cohort.users.iter().zip(&cohort.manifest.per_user) {
        assert_eq!(u.user_id, t.user_id, "truth rows align with users");
    }
    let mut rate_lines = Vec::new();
    for name in [
        SegmentName::DeviceScore,
        SegmentName::WealthScore,
        SegmentName::Rfm,
    ] {
        let scores = segment_scores(
            name,
            &cohort.users,
            &cohort.events,
            snapshot_date(),
            cfg.window_months,
        );
        assert_eq!(scores.len(), n);
        let result = split(&scores, None).unwrap();
        assert!(!result.degenerate, "{name:?} split degenerate");

        // the two sides partition the cohort exactly
        let mut seen = vec![false; n];
        for &i in result.low.iter().chain(&result.high) {
            assert!(!seen[i], "user {i} assigned twice by {name:?}");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s), "{name:?} split dropped users");
        for &i in &result.low {
            assert!(scores[i] <= result.cut);
        }
        for &i in &result.high {
            assert!(scores[i] > result.cut);
        }

        for (side, members) in [("low", &result.low), ("high", &result.high)] {
            let m = members.len() as f64;
            let planted = members
                .iter()
                .map(|&i| cohort.manifest.per_user[i].p_default)
                .sum::<f64>()
                / m;
            let realized = members
                .iter()
                .map(|&i| f64::from(cohort.users[i].label))
                .sum::<f64>()
                / m;
            let half_width = 2.576 * (planted * (1.0 - planted) / m).sqrt();
            assert!(
                (realized - planted).abs() <= half_width,
                "{name:?}/{side}: realized {realized:.4} vs planted {planted:.4} \
                 outside ±{half_width:.4} (n={m})"
            );
            rate_lines.push(format!("{name:?}/{side} {realized:.3}~{planted:.3}"));
        }
    }

    // the published table has the whole cohort plus low/high per
    // segmentation, with a p-value for each of the two rank metrics
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_bin(dir, 7, &["generate", "--preset", "fast"]);
    run_bin(dir, 7, &["featurize"]);
    run_bin(dir, 7, &["compare"]);
    let table = read_csv(&dir.join("compare_table.csv"));
    assert_eq!(table[0], ["segment", "side", "n_users", "p_auc", "p_ks"]);
    let expect = [
        ("none", "all"),
        ("device_score", "low"),
        ("device_score", "high"),
        ("wealth_score", "low"),
        ("wealth_score", "high"),
        ("rfm", "low"),
        ("rfm", "high"),
    ];
    assert_eq!(table.len(), 1 + expect.len(), "exactly seven populations");
    for (row, (seg, side)) in table[1..].iter().zip(expect) {
        assert_eq!((row[0].as_str(), row[1].as_str()), (seg, side));
        for p in &row[3..5] {
            let p: f64 = p.parse().unwrap();
            assert!(p > 0.0 && p <= 1.0);
        }
    }
    // assignment files cover each segmentation's users exactly once
    for seg in ["device_score", "wealth_score", "rfm"] {
        let rows = read_csv(&dir.join(format!("assignments_{seg}.csv")));
        assert_eq!(rows.len() - 1, 5_000, "{seg} assignments cover the cohort");
        let mut ids = BTreeSet::new();
        for row in &rows[1..] {
            assert!(ids.insert(row[0].clone()), "duplicate user in {seg}");
            assert!(row[2] == "low" || row[2] == "high");
        }
    }
    println!(
        "PASS segment plumbing: 6 side rates inside their 99% bands ({}), \
         7-row table with 2 p-value columns",
        rate_lines.join(", ")
    );
}

// ----------------------------------------------------- 8. determinism

#[test]
fn a8_identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        "[synth]\nn_users = 1500\nbase_default_rate = 0.08\n\n\
         [bootstrap]\niterations = 10\n",
    )
    .unwrap();
    let steps: [&[&str]; 6] = [
        &["generate"],
        &["featurize"],
        &["train", "--variant", "bureau_plus_app"],
        &["evaluate", "--variant", "bureau_plus_app"],
        &["explain", "--variant", "bureau_plus_app"],
        &["compare"],
    ];
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir_all(&dir).unwrap();
        for step in steps {
            let out = bin()
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&dir)
                .args(step)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{step:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        dirs.push(dir);
    }
    let files = [
        "users.csv",
        "events.jsonl",
        "truth.json",
        "features.csv",
        "features.csv.manifest.json",
        "segment_scores.csv",
        "model_bureau_plus_app.json",
        "fit_report_bureau_plus_app.json",
        "metrics_bureau_plus_app.json",
        "scores_bureau_plus_app.csv",
        "attributions_bureau_plus_app.csv",
        "shap_summary_bureau_plus_app.json",
        "beeswarm_bureau_plus_app.csv",
        "iterations_none_all.csv",
        "compare_table.csv",
        "savings_table.csv",
        "compare_summary.json",
        "experiment_none_all.json",
    ];
    let mut checked = 0usize;
    for name in files {
        let a = fs::read(dirs[0].join(name))
            .unwrap_or_else(|e| panic!("missing {name} in first run: {e}"));
        let b = fs::read(dirs[1].join(name))
            .unwrap_or_else(|e| panic!("missing {name} in second run: {e}"));
        assert_eq!(a, b, "{name} differs between identical runs");
        checked += 1;
    }
    println!("PASS determinism: {checked} artifacts byte-identical across two full runs");
}

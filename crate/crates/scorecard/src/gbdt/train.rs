//! Training: greedy depth-wise tree growth on second-order gradient
//! statistics.
//!
//! Split gain is `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ` and leaf
//! weights are the Newton step `−G/(H+λ)`. Rows with a missing value for
//! the split feature follow the direction that yields the higher gain.
//! Candidate splits are enumerated either exactly (midpoints between every
//! pair of adjacent distinct values) or over quantile-binned histograms;
//! ties in gain resolve to the lowest feature index, then the lowest
//! threshold, then the left default — so training is fully deterministic
//! for a fixed seed.

use super::{GbdtError, SplitMode, TrainConfig, TreeEnsemble, TreeNode};
use crate::features::FeatureMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Everything a fit produces beyond the model itself.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: TreeEnsemble,
    /// Mean training logloss after each round.
    pub train_logloss: Vec<f64>,
    /// Mean held-out logloss after each round (empty without an eval set).
    pub eval_logloss: Vec<f64>,
    /// Round whose model was kept when early stopping was active.
    pub best_round: Option<usize>,
    pub audit: Option<LeafAudit>,
}

/// Result of recomputing every leaf weight from the rows routed to it.
#[derive(Debug, Clone, Copy)]
pub struct LeafAudit {
    pub n_leaves: usize,
    /// Largest |stored − recomputed| over all leaf weights.
    pub max_abs_deviation: f64,
    /// Every split's cover equals the routed row count and the sum of its
    /// children's covers.
    pub covers_consistent: bool,
}

/// Train with the given config; convenience wrapper over [`fit_full`].
pub fn fit(
    matrix: &FeatureMatrix,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<TreeEnsemble, GbdtError> {
    fit_full(matrix, labels, cfg, None, false).map(|o| o.model)
}

/// Train with optional held-out evaluation (required for early stopping)
/// and an optional per-tree leaf-weight audit.
pub fn fit_full(
    matrix: &FeatureMatrix,
    labels: &[u8],
    cfg: &TrainConfig,
    eval: Option<(&FeatureMatrix, &[u8])>,
    audit: bool,
) -> Result<FitOutcome, GbdtError> {
    cfg.validate()?;
    let n = matrix.n_rows();
    let n_feats = matrix.n_cols();
    if n == 0 || n_feats == 0 {
        return Err(GbdtError::EmptyMatrix);
    }
    if labels.len() != n {
        return Err(GbdtError::LengthMismatch {
            rows: n,
            labels: labels.len(),
        });
    }
    let positives: usize = labels.iter().map(|&y| y as usize).sum();
    if positives == 0 || positives == n {
        return Err(GbdtError::DegenerateLabels);
    }

    let data = Dataset::new(matrix, cfg);
    let prevalence = positives as f64 / n as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let eval_data = eval.map(|(em, ey)| {
        let rows = enforce_nan(em);
        (rows, em.n_rows(), ey)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut margins = vec![base_score; n];
    let mut eval_margins = eval_data
        .as_ref()
        .map(|(_, en, _)| vec![base_score; *en])
        .unwrap_or_default();

    let mut trees = Vec::with_capacity(cfg.n_rounds);
    let mut train_logloss = Vec::with_capacity(cfg.n_rounds);
    let mut eval_logloss = Vec::new();
    let mut best_round = None;
    let mut best_eval = f64::INFINITY;
    let mut audit_acc = audit.then_some(LeafAudit {
        n_leaves: 0,
        max_abs_deviation: 0.0,
        covers_consistent: true,
    });

    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for round in 0..cfg.n_rounds {
        for i in 0..n {
            let (gi, hi) = super::logistic_grad_hess(labels[i], margins[i]);
            g[i] = gi;
            h[i] = hi;
        }

        let rows = sample_rows(n, cfg.subsample_rows, &mut rng);
        let feats = sample_cols(n_feats, cfg.subsample_cols, &mut rng);

        let tree = {
            let ctx = GrowContext {
                data: &data,
                g: &g,
                h: &h,
                cfg,
                feats: &feats,
            };
            ctx.grow_root(rows.clone())
        };

        if let Some(acc) = audit_acc.as_mut() {
            let report = audit_tree(&data, &g, &h, cfg.lambda, &tree, &rows);
            acc.n_leaves += report.n_leaves;
            acc.max_abs_deviation = acc.max_abs_deviation.max(report.max_abs_deviation);
            acc.covers_consistent &= report.covers_consistent;
        }

        for i in 0..n {
            margins[i] += cfg.learning_rate * tree.value(data.row(i));
        }
        train_logloss.push(mean_logloss(labels, &margins));

        if let Some((erows, en, ey)) = eval_data.as_ref() {
            for i in 0..*en {
                eval_margins[i] += cfg.learning_rate * tree.value(&erows[i * n_feats..(i + 1) * n_feats]);
            }
            let ll = mean_logloss(ey, &eval_margins);
            eval_logloss.push(ll);
            if ll < best_eval {
                best_eval = ll;
                best_round = Some(round);
            }
        }

        trees.push(tree);

        if let (Some(patience), Some(best)) = (cfg.early_stopping_rounds, best_round) {
            if round - best >= patience {
                break;
            }
        }
    }

    if let (Some(_), Some(best)) = (cfg.early_stopping_rounds, best_round) {
        trees.truncate(best + 1);
    }

    Ok(FitOutcome {
        model: TreeEnsemble {
            base_score,
            learning_rate: cfg.learning_rate,
            feature_names: matrix.column_names(),
            trees,
        },
        train_logloss,
        eval_logloss,
        best_round,
        audit: audit_acc,
    })
}

/// Numerically stable mean logloss straight from margins.
fn mean_logloss(labels: &[u8], margins: &[f64]) -> f64 {
    let softplus = |x: f64| {
        if x > 35.0 {
            x
        } else {
            x.exp().ln_1p()
        }
    };
    let total: f64 = labels
        .iter()
        .zip(margins)
        .map(|(&y, &m)| if y == 1 { softplus(-m) } else { softplus(m) })
        .sum();
    total / labels.len() as f64
}

fn enforce_nan(matrix: &FeatureMatrix) -> Vec<f64> {
    matrix
        .values
        .iter()
        .zip(&matrix.missing)
        .map(|(&v, &m)| if m { f64::NAN } else { v })
        .collect()
}

/// Bernoulli row sample in ascending index order; falls back to all rows
/// if the draw comes up empty.
fn sample_rows(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if fraction >= 1.0 {
        return (0..n as u32).collect();
    }
    let rows: Vec<u32> = (0..n as u32)
        .filter(|_| rng.gen::<f64>() < fraction)
        .collect();
    if rows.is_empty() {
        (0..n as u32).collect()
    } else {
        rows
    }
}

/// Per-tree column sample, returned ascending so split-search order (and
/// therefore tie-breaking) is deterministic.
fn sample_cols(n_feats: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n_feats).collect();
    }
    let k = ((n_feats as f64 * fraction).round() as usize).clamp(1, n_feats);
    let mut idx: Vec<usize> = (0..n_feats).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_feats);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

const MISSING_BIN: u16 = u16::MAX;

/// Preprocessed training data shared across rounds.
struct Dataset {
    n_rows: usize,
    n_cols: usize,
    /// Row-major values with NaN enforced at masked cells.
    rows: Vec<f64>,
    /// Column-major copy for split scans.
    cols: Vec<Vec<f64>>,
    /// Exact mode: per column, non-missing rows sorted ascending by value.
    sorted: Vec<Vec<u32>>,
    /// Histogram mode: per column, ascending bin edges (midpoints between
    /// observed values) and per-row bin assignments.
    edges: Vec<Vec<f64>>,
    binned: Vec<Vec<u16>>,
}

impl Dataset {
    fn new(matrix: &FeatureMatrix, cfg: &TrainConfig) -> Dataset {
        let n_rows = matrix.n_rows();
        let n_cols = matrix.n_cols();
        let rows = enforce_nan(matrix);
        let mut cols = vec![Vec::with_capacity(n_rows); n_cols];
        for r in 0..n_rows {
            for c in 0..n_cols {
                cols[c].push(rows[r * n_cols + c]);
            }
        }

        let mut dataset = Dataset {
            n_rows,
            n_cols,
            rows,
            cols,
            sorted: Vec::new(),
            edges: Vec::new(),
            binned: Vec::new(),
        };
        match cfg.split_mode {
            SplitMode::Exact => {
                dataset.sorted = (0..n_cols)
                    .map(|c| {
                        let col = &dataset.cols[c];
                        let mut idx: Vec<u32> = (0..n_rows as u32)
                            .filter(|&r| !col[r as usize].is_nan())
                            .collect();
                        idx.sort_by(|&a, &b| {
                            col[a as usize]
                                .partial_cmp(&col[b as usize])
                                .unwrap()
                                .then(a.cmp(&b))
                        });
                        idx
                    })
                    .collect();
            }
            SplitMode::Histogram { max_bins } => {
                let max_bins = max_bins.max(2);
                for c in 0..n_cols {
                    let col = &dataset.cols[c];
                    let edges = build_edges(col, max_bins);
                    let binned = col
                        .iter()
                        .map(|&v| {
                            if v.is_nan() {
                                MISSING_BIN
                            } else {
                                edges.partition_point(|&e| e < v) as u16
                            }
                        })
                        .collect();
                    dataset.edges.push(edges);
                    dataset.binned.push(binned);
                }
            }
        }
        dataset
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.n_cols..(r + 1) * self.n_cols]
    }
}

/// Bin edges: midpoints between adjacent distinct values, thinned to at
/// most `max_bins` bins by taking evenly spaced ranks over the distinct
/// values. Every edge strictly separates two observed values.
fn build_edges(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut values: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let m = values.len();
    if m < 2 {
        return Vec::new();
    }
    let mut edges = Vec::new();
    let mut push_edge = |lo: f64, hi: f64| {
        let mid = 0.5 * (lo + hi);
        if mid > lo && mid <= hi {
            edges.push(mid);
        }
    };
    if m <= max_bins {
        for w in values.windows(2) {
            push_edge(w[0], w[1]);
        }
    } else {
        for k in 1..max_bins {
            let j = k * m / max_bins;
            push_edge(values[j - 1], values[j]);
        }
        edges.dedup();
    }
    edges
}

#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: u32,
}

impl Bin {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn sub(self, other: Bin) -> Bin {
        Bin {
            g: self.g - other.g,
            h: self.h - other.h,
            n: self.n - other.n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

struct GrowContext<'a> {
    data: &'a Dataset,
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a TrainConfig,
    /// Candidate features this tree may split on, ascending.
    feats: &'a [usize],
}

impl<'a> GrowContext<'a> {
    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        let mut gs = 0.0;
        let mut hs = 0.0;
        for &r in rows {
            gs += self.g[r as usize];
            hs += self.h[r as usize];
        }
        (gs, hs)
    }

    fn leaf(&self, rows: &[u32]) -> TreeNode {
        let (gs, hs) = self.sums(rows);
        TreeNode::Leaf {
            weight: -gs / (hs + self.cfg.lambda),
            cover: rows.len() as f64,
        }
    }

    /// Gain of a candidate partition, with the parent score already
    /// subtracted; `None` when a child violates the row or hessian floor.
    #[allow(clippy::too_many_arguments)]
    fn gain(
        &self,
        gl: f64,
        hl: f64,
        nl: u32,
        gp: f64,
        hp: f64,
        np: u32,
        parent_score: f64,
    ) -> Option<f64> {
        let nr = np - nl;
        if nl == 0 || nr == 0 {
            return None;
        }
        let (gr, hr) = (gp - gl, hp - hl);
        let mcw = self.cfg.min_child_weight;
        if hl < mcw || hr < mcw {
            return None;
        }
        let lambda = self.cfg.lambda;
        let score = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score)
            - self.cfg.gamma;
        Some(score)
    }

    /// Replace `best` if `cand` is strictly better; evaluation order makes
    /// ties resolve to the earliest candidate.
    fn consider(best: &mut Option<Candidate>, cand: Candidate) {
        match best {
            Some(b) if cand.gain <= b.gain => {}
            _ => *best = Some(cand),
        }
    }

    fn grow_root(&self, rows: Vec<u32>) -> TreeNode {
        match self.cfg.split_mode {
            SplitMode::Exact => {
                let sorted: Vec<Vec<u32>> = {
                    let mut member = vec![false; self.data.n_rows];
                    for &r in &rows {
                        member[r as usize] = true;
                    }
                    self.feats
                        .iter()
                        .map(|&f| {
                            self.data.sorted[f]
                                .iter()
                                .copied()
                                .filter(|&r| member[r as usize])
                                .collect()
                        })
                        .collect()
                };
                self.grow_exact(rows, sorted, 0)
            }
            SplitMode::Histogram { .. } => {
                let hist = self.build_hist(&rows);
                self.grow_hist(rows, hist, 0)
            }
        }
    }

    /// Partition a node's rows by a chosen split, preserving ascending
    /// row order on both sides.
    fn partition(&self, rows: &[u32], cand: &Candidate) -> (Vec<u32>, Vec<u32>) {
        let col = &self.data.cols[cand.feature];
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &r in rows {
            let v = col[r as usize];
            let go_left = if v.is_nan() {
                cand.default_left
            } else {
                v < cand.threshold
            };
            if go_left {
                left.push(r);
            } else {
                right.push(r);
            }
        }
        (left, right)
    }

    fn split_node(
        &self,
        cand: Candidate,
        cover: usize,
        left: TreeNode,
        right: TreeNode,
    ) -> TreeNode {
        TreeNode::Split {
            feature_index: cand.feature,
            threshold: cand.threshold,
            default_left: cand.default_left,
            left: Box::new(left),
            right: Box::new(right),
            cover: cover as f64,
        }
    }

    // ---- exact mode ----

    fn grow_exact(&self, rows: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> TreeNode {
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return self.leaf(&rows);
        }
        let (gp, hp) = self.sums(&rows);
        let np = rows.len() as u32;
        let parent_score = gp * gp / (hp + self.cfg.lambda);

        let mut best: Option<Candidate> = None;
        for (pos, &f) in self.feats.iter().enumerate() {
            let list = &sorted[pos];
            if list.len() < 2 && list.len() == rows.len() {
                continue;
            }
            let col = &self.data.cols[f];
            // Statistics of rows missing this feature = node − present.
            let (mut g_pres, mut h_pres) = (0.0, 0.0);
            for &r in list {
                g_pres += self.g[r as usize];
                h_pres += self.h[r as usize];
            }
            let g_miss = gp - g_pres;
            let h_miss = hp - h_pres;
            let n_miss = np - list.len() as u32;

            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for w in 0..list.len().saturating_sub(1) {
                let r = list[w] as usize;
                gl += self.g[r];
                hl += self.h[r];
                nl += 1;
                let v = col[r];
                let v_next = col[list[w + 1] as usize];
                if v >= v_next {
                    continue;
                }
                let threshold = 0.5 * (v + v_next);
                if threshold <= v {
                    continue;
                }
                // Missing rows left, then right.
                for default_left in [true, false] {
                    let (cgl, chl, cnl) = if default_left {
                        (gl + g_miss, hl + h_miss, nl + n_miss)
                    } else {
                        (gl, hl, nl)
                    };
                    if let Some(gain) = self.gain(cgl, chl, cnl, gp, hp, np, parent_score) {
                        Self::consider(
                            &mut best,
                            Candidate {
                                gain,
                                feature: f,
                                threshold,
                                default_left,
                            },
                        );
                    }
                }
            }
        }

        let Some(cand) = best.filter(|c| c.gain > 0.0) else {
            return self.leaf(&rows);
        };
        let (rows_l, rows_r) = self.partition(&rows, &cand);
        let mut member = vec![false; self.data.n_rows];
        for &r in &rows_l {
            member[r as usize] = true;
        }
        let mut sorted_l = Vec::with_capacity(sorted.len());
        let mut sorted_r = Vec::with_capacity(sorted.len());
        for list in sorted {
            let mut l = Vec::new();
            let mut r = Vec::new();
            for row in list {
                if member[row as usize] {
                    l.push(row);
                } else {
                    r.push(row);
                }
            }
            sorted_l.push(l);
            sorted_r.push(r);
        }
        let cover = rows.len();
        drop(rows);
        let left = self.grow_exact(rows_l, sorted_l, depth + 1);
        let right = self.grow_exact(rows_r, sorted_r, depth + 1);
        self.split_node(cand, cover, left, right)
    }

    // ---- histogram mode ----

    /// One histogram per candidate feature; the extra final slot holds the
    /// missing-value statistics.
    fn build_hist(&self, rows: &[u32]) -> Vec<Vec<Bin>> {
        self.feats
            .iter()
            .map(|&f| {
                let n_bins = self.data.edges[f].len() + 1;
                let binned = &self.data.binned[f];
                let mut hist = vec![Bin::default(); n_bins + 1];
                for &r in rows {
                    let b = binned[r as usize];
                    let slot = if b == MISSING_BIN { n_bins } else { b as usize };
                    hist[slot].add(self.g[r as usize], self.h[r as usize]);
                }
                hist
            })
            .collect()
    }

    fn grow_hist(&self, rows: Vec<u32>, hist: Vec<Vec<Bin>>, depth: usize) -> TreeNode {
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return self.leaf(&rows);
        }
        let (gp, hp) = self.sums(&rows);
        let np = rows.len() as u32;
        let parent_score = gp * gp / (hp + self.cfg.lambda);

        let mut best: Option<Candidate> = None;
        for (pos, &f) in self.feats.iter().enumerate() {
            let edges = &self.data.edges[f];
            if edges.is_empty() {
                continue;
            }
            let fh = &hist[pos];
            let miss = fh[edges.len() + 1];
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for (b, &edge) in edges.iter().enumerate() {
                let bin = fh[b];
                gl += bin.g;
                hl += bin.h;
                nl += bin.n;
                for default_left in [true, false] {
                    let (cgl, chl, cnl) = if default_left {
                        (gl + miss.g, hl + miss.h, nl + miss.n)
                    } else {
                        (gl, hl, nl)
                    };
                    if let Some(gain) = self.gain(cgl, chl, cnl, gp, hp, np, parent_score) {
                        Self::consider(
                            &mut best,
                            Candidate {
                                gain,
                                feature: f,
                                threshold: edge,
                                default_left,
                            },
                        );
                    }
                }
            }
        }

        let Some(cand) = best.filter(|c| c.gain > 0.0) else {
            return self.leaf(&rows);
        };
        let (rows_l, rows_r) = self.partition(&rows, &cand);
        // Build the smaller child's histograms; derive the sibling by
        // subtraction from the parent.
        let (small, big_is_left) = if rows_l.len() <= rows_r.len() {
            (&rows_l, false)
        } else {
            (&rows_r, true)
        };
        let hist_small = self.build_hist(small);
        let hist_big: Vec<Vec<Bin>> = hist
            .iter()
            .zip(&hist_small)
            .map(|(p, s)| p.iter().zip(s).map(|(&pb, &sb)| pb.sub(sb)).collect())
            .collect();
        drop(hist);
        let (hist_l, hist_r) = if big_is_left {
            (hist_big, hist_small)
        } else {
            (hist_small, hist_big)
        };
        let cover = rows.len();
        drop(rows);
        let left = self.grow_hist(rows_l, hist_l, depth + 1);
        let right = self.grow_hist(rows_r, hist_r, depth + 1);
        self.split_node(cand, cover, left, right)
    }
}

/// Recompute every leaf weight of a finished tree by routing the training
/// rows (the ones the tree was actually fit on) down from the root.
fn audit_tree(
    data: &Dataset,
    g: &[f64],
    h: &[f64],
    lambda: f64,
    tree: &TreeNode,
    rows: &[u32],
) -> LeafAudit {
    fn walk(
        data: &Dataset,
        g: &[f64],
        h: &[f64],
        lambda: f64,
        node: &TreeNode,
        rows: Vec<u32>,
        report: &mut LeafAudit,
    ) {
        match node {
            TreeNode::Leaf { weight, cover } => {
                report.n_leaves += 1;
                report.covers_consistent &= *cover == rows.len() as f64;
                let mut gs = 0.0;
                let mut hs = 0.0;
                for &r in &rows {
                    gs += g[r as usize];
                    hs += h[r as usize];
                }
                let recomputed = -gs / (hs + lambda);
                report.max_abs_deviation = report.max_abs_deviation.max((weight - recomputed).abs());
            }
            TreeNode::Split {
                feature_index,
                threshold,
                default_left,
                left,
                right,
                cover,
            } => {
                report.covers_consistent &=
                    *cover == rows.len() as f64 && *cover == left.cover() + right.cover();
                let col = &data.cols[*feature_index];
                let mut rl = Vec::new();
                let mut rr = Vec::new();
                for r in rows {
                    let v = col[r as usize];
                    let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                    if go_left {
                        rl.push(r);
                    } else {
                        rr.push(r);
                    }
                }
                walk(data, g, h, lambda, left, rl, report);
                walk(data, g, h, lambda, right, rr, report);
            }
        }
    }

    let mut report = LeafAudit {
        n_leaves: 0,
        max_abs_deviation: 0.0,
        covers_consistent: true,
    };
    walk(data, g, h, lambda, tree, rows.to_vec(), &mut report);
    report
}

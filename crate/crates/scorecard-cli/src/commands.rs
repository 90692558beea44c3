//! Implementations of the pipeline subcommands. Each command reads its
//! inputs from disk, writes its outputs under the configured directory and
//! records them in the provenance manifest.

use crate::artifacts;
use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use scorecard::datamodel::{ingest_events, ingest_users, write_events, write_users, UserRecord};
use scorecard::explain::{importance_summary, tree_shap};
use scorecard::features::{
    default_feature_catalog, featurize, FeatureMatrix, FeatureSpec, Variant, Vocabulary,
};
use scorecard::gbdt::{fit_full, TreeEnsemble};
use scorecard::metrics::{
    baseline_cost, choose_threshold, decisions_from, example_costs, mann_whitney_u, relation_auc_u,
    run_bootstrap, savings, total_cost, write_experiment_json, write_iterations_csv, Alternative,
    ExperimentResult, MwuMethod, MwuResult,
};
use scorecard::segments::{segment_scores, split, write_assignments_csv, SegmentName, Side};
use scorecard::synth::{describe_truth, generate, save_manifest};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Resolved configuration plus the hash that ties outputs back to it.
pub struct Ctx {
    pub cfg: RunConfig,
    pub config_hash: String,
}

impl Ctx {
    fn record(&self, paths: &[PathBuf]) -> Result<()> {
        artifacts::record(
            &self.cfg.out_dir(),
            &self.config_hash,
            self.cfg.seed,
            paths,
        )
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(self.cfg.out_dir())
            .with_context(|| format!("creating {}", self.cfg.out_dir))
    }
}

fn load_users(ctx: &Ctx) -> Result<Vec<UserRecord>> {
    let path = ctx.cfg.users_path();
    let (users, schema, report) =
        ingest_users(&path).with_context(|| format!("ingesting {}", path.display()))?;
    log::info!(
        "users: {} kept, {} skipped (device_score: {}, wealth_score: {})",
        report.rows_kept,
        report.rows_skipped(),
        schema.has_device_score,
        schema.has_wealth_score
    );
    for err in report.skipped.iter().take(5) {
        log::warn!("skipped user row: {err}");
    }
    Ok(users)
}

fn load_events(ctx: &Ctx) -> Result<Vec<scorecard::datamodel::TransactionEvent>> {
    let path = ctx.cfg.events_path();
    let (events, report) =
        ingest_events(&path).with_context(|| format!("ingesting {}", path.display()))?;
    log::info!(
        "events: {} kept, {} skipped, {} unknown verticals coerced",
        report.rows_kept,
        report.rows_skipped(),
        report.unknown_verticals
    );
    for err in report.skipped.iter().take(5) {
        log::warn!("skipped event: {err}");
    }
    Ok(events)
}

fn load_matrix(ctx: &Ctx) -> Result<FeatureMatrix> {
    let path = ctx.cfg.features_path();
    FeatureMatrix::read_csv(&path).with_context(|| format!("reading {}", path.display()))
}

/// The feature matrix must be row-aligned with the user file; everything
/// downstream joins them by position.
fn check_alignment(users: &[UserRecord], matrix: &FeatureMatrix) -> Result<()> {
    if users.len() != matrix.n_rows() {
        bail!(
            "feature matrix has {} rows but the user file has {}; re-run featurize",
            matrix.n_rows(),
            users.len()
        );
    }
    for (u, r) in users.iter().zip(&matrix.row_ids) {
        if &u.user_id != r {
            bail!(
                "feature matrix row {r} does not match user {}; re-run featurize",
                u.user_id
            );
        }
    }
    Ok(())
}

fn labels_of(users: &[UserRecord]) -> Vec<u8> {
    users.iter().map(|u| u.label).collect()
}

fn credit_lines_of(users: &[UserRecord]) -> Vec<f64> {
    users.iter().map(|u| u.credit_line.as_f64()).collect()
}

pub fn cmd_generate(ctx: &Ctx, preset: Option<&str>) -> Result<()> {
    let gcfg = ctx.cfg.generator_config(preset)?;
    log::info!(
        "generating {} users at a {:.1}% target default rate (seed {})",
        gcfg.n_users,
        100.0 * gcfg.base_default_rate,
        gcfg.seed
    );
    let cohort = generate(&gcfg)?;
    ctx.ensure_out_dir()?;
    let users_path = ctx.cfg.users_path();
    let events_path = ctx.cfg.events_path();
    let truth_path = ctx.cfg.truth_path();
    write_users(&users_path, &cohort.users)?;
    write_events(&events_path, &cohort.events)?;
    save_manifest(&truth_path, &cohort.manifest)?;
    println!("{}", describe_truth(&cohort.manifest));
    ctx.record(&[users_path, events_path, truth_path])
}

fn selected_catalog(cfg: &RunConfig) -> Result<Vec<FeatureSpec>> {
    let catalog = default_feature_catalog();
    if cfg.features.include.is_empty() {
        return Ok(catalog);
    }
    for want in &cfg.features.include {
        if !catalog.iter().any(|s| &s.name == want) {
            bail!("feature {want:?} is not in the catalog");
        }
    }
    Ok(catalog
        .into_iter()
        .filter(|s| cfg.features.include.contains(&s.name))
        .collect())
}

pub fn cmd_featurize(ctx: &Ctx) -> Result<()> {
    let users = load_users(ctx)?;
    let events = load_events(ctx)?;
    let specs = selected_catalog(&ctx.cfg)?;
    let vocab = Vocabulary::build(&users);
    let months = ctx.cfg.window.months;
    let matrix = featurize(&users, &events, &specs, &vocab, months)?;
    ctx.ensure_out_dir()?;
    let features_path = ctx.cfg.features_path();
    matrix.write_csv(&features_path)?;
    log::info!(
        "feature matrix: {} rows x {} columns",
        matrix.n_rows(),
        matrix.n_cols()
    );

    // Segmentation scores ride along in one aligned file. Generated
    // cohorts share a single snapshot date; take the latest otherwise.
    let snapshot = users
        .iter()
        .map(|u| u.snapshot_date)
        .max()
        .context("user file is empty")?;
    let device = segment_scores(SegmentName::DeviceScore, &users, &events, snapshot, months);
    let wealth = segment_scores(SegmentName::WealthScore, &users, &events, snapshot, months);
    let rfm = segment_scores(SegmentName::Rfm, &users, &events, snapshot, months);
    let seg_path = ctx.cfg.segment_scores_path();
    let mut w = BufWriter::new(
        File::create(&seg_path).with_context(|| format!("writing {}", seg_path.display()))?,
    );
    writeln!(w, "user_id,device_score,wealth_score,rfm")?;
    for (i, u) in users.iter().enumerate() {
        writeln!(w, "{},{},{},{}", u.user_id, device[i], wealth[i], rfm[i])?;
    }
    w.flush()?;

    let mut sidecar = features_path.as_os_str().to_owned();
    sidecar.push(".manifest.json");
    ctx.record(&[features_path, PathBuf::from(sidecar), seg_path])
}

#[derive(Serialize)]
struct FitReport {
    variant: Variant,
    n_rows: usize,
    n_features: usize,
    n_trees: usize,
    n_leaves: usize,
    base_score: f64,
    final_train_logloss: f64,
    best_round: Option<usize>,
    leaf_audit_max_abs_deviation: f64,
    leaf_audit_covers_consistent: bool,
}

pub fn cmd_train(ctx: &Ctx, only_variant: Option<&str>) -> Result<()> {
    let users = load_users(ctx)?;
    let matrix = load_matrix(ctx)?;
    check_alignment(&users, &matrix)?;
    let labels = labels_of(&users);
    let train_cfg = ctx.cfg.train_config();
    ctx.ensure_out_dir()?;
    let mut written = Vec::new();
    for variant in ctx.cfg.variants(only_variant)? {
        let projected = matrix.project_variant(variant)?;
        let outcome = fit_full(&projected, &labels, &train_cfg, None, true)?;
        let audit = outcome.audit.as_ref().expect("audit was requested");
        let report = FitReport {
            variant,
            n_rows: projected.n_rows(),
            n_features: projected.n_cols(),
            n_trees: outcome.model.trees.len(),
            n_leaves: outcome.model.n_leaves(),
            base_score: outcome.model.base_score,
            final_train_logloss: *outcome.train_logloss.last().unwrap_or(&f64::NAN),
            best_round: outcome.best_round,
            leaf_audit_max_abs_deviation: audit.max_abs_deviation,
            leaf_audit_covers_consistent: audit.covers_consistent,
        };
        log::info!(
            "trained {}: {} trees, {} leaves, train logloss {:.6}",
            variant.as_str(),
            report.n_trees,
            report.n_leaves,
            report.final_train_logloss
        );
        let model_path = ctx.cfg.model_path(variant);
        outcome.model.save(&model_path)?;
        let report_path = ctx.cfg.fit_report_path(variant);
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(&report_path)?),
            &report,
        )?;
        written.push(model_path);
        written.push(report_path);
    }
    ctx.record(&written)
}

#[derive(Serialize)]
struct MetricsReport {
    variant: Variant,
    /// Scores come from the same rows the model was fit on; the honest
    /// out-of-sample numbers are the compare command's bootstrap.
    evaluation: &'static str,
    n_users: usize,
    n_defaulters: usize,
    auc: f64,
    ks: f64,
    /// |AUC − U/(n1·n0)|, two independently coded routes to the same rank
    /// statistic; should sit at zero.
    rank_identity_gap: f64,
    threshold: f64,
    cost: f64,
    baseline_cost: f64,
    savings: f64,
}

pub fn cmd_evaluate(ctx: &Ctx, only_variant: Option<&str>) -> Result<()> {
    let users = load_users(ctx)?;
    let matrix = load_matrix(ctx)?;
    check_alignment(&users, &matrix)?;
    let labels = labels_of(&users);
    let lines = credit_lines_of(&users);
    let costs = example_costs(&lines, &labels, &ctx.cfg.cost)?;
    ctx.ensure_out_dir()?;
    let mut written = Vec::new();
    for variant in ctx.cfg.variants(only_variant)? {
        let model = TreeEnsemble::load(&ctx.cfg.model_path(variant))?;
        let projected = matrix.project_variant(variant)?;
        let scores = model.predict_proba(&projected)?;
        let (auc_value, u_over_pairs) = relation_auc_u(&scores, &labels)?;
        let ks_value = scorecard::metrics::ks(&scores, &labels)?;
        let threshold = choose_threshold(&scores, &labels, &costs)?;
        let decisions = decisions_from(&scores, threshold);
        let cost = total_cost(&decisions, &labels, &costs)?;
        let base = baseline_cost(&labels, &costs)?;
        let report = MetricsReport {
            variant,
            evaluation: "resubstitution",
            n_users: users.len(),
            n_defaulters: labels.iter().map(|&y| y as usize).sum(),
            auc: auc_value,
            ks: ks_value,
            rank_identity_gap: (auc_value - u_over_pairs).abs(),
            threshold,
            cost,
            baseline_cost: base,
            savings: savings(cost, base)?,
        };
        log::info!(
            "{}: auc {:.4}, ks {:.4}, savings {:.4} at threshold {:.4}",
            variant.as_str(),
            report.auc,
            report.ks,
            report.savings,
            report.threshold
        );

        let scores_path = ctx.cfg.scores_path(variant);
        let mut w = BufWriter::new(File::create(&scores_path)?);
        writeln!(w, "user_id,label,score,decision")?;
        for (i, u) in users.iter().enumerate() {
            let decision = if decisions[i] { "deny" } else { "grant" };
            writeln!(w, "{},{},{},{}", u.user_id, labels[i], scores[i], decision)?;
        }
        w.flush()?;

        let metrics_path = ctx.cfg.metrics_path(variant);
        serde_json::to_writer_pretty(BufWriter::new(File::create(&metrics_path)?), &report)?;
        written.push(scores_path);
        written.push(metrics_path);
    }
    ctx.record(&written)
}

pub fn cmd_explain(ctx: &Ctx, only_variant: Option<&str>) -> Result<()> {
    let users = load_users(ctx)?;
    let matrix = load_matrix(ctx)?;
    check_alignment(&users, &matrix)?;
    ctx.ensure_out_dir()?;
    let mut written = Vec::new();
    for variant in ctx.cfg.variants(only_variant)? {
        let model = TreeEnsemble::load(&ctx.cfg.model_path(variant))?;
        let projected = matrix.project_variant(variant)?;
        let attrs = tree_shap(&model, &projected)?;
        let ranking = importance_summary(&attrs, &projected)?;
        let base_value = attrs.first().map(|a| a.base_value).unwrap_or(0.0);
        for entry in ranking.iter().take(5) {
            log::info!(
                "{} importance: {} mean|phi| {:.4} ({:?})",
                variant.as_str(),
                entry.feature,
                entry.mean_abs_phi,
                entry.sign_profile
            );
        }
        let attr_path = ctx.cfg.attributions_path(variant);
        scorecard::explain::write_attributions_csv(&attr_path, &attrs, &projected)?;
        let summary_path = ctx.cfg.shap_summary_path(variant);
        scorecard::explain::write_summary_json(&summary_path, base_value, &ranking)?;
        let bee_path = ctx.cfg.beeswarm_path(variant);
        scorecard::explain::write_beeswarm_csv(&bee_path, &attrs, &projected)?;
        written.push(attr_path);
        written.push(summary_path);
        written.push(bee_path);
    }
    ctx.record(&written)
}

struct Population {
    segment: SegmentName,
    side: Side,
    cut: Option<f64>,
    rows: Vec<usize>,
}

#[derive(Serialize)]
struct PopulationReport<'a> {
    segment: &'static str,
    side: &'static str,
    cut: Option<f64>,
    n_users: usize,
    n_defaulters: usize,
    summaries: &'a [scorecard::metrics::VariantSummary],
    comparisons: &'a [scorecard::metrics::MetricComparison],
}

fn read_segment_scores(path: &Path, users: &[UserRecord]) -> Result<Vec<(SegmentName, Vec<f64>)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("segment score file is empty")?;
    if header != "user_id,device_score,wealth_score,rfm" {
        bail!("unexpected segment score header {header:?}; re-run featurize");
    }
    let mut device = Vec::new();
    let mut wealth = Vec::new();
    let mut rfm = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("segment score line {} is malformed", i + 2);
        }
        match users.get(i) {
            Some(u) if u.user_id == parts[0] => {}
            _ => bail!("segment scores do not align with the user file; re-run featurize"),
        }
        device.push(parts[1].parse::<f64>()?);
        wealth.push(parts[2].parse::<f64>()?);
        rfm.push(parts[3].parse::<f64>()?);
    }
    if device.len() != users.len() {
        bail!("segment score file has {} rows, expected {}", device.len(), users.len());
    }
    Ok(vec![
        (SegmentName::DeviceScore, device),
        (SegmentName::WealthScore, wealth),
        (SegmentName::Rfm, rfm),
    ])
}

fn format_p(p: f64) -> String {
    format!("{p:.3e}")
}

pub fn cmd_compare(
    ctx: &Ctx,
    segments_flag: Option<&str>,
    iterations_a: Option<&Path>,
    iterations_b: Option<&Path>,
) -> Result<()> {
    if let (Some(a), Some(b)) = (iterations_a, iterations_b) {
        return compare_iteration_files(ctx, a, b);
    }
    let variants = ctx.cfg.variants(None)?;
    if variants.len() < 2 {
        bail!("compare needs at least two variants; the first is the baseline");
    }
    let users = load_users(ctx)?;
    let matrix = load_matrix(ctx)?;
    check_alignment(&users, &matrix)?;
    let labels = labels_of(&users);
    let lines = credit_lines_of(&users);
    let user_ids: Vec<String> = users.iter().map(|u| u.user_id.clone()).collect();
    let all_scores = read_segment_scores(&ctx.cfg.segment_scores_path(), &users)?;
    ctx.ensure_out_dir()?;
    let mut written = Vec::new();

    // population list: whole cohort first, then each segmentation's sides
    let mut populations = vec![Population {
        segment: SegmentName::None,
        side: Side::All,
        cut: None,
        rows: (0..users.len()).collect(),
    }];
    for name in ctx.cfg.segmentations(segments_flag)? {
        let scores = &all_scores
            .iter()
            .find(|(n, _)| *n == name)
            .expect("all segmentations are in the score file")
            .1;
        let result = split(scores, ctx.cfg.segment_cut(name))?;
        if result.degenerate {
            log::warn!(
                "{} split is degenerate at cut {}; every user lands low",
                name.as_str(),
                result.cut
            );
        }
        let assign_path = ctx
            .cfg
            .out_dir()
            .join(format!("assignments_{}.csv", name.as_str()));
        write_assignments_csv(&assign_path, name, &user_ids, &result)?;
        written.push(assign_path);
        populations.push(Population {
            segment: name,
            side: Side::Low,
            cut: Some(result.cut),
            rows: result.low.clone(),
        });
        populations.push(Population {
            segment: name,
            side: Side::High,
            cut: Some(result.cut),
            rows: result.high,
        });
    }

    let bcfg = ctx.cfg.bootstrap_config();
    let baseline = variants[0];
    let challenger = variants[1];
    let mut results: Vec<(usize, ExperimentResult)> = Vec::new();
    for (idx, pop) in populations.iter().enumerate() {
        let sub_matrix = matrix.select_rows(&pop.rows);
        let sub_labels: Vec<u8> = pop.rows.iter().map(|&r| labels[r]).collect();
        let sub_lines: Vec<f64> = pop.rows.iter().map(|&r| lines[r]).collect();
        log::info!(
            "bootstrap {}/{}: {} users, {} iterations",
            pop.segment.as_str(),
            pop.side.as_str(),
            pop.rows.len(),
            bcfg.iterations
        );
        let result = run_bootstrap(&sub_matrix, &sub_labels, &sub_lines, &variants, &bcfg)
            .with_context(|| {
                format!(
                    "bootstrap failed on population {}/{}",
                    pop.segment.as_str(),
                    pop.side.as_str()
                )
            })?;
        let iter_path = ctx.cfg.out_dir().join(format!(
            "iterations_{}_{}.csv",
            pop.segment.as_str(),
            pop.side.as_str()
        ));
        write_iterations_csv(&iter_path, &result)?;
        written.push(iter_path);
        results.push((idx, result));
    }

    // p-value table: one row per population, AUC and KS columns
    let table_path = ctx.cfg.out_dir().join("compare_table.csv");
    let mut w = BufWriter::new(File::create(&table_path)?);
    writeln!(w, "segment,side,n_users,p_auc,p_ks")?;
    println!("population              n     p(auc)     p(ks)");
    for (idx, result) in &results {
        let pop = &populations[*idx];
        let p_auc = result
            .comparison(challenger, "auc")
            .context("missing auc comparison")?
            .p_value;
        let p_ks = result
            .comparison(challenger, "ks")
            .context("missing ks comparison")?
            .p_value;
        writeln!(
            w,
            "{},{},{},{},{}",
            pop.segment.as_str(),
            pop.side.as_str(),
            pop.rows.len(),
            format_p(p_auc),
            format_p(p_ks)
        )?;
        println!(
            "{:<14} {:>5} {:>8} {:>10} {:>9}",
            pop.segment.as_str(),
            pop.side.as_str(),
            pop.rows.len(),
            format_p(p_auc),
            format_p(p_ks)
        );
    }
    w.flush()?;
    written.push(table_path);

    // savings table for the same populations
    let savings_path = ctx.cfg.out_dir().join("savings_table.csv");
    let mut w = BufWriter::new(File::create(&savings_path)?);
    writeln!(
        w,
        "segment,side,n_users,baseline_savings_mean,challenger_savings_mean,p_savings"
    )?;
    for (idx, result) in &results {
        let pop = &populations[*idx];
        let base_mean = result
            .summary(baseline)
            .context("missing baseline summary")?
            .savings
            .mean;
        let chal_mean = result
            .summary(challenger)
            .context("missing challenger summary")?
            .savings
            .mean;
        let p_sav = result
            .comparison(challenger, "savings")
            .context("missing savings comparison")?
            .p_value;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            pop.segment.as_str(),
            pop.side.as_str(),
            pop.rows.len(),
            base_mean,
            chal_mean,
            format_p(p_sav)
        )?;
    }
    w.flush()?;
    written.push(savings_path);

    // full experiment dump per population, plus a combined summary
    let reports: Vec<PopulationReport> = results
        .iter()
        .map(|(idx, result)| {
            let pop = &populations[*idx];
            PopulationReport {
                segment: pop.segment.as_str(),
                side: pop.side.as_str(),
                cut: pop.cut,
                n_users: pop.rows.len(),
                n_defaulters: pop.rows.iter().map(|&r| labels[r] as usize).sum(),
                summaries: &result.summaries,
                comparisons: &result.comparisons,
            }
        })
        .collect();
    let summary_path = ctx.cfg.out_dir().join("compare_summary.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&summary_path)?), &reports)?;
    written.push(summary_path);

    for (idx, result) in &results {
        let pop = &populations[*idx];
        if pop.segment == SegmentName::None {
            let exp_path = ctx.cfg.out_dir().join("experiment_none_all.json");
            write_experiment_json(&exp_path, result)?;
            written.push(exp_path);
        }
    }
    ctx.record(&written)
}

/// Column-wise rank comparison of two iteration-metrics files, for
/// re-testing existing runs without refitting anything.
fn compare_iteration_files(ctx: &Ctx, a: &Path, b: &Path) -> Result<()> {
    let read = |path: &Path| -> Result<Vec<(f64, f64, f64)>> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header = lines.next().context("iteration file is empty")?;
        let cols: Vec<&str> = header.split(',').collect();
        let col = |name: &str| -> Result<usize> {
            cols.iter()
                .position(|c| *c == name)
                .with_context(|| format!("{} lacks a {name} column", path.display()))
        };
        let (ia, ik, is) = (col("auc")?, col("ks")?, col("savings")?);
        let mut rows = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split(',').collect();
            rows.push((
                parts[ia].parse::<f64>()?,
                parts[ik].parse::<f64>()?,
                parts[is].parse::<f64>()?,
            ));
        }
        if rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(rows)
    };
    let rows_a = read(a)?;
    let rows_b = read(b)?;
    let metric = |rows: &[(f64, f64, f64)], i: usize| -> Vec<f64> {
        rows.iter()
            .map(|r| match i {
                0 => r.0,
                1 => r.1,
                _ => r.2,
            })
            .collect()
    };
    let mut out = serde_json::Map::new();
    println!("metric     u          p");
    for (i, name) in ["auc", "ks", "savings"].iter().enumerate() {
        let r: MwuResult = mann_whitney_u(
            &metric(&rows_a, i),
            &metric(&rows_b, i),
            Alternative::TwoSided,
        )?;
        println!("{:<8} {:>8} {:>12}", name, r.u_b, format_p(r.p_value));
        out.insert(
            name.to_string(),
            serde_json::json!({
                "u_a": r.u_a,
                "u_b": r.u_b,
                "z": r.z,
                "p_value": r.p_value,
                "method": match r.method {
                    MwuMethod::Exact => "exact",
                    MwuMethod::NormalApprox => "normal_approx",
                },
            }),
        );
    }
    ctx.ensure_out_dir()?;
    let path = ctx.cfg.out_dir().join("compare_files.json");
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(&path)?),
        &serde_json::Value::Object(out),
    )?;
    ctx.record(&[path])
}

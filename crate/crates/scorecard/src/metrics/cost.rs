//! Example-dependent misclassification costs for credit decisions.
//!
//! Correct decisions cost nothing. Granting a future defaulter loses the
//! drawn credit line times the loss-given-default. Denying a good customer
//! forfeits that customer's interest margin and, on top, a population-level
//! opportunity term: the average cost of replacing the rejected customer
//! with a marginal applicant. All quantities are in the same currency as
//! the credit lines.

use super::MetricsError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParameters {
    /// Lending interest rate earned on a performing line.
    pub int_r: f64,
    /// Cost-of-funds rate paid on the same balance.
    pub int_cf: f64,
    /// Fraction of the credit line lost when a customer defaults.
    pub l_gd: f64,
}

impl Default for CostParameters {
    fn default() -> Self {
        Self {
            int_r: 0.40,
            int_cf: 0.10,
            l_gd: 0.75,
        }
    }
}

impl CostParameters {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.l_gd > 0.0 && self.l_gd <= 1.0) {
            return Err(MetricsError::InvalidParameter(format!(
                "l_gd must be in (0, 1], got {}",
                self.l_gd
            )));
        }
        if !(self.int_cf >= 0.0 && self.int_r > self.int_cf) {
            return Err(MetricsError::InvalidParameter(format!(
                "need int_r > int_cf >= 0, got int_r={} int_cf={}",
                self.int_r, self.int_cf
            )));
        }
        Ok(())
    }
}

/// Per-example cost of each wrong decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostMatrixRow {
    /// Cost of granting this example if it defaults (false negative).
    pub c_fn: f64,
    /// Cost of denying this example if it would have repaid (false
    /// positive).
    pub c_fp: f64,
}

/// Build the per-example cost rows for a population. The false-positive
/// side includes the shared opportunity term, which depends on the
/// population's default prior and average line, so costs must be built on
/// the same population they will be summed over.
pub fn example_costs(
    credit_lines: &[f64],
    labels: &[u8],
    params: &CostParameters,
) -> Result<Vec<CostMatrixRow>, MetricsError> {
    params.validate()?;
    if credit_lines.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if credit_lines.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: credit_lines.len(),
            right: labels.len(),
        });
    }
    if credit_lines.iter().any(|c| !c.is_finite() || *c <= 0.0) {
        return Err(MetricsError::InvalidParameter(
            "credit lines must be positive and finite".to_string(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(MetricsError::BadLabel(bad));
    }
    let n = credit_lines.len() as f64;
    let pi0 = labels.iter().filter(|&&y| y == 1).count() as f64 / n;
    let margin_rate = params.int_r - params.int_cf;
    let mean_cl = credit_lines.iter().sum::<f64>() / n;
    let mean_r = mean_cl * margin_rate;
    // expected cost of the marginal replacement applicant, floored at zero
    let c_fp_shared = (pi0 * mean_cl * params.l_gd - (1.0 - pi0) * mean_r).max(0.0);
    Ok(credit_lines
        .iter()
        .map(|&cl| CostMatrixRow {
            c_fn: cl * params.l_gd,
            c_fp: cl * margin_rate + c_fp_shared,
        })
        .collect())
}

/// Deny decisions from scores: probability at or above the threshold is
/// denied.
pub fn decisions_from(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&p| p >= threshold).collect()
}

/// Total cost of a decision vector: false negatives (granted defaulters)
/// plus false positives (denied payers). Correct decisions are free.
pub fn total_cost(
    decisions: &[bool],
    labels: &[u8],
    costs: &[CostMatrixRow],
) -> Result<f64, MetricsError> {
    if decisions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if decisions.len() != labels.len() || decisions.len() != costs.len() {
        return Err(MetricsError::LengthMismatch {
            left: decisions.len(),
            right: labels.len().min(costs.len()),
        });
    }
    let mut total = 0.0;
    for ((&deny, &y), row) in decisions.iter().zip(labels).zip(costs) {
        if y == 1 && !deny {
            total += row.c_fn;
        } else if y == 0 && deny {
            total += row.c_fp;
        }
    }
    Ok(total)
}

/// Cost of the better of the two trivial policies (grant everyone / deny
/// everyone); the reference against which savings are measured.
pub fn baseline_cost(labels: &[u8], costs: &[CostMatrixRow]) -> Result<f64, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if labels.len() != costs.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels.len(),
            right: costs.len(),
        });
    }
    let grant_all: f64 = labels
        .iter()
        .zip(costs)
        .filter(|(&y, _)| y == 1)
        .map(|(_, r)| r.c_fn)
        .sum();
    let deny_all: f64 = labels
        .iter()
        .zip(costs)
        .filter(|(&y, _)| y == 0)
        .map(|(_, r)| r.c_fp)
        .sum();
    Ok(grant_all.min(deny_all))
}

/// Fraction of the trivial-policy cost a decision policy saves; negative
/// when the policy does worse than the better trivial policy.
pub fn savings(cost: f64, baseline: f64) -> Result<f64, MetricsError> {
    if !(baseline > 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "baseline cost must be positive, got {baseline}"
        )));
    }
    Ok((baseline - cost) / baseline)
}

/// Pick the cost-minimizing deny threshold on a (training) population.
/// Candidates are the observed scores plus 1.0 (grant all); the lowest
/// cost wins and cost ties go to the smallest threshold.
pub fn choose_threshold(
    scores: &[f64],
    labels: &[u8],
    costs: &[CostMatrixRow],
) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if scores.len() != labels.len() || scores.len() != costs.len() {
        return Err(MetricsError::LengthMismatch {
            left: scores.len(),
            right: labels.len().min(costs.len()),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    // cut at k: indices order[..k] granted, order[k..] denied
    // cost(k) = sum of c_fn over granted positives + c_fp over denied negatives
    let mut suffix_fp = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let i = order[k];
        suffix_fp[k] =
            suffix_fp[k + 1] + if labels[i] == 0 { costs[i].c_fp } else { 0.0 };
    }
    let mut best_cost = f64::INFINITY;
    let mut best_t = 1.0;
    let mut prefix_fn = 0.0;
    let mut k = 0;
    while k <= n {
        // candidate threshold denying exactly order[k..]
        let t = if k == n { 1.0 } else { scores[order[k]] };
        // skip interior positions of a tie group: identical decisions
        let valid = k == 0 || k == n || scores[order[k]] > scores[order[k - 1]];
        if valid {
            let cost = prefix_fn + suffix_fp[k];
            if cost < best_cost - 1e-12 || (cost < best_cost + 1e-12 && t < best_t) {
                best_cost = cost;
                best_t = t;
            }
        }
        if k < n {
            let i = order[k];
            if labels[i] == 1 {
                prefix_fn += costs[i].c_fn;
            }
        }
        k += 1;
    }
    Ok(best_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<f64>, Vec<u8>, Vec<CostMatrixRow>) {
        let cl = vec![100.0, 200.0, 300.0, 400.0];
        let labels = vec![1, 0, 0, 1];
        let rows = example_costs(&cl, &labels, &CostParameters::default()).unwrap();
        (cl, labels, rows)
    }

    #[test]
    fn worked_example_costs() {
        // mean line 250, prior 0.5, margin rate 0.3 -> shared FP term
        // max(0, 0.5*250*0.75 - 0.5*75) = 56.25
        let (_, _, rows) = fixture();
        let fns: Vec<f64> = rows.iter().map(|r| r.c_fn).collect();
        let fps: Vec<f64> = rows.iter().map(|r| r.c_fp).collect();
        assert_eq!(fns, vec![75.0, 150.0, 225.0, 300.0]);
        assert_eq!(fps, vec![86.25, 116.25, 146.25, 176.25]);
    }

    #[test]
    fn shared_term_floors_at_zero() {
        let cl = vec![1000.0; 10];
        let mut labels = vec![0u8; 10];
        labels[0] = 1;
        // 0.1*1000*0.75 = 75 < 0.9*300 = 270 -> shared term 0, so the FP
        // cost is exactly the forgone margin
        let params = CostParameters::default();
        let rows = example_costs(&cl, &labels, &params).unwrap();
        assert_eq!(rows[0].c_fp, 1000.0 * (params.int_r - params.int_cf));
    }

    #[test]
    fn perfect_decisions_cost_nothing_and_save_everything() {
        let (_, labels, rows) = fixture();
        let scores = [0.9, 0.1, 0.1, 0.9];
        let decisions = decisions_from(&scores, 0.9);
        let cost = total_cost(&decisions, &labels, &rows).unwrap();
        assert_eq!(cost, 0.0);
        let base = baseline_cost(&labels, &rows).unwrap();
        assert_eq!(base, 262.5); // deny-all beats grant-all (375)
        assert_eq!(savings(cost, base).unwrap(), 1.0);
    }

    #[test]
    fn anti_perfect_decisions_have_negative_savings() {
        let (_, labels, rows) = fixture();
        let decisions = vec![false, true, true, false]; // exactly wrong
        let cost = total_cost(&decisions, &labels, &rows).unwrap();
        assert_eq!(cost, 262.5 + 375.0);
        let s = savings(cost, baseline_cost(&labels, &rows).unwrap()).unwrap();
        assert!(s < 0.0);
    }

    #[test]
    fn threshold_boundary_denies() {
        let d = decisions_from(&[0.5, 0.49999], 0.5);
        assert_eq!(d, vec![true, false]);
    }

    #[test]
    fn chooses_cost_minimizing_threshold() {
        let (_, labels, rows) = fixture();
        let scores = [0.9, 0.1, 0.1, 0.9];
        let t = choose_threshold(&scores, &labels, &rows).unwrap();
        assert_eq!(t, 0.9);
        let cost = total_cost(&decisions_from(&scores, t), &labels, &rows).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn grant_all_threshold_when_scores_are_useless() {
        // scores anti-ranked: any cut does worse than a trivial policy;
        // grant-all (375) loses to deny-all... so best cut is deny-all here
        let (_, labels, rows) = fixture();
        let scores = [0.1, 0.9, 0.9, 0.1];
        let t = choose_threshold(&scores, &labels, &rows).unwrap();
        let cost = total_cost(&decisions_from(&scores, t), &labels, &rows).unwrap();
        assert!(cost <= 262.5);
    }

    #[test]
    fn threshold_sweep_matches_brute_force() {
        // pseudo-random fixture, compare against O(n^2) enumeration
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        let n = 60;
        let cl: Vec<f64> = (0..n).map(|_| 50.0 + 500.0 * next()).collect();
        let labels: Vec<u8> = (0..n).map(|_| (next() < 0.3) as u8).collect();
        let scores: Vec<f64> = (0..n).map(|_| (next() * 8.0).round() / 8.0).collect();
        let rows = example_costs(&cl, &labels, &CostParameters::default()).unwrap();
        let t = choose_threshold(&scores, &labels, &rows).unwrap();
        let fast = total_cost(&decisions_from(&scores, t), &labels, &rows).unwrap();
        let mut candidates: Vec<f64> = scores.clone();
        candidates.push(1.0);
        candidates.push(0.0);
        let brute = candidates
            .iter()
            .map(|&c| total_cost(&decisions_from(&scores, c), &labels, &rows).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((fast - brute).abs() < 1e-9, "sweep {fast} vs brute {brute}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = CostParameters {
            int_r: 0.1,
            int_cf: 0.4,
            l_gd: 0.75,
        };
        assert!(bad.validate().is_err());
        let bad = CostParameters {
            l_gd: 0.0,
            ..CostParameters::default()
        };
        assert!(bad.validate().is_err());
        assert!(example_costs(&[0.0], &[1], &CostParameters::default()).is_err());
        assert!(savings(1.0, 0.0).is_err());
    }
}

//! Population segmentation: device-score, wealth-score and RFM splits of a
//! cohort into low/high halves, used to route per-segment experiments.
//!
//! Splits cut at a threshold (cohort median by default) with ties going to
//! the low side, so a point mass sitting on the cut lands entirely in the
//! low segment — which is also how a "no signal" floor bucket in a score
//! ends up low.

use crate::datamodel::{TransactionEvent, TxnStatus, UserRecord, Vertical};
use chrono::NaiveDate;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("length mismatch: {left} users vs {right} scores")]
    LengthMismatch { left: usize, right: usize },
    #[error("segmentation needs at least one user")]
    EmptyCohort,
    #[error("scores must be finite")]
    NonFinite,
    #[error("unknown segmentation name {0:?}")]
    UnknownName(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which score a segmentation cuts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentName {
    None,
    DeviceScore,
    WealthScore,
    Rfm,
}

impl SegmentName {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentName::None => "none",
            SegmentName::DeviceScore => "device_score",
            SegmentName::WealthScore => "wealth_score",
            SegmentName::Rfm => "rfm",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SegmentError> {
        match s {
            "none" => Ok(SegmentName::None),
            "device_score" => Ok(SegmentName::DeviceScore),
            "wealth_score" => Ok(SegmentName::WealthScore),
            "rfm" => Ok(SegmentName::Rfm),
            other => Err(SegmentError::UnknownName(other.to_string())),
        }
    }

    /// The three real segmentations, in report order.
    pub const ALL: [SegmentName; 3] = [
        SegmentName::DeviceScore,
        SegmentName::WealthScore,
        SegmentName::Rfm,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Low,
    High,
    All,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Low => "low",
            Side::High => "high",
            Side::All => "all",
        }
    }
}

/// One requested segment population.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentSpec {
    pub name: SegmentName,
    pub side: Side,
    /// Explicit cut on the segmentation score; cohort median when absent.
    pub cut: Option<f64>,
}

/// Outcome of cutting a cohort on one score.
#[derive(Debug, Clone)]
pub struct SplitResult {
    /// The threshold actually used.
    pub cut: f64,
    /// Row indexes with score <= cut, in input order.
    pub low: Vec<usize>,
    /// Row indexes with score > cut, in input order.
    pub high: Vec<usize>,
    /// True when everyone landed on one side.
    pub degenerate: bool,
}

/// Interpolated median of an unsorted slice.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Cut a named cohort on a spec, validating that ids and scores line up.
pub fn split_cohort(
    user_ids: &[String],
    scores: &[f64],
    spec: &SegmentSpec,
) -> Result<SplitResult, SegmentError> {
    if user_ids.len() != scores.len() {
        return Err(SegmentError::LengthMismatch {
            left: user_ids.len(),
            right: scores.len(),
        });
    }
    split(scores, spec.cut)
}

/// Cut a cohort at a threshold (median by default); scores at or below the
/// cut go low. Returns index sets that always partition the input.
pub fn split(scores: &[f64], cut: Option<f64>) -> Result<SplitResult, SegmentError> {
    if scores.is_empty() {
        return Err(SegmentError::EmptyCohort);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SegmentError::NonFinite);
    }
    let cut = cut.unwrap_or_else(|| median(scores));
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s <= cut {
            low.push(i);
        } else {
            high.push(i);
        }
    }
    let degenerate = low.is_empty() || high.is_empty();
    if degenerate {
        log::warn!(
            "degenerate segmentation: cut {cut} puts all {} users on one side",
            scores.len()
        );
    }
    Ok(SplitResult {
        cut,
        low,
        high,
        degenerate,
    })
}

/// Quintile rank 1–5 by strict rank: floor(5 * rank / n) + 1, ties sharing
/// the lower rank. `reverse` ranks descending (smallest value = rank 5).
fn quintiles(values: &[f64], reverse: bool) -> Vec<u8> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    if reverse {
        order.reverse();
    }
    let mut ranks = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            ranks[idx] = i; // strict rank: count of strictly better-sorted members
        }
        i = j + 1;
    }
    ranks
        .into_iter()
        .map(|r| (5 * r / n) as u8 + 1)
        .collect()
}

/// Per-user RFM score: recency (days since last approved order, recent =
/// high), frequency (approved orders per month) and monetary value
/// (average approved order amount), each quintile-ranked 1–5 over the
/// users who ordered at all, then averaged. Users with no approved orders
/// score 1.0.
pub fn rfm_score(
    users: &[UserRecord],
    events: &[TransactionEvent],
    snapshot: NaiveDate,
    window_months: u32,
) -> Vec<f64> {
    let start = crate::datamodel::window_start(snapshot, window_months);
    let mut by_user: HashMap<&str, (NaiveDate, usize, f64)> = HashMap::new();
    for e in events {
        // purchases only: approved commerce or ride, not money transfers
        if e.status != TxnStatus::Approved || e.vertical == Vertical::Financial {
            continue;
        }
        let d = e.timestamp.date_naive();
        if d < start || d >= snapshot {
            continue;
        }
        let entry = by_user
            .entry(e.user_id.as_str())
            .or_insert((d, 0, 0.0));
        entry.0 = entry.0.max(d);
        entry.1 += 1;
        entry.2 += e.amount.as_f64();
    }
    let mut recency = Vec::new();
    let mut frequency = Vec::new();
    let mut monetary = Vec::new();
    let mut with_orders = Vec::new();
    for (i, u) in users.iter().enumerate() {
        if let Some(&(last, count, total)) = by_user.get(u.user_id.as_str()) {
            recency.push((snapshot - last).num_days() as f64);
            frequency.push(count as f64 / window_months as f64);
            monetary.push(total / count as f64);
            with_orders.push(i);
        }
    }
    let mut scores = vec![1.0; users.len()];
    if with_orders.is_empty() {
        return scores;
    }
    let r_q = quintiles(&recency, true); // small recency (recent) = 5
    let f_q = quintiles(&frequency, false);
    let m_q = quintiles(&monetary, false);
    for (k, &i) in with_orders.iter().enumerate() {
        scores[i] = (r_q[k] as f64 + f_q[k] as f64 + m_q[k] as f64) / 3.0;
    }
    scores
}

/// The segmentation score vector a spec cuts on. Users missing a
/// device/wealth score get the cohort's minimum so they land low.
pub fn segment_scores(
    name: SegmentName,
    users: &[UserRecord],
    events: &[TransactionEvent],
    snapshot: NaiveDate,
    window_months: u32,
) -> Vec<f64> {
    match name {
        SegmentName::None => vec![0.0; users.len()],
        SegmentName::Rfm => rfm_score(users, events, snapshot, window_months),
        SegmentName::DeviceScore | SegmentName::WealthScore => {
            let raw: Vec<Option<f64>> = users
                .iter()
                .map(|u| {
                    if name == SegmentName::DeviceScore {
                        u.device_score
                    } else {
                        u.wealth_score
                    }
                })
                .collect();
            let floor = raw
                .iter()
                .flatten()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() { floor } else { 0.0 };
            raw.into_iter().map(|v| v.unwrap_or(floor)).collect()
        }
    }
}

/// Audit export: one line per user per side assignment.
pub fn write_assignments_csv(
    path: &Path,
    name: SegmentName,
    user_ids: &[String],
    result: &SplitResult,
) -> Result<(), SegmentError> {
    let io_err = |source| SegmentError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "user_id,segment,side").map_err(io_err)?;
    for &i in &result.low {
        writeln!(w, "{},{},low", user_ids[i], name.as_str()).map_err(io_err)?;
    }
    for &i in &result.high {
        writeln!(w, "{},{},high", user_ids[i], name.as_str()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{GenericAttributes, Money, PaymentMethod};
    use chrono::{TimeZone, Utc};

    fn user(id: &str) -> UserRecord {
        UserRecord {
            user_id: id.to_string(),
            bureau_score: 600.0,
            generic: GenericAttributes::default(),
            credit_line: Money(100_00),
            label: 0,
            snapshot_date: NaiveDate::from_ymd_opt(2023, 10, 1).unwrap(),
            outcome_horizon_months: 6,
            device_score: None,
            wealth_score: None,
        }
    }

    fn order(id: &str, day: u32, amount: i64) -> TransactionEvent {
        TransactionEvent {
            user_id: id.to_string(),
            timestamp: Utc.with_ymd_and_hms(2023, 9, day, 12, 0, 0).unwrap(),
            vertical: Vertical::Delivery,
            amount: Money(amount),
            payment_method: PaymentMethod::CreditCard,
            status: TxnStatus::Approved,
            tip: Money(0),
            discount: Money(0),
            store_id: "s1".to_string(),
            extra: Default::default(),
        }
    }

    #[test]
    fn median_split_halves_distinct_scores() {
        let r = split(&[1.0, 2.0, 3.0, 4.0], None).unwrap();
        assert_eq!(r.cut, 2.5);
        assert_eq!(r.low, vec![0, 1]);
        assert_eq!(r.high, vec![2, 3]);
        assert!(!r.degenerate);
    }

    #[test]
    fn equal_scores_all_go_low_with_warning() {
        let r = split(&[7.0; 5], None).unwrap();
        assert_eq!(r.low.len(), 5);
        assert!(r.high.is_empty());
        assert!(r.degenerate);
    }

    #[test]
    fn split_is_a_partition() {
        let scores = [0.3, 0.1, 0.9, 0.3, 0.5, 0.2, 0.8];
        let r = split(&scores, None).unwrap();
        let mut all: Vec<usize> = r.low.iter().chain(&r.high).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..scores.len()).collect::<Vec<_>>());
    }

    #[test]
    fn point_mass_on_cut_lands_low() {
        // 6 of 10 at the floor: median = floor, ties-low -> 60/40
        let scores = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0];
        let r = split(&scores, None).unwrap();
        assert_eq!(r.low.len(), 6);
        assert_eq!(r.high.len(), 4);
    }

    #[test]
    fn no_order_user_scores_one() {
        let users = vec![user("a"), user("b")];
        let events = vec![order("a", 20, 50_00), order("a", 25, 70_00)];
        let snapshot = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let scores = rfm_score(&users, &events, snapshot, 6);
        assert_eq!(scores[1], 1.0);
        assert!(scores[0] >= 1.0 && scores[0] <= 5.0);
    }

    #[test]
    fn best_user_scores_five() {
        // five users with strictly ordered recency, frequency, monetary
        let users: Vec<UserRecord> = (0..5).map(|i| user(&format!("u{i}"))).collect();
        let mut events = Vec::new();
        for (i, u) in users.iter().enumerate() {
            // user i: i+1 orders, later last order, higher amounts
            for k in 0..=i {
                events.push(order(&u.user_id, 10 + i as u32, (i as i64 + 1) * 10_00 + k as i64));
            }
        }
        let snapshot = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let scores = rfm_score(&users, &events, snapshot, 6);
        assert_eq!(scores[4], 5.0);
        assert_eq!(scores[0], 1.0);
    }

    #[test]
    fn hand_built_cohort_matches_enumerated_quintiles() {
        // 10 users; recency/frequency/monetary engineered per user.
        // last-order day of month (Sep), order count, constant amount:
        let plan: [(u32, usize, i64); 10] = [
            (30, 10, 100_00), // most recent, most orders, mid amount
            (29, 9, 90_00),
            (28, 8, 80_00),
            (27, 7, 70_00),
            (26, 6, 60_00),
            (25, 5, 50_00),
            (24, 4, 40_00),
            (23, 3, 30_00),
            (22, 2, 20_00),
            (21, 1, 10_00), // least recent, fewest, cheapest
        ];
        let users: Vec<UserRecord> = (0..10).map(|i| user(&format!("u{i}"))).collect();
        let mut events = Vec::new();
        for (i, &(day, count, amount)) in plan.iter().enumerate() {
            for k in 0..count {
                let d = day - (k as u32).min(day - 1);
                events.push(order(&users[i].user_id, d, amount));
            }
        }
        let snapshot = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let scores = rfm_score(&users, &events, snapshot, 6);
        // strict ranks 0..9 -> quintiles 1,1,2,2,3,3,4,4,5,5 and the plan
        // orders all three dimensions identically
        let expected: Vec<f64> = [5, 5, 4, 4, 3, 3, 2, 2, 1, 1]
            .iter()
            .map(|&q| q as f64)
            .collect();
        assert_eq!(scores, expected);
    }

    #[test]
    fn rfm_ignores_currency_scale() {
        let users: Vec<UserRecord> = (0..6).map(|i| user(&format!("u{i}"))).collect();
        let snapshot = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let mk = |scale: i64| -> Vec<TransactionEvent> {
            users
                .iter()
                .enumerate()
                .flat_map(|(i, u)| {
                    (0..=i)
                        .map(|k| order(&u.user_id, 5 + 4 * i as u32, scale * (10_00 + 7_00 * i as i64 + k as i64)))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let a = rfm_score(&users, &mk(1), snapshot, 6);
        let b = rfm_score(&users, &mk(100), snapshot, 6);
        assert_eq!(a, b);
    }

    #[test]
    fn missing_device_scores_fall_to_the_floor() {
        let mut users: Vec<UserRecord> = (0..4).map(|i| user(&format!("u{i}"))).collect();
        users[0].device_score = Some(1.5);
        users[1].device_score = Some(-0.5);
        // users 2, 3 missing -> imputed to the observed minimum (-0.5)
        let snapshot = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let scores = segment_scores(SegmentName::DeviceScore, &users, &[], snapshot, 6);
        assert_eq!(scores, vec![1.5, -0.5, -0.5, -0.5]);
        let r = split(&scores, None).unwrap();
        assert_eq!(r.low.len(), 3);
        assert_eq!(r.high, vec![0]);
    }

    #[test]
    fn length_mismatch_and_empty_are_rejected() {
        assert!(matches!(split(&[], None), Err(SegmentError::EmptyCohort)));
        assert!(matches!(
            split(&[1.0, f64::NAN], None),
            Err(SegmentError::NonFinite)
        ));
    }
}

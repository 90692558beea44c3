//! Canonical domain types, input-file ingestion, and the score-to-decision
//! threshold rule.
//!
//! Money is carried as integer minor currency units everywhere in this
//! module; conversion to real-valued currency happens only inside the
//! metrics layer.

mod ingest;

pub use ingest::{
    ingest_events, ingest_users, write_events, write_users, IngestError, IngestReport, RowError,
    UserSchema,
};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Monetary amount in minor currency units (e.g. cents).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize, Hash,
)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn minor_units(self) -> i64 {
        self.0
    }

    /// Real-valued amount in minor units; used by the metrics layer.
    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Marketplace vertical a transaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Vertical {
    Delivery,
    Groceries,
    Pharmacy,
    OtherRetail,
    Transport,
    Financial,
}

impl Vertical {
    pub const ALL: [Vertical; 6] = [
        Vertical::Delivery,
        Vertical::Groceries,
        Vertical::Pharmacy,
        Vertical::OtherRetail,
        Vertical::Transport,
        Vertical::Financial,
    ];

    /// Verticals that represent physical-goods orders with a store.
    pub const DELIVERY_FAMILY: [Vertical; 4] = [
        Vertical::Delivery,
        Vertical::Groceries,
        Vertical::Pharmacy,
        Vertical::OtherRetail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Vertical::Delivery => "delivery",
            Vertical::Groceries => "groceries",
            Vertical::Pharmacy => "pharmacy",
            Vertical::OtherRetail => "other_retail",
            Vertical::Transport => "transport",
            Vertical::Financial => "financial",
        }
    }

    /// Parse a vertical token. Unknown tokens map to the catch-all
    /// `other_retail`; callers count these as ingestion warnings.
    pub fn parse_lossy(token: &str) -> (Vertical, bool) {
        match token {
            "delivery" => (Vertical::Delivery, true),
            "groceries" => (Vertical::Groceries, true),
            "pharmacy" => (Vertical::Pharmacy, true),
            "other_retail" => (Vertical::OtherRetail, true),
            "transport" => (Vertical::Transport, true),
            "financial" => (Vertical::Financial, true),
            _ => (Vertical::OtherRetail, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMethod {
    CreditCard,
    DebitCard,
    Cash,
    Wallet,
}

impl PaymentMethod {
    pub const ALL: [PaymentMethod; 4] = [
        PaymentMethod::CreditCard,
        PaymentMethod::DebitCard,
        PaymentMethod::Cash,
        PaymentMethod::Wallet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PaymentMethod::CreditCard => "credit_card",
            PaymentMethod::DebitCard => "debit_card",
            PaymentMethod::Cash => "cash",
            PaymentMethod::Wallet => "wallet",
        }
    }

    pub fn parse(token: &str) -> Option<PaymentMethod> {
        match token {
            "credit_card" => Some(PaymentMethod::CreditCard),
            "debit_card" => Some(PaymentMethod::DebitCard),
            "cash" => Some(PaymentMethod::Cash),
            "wallet" => Some(PaymentMethod::Wallet),
            _ => None,
        }
    }
}

/// Payment outcome of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TxnStatus {
    Approved,
    CancelledUser,
    CancelledPaymentError,
    CancelledFraud,
    Refunded,
}

impl TxnStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TxnStatus::Approved => "approved",
            TxnStatus::CancelledUser => "cancelled_user",
            TxnStatus::CancelledPaymentError => "cancelled_payment_error",
            TxnStatus::CancelledFraud => "cancelled_fraud",
            TxnStatus::Refunded => "refunded",
        }
    }

    pub fn parse(token: &str) -> Option<TxnStatus> {
        match token {
            "approved" => Some(TxnStatus::Approved),
            "cancelled_user" => Some(TxnStatus::CancelledUser),
            "cancelled_payment_error" => Some(TxnStatus::CancelledPaymentError),
            "cancelled_fraud" => Some(TxnStatus::CancelledFraud),
            "refunded" => Some(TxnStatus::Refunded),
            _ => None,
        }
    }

    pub fn is_cancelled(self) -> bool {
        matches!(
            self,
            TxnStatus::CancelledUser | TxnStatus::CancelledPaymentError | TxnStatus::CancelledFraud
        )
    }
}

/// One user action in the app: an order, a ride, or a financial movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionEvent {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub vertical: Vertical,
    /// Order value in minor currency units, non-negative.
    pub amount: Money,
    pub payment_method: PaymentMethod,
    pub status: TxnStatus,
    pub tip: Money,
    pub discount: Money,
    /// Empty for transport/financial events.
    pub store_id: String,
    /// Vertical-specific numeric fields, e.g. `travel_time_minutes`,
    /// `product_count`, `counterparty`, `departure_zone`, `destination_zone`.
    pub extra: BTreeMap<String, f64>,
}

impl TransactionEvent {
    pub fn extra_value(&self, key: &str) -> Option<f64> {
        self.extra.get(key).copied()
    }
}

/// Demographic and account-level attributes of a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GenericAttributes {
    /// Ordinal age bucket (1 = youngest).
    pub age_range: u32,
    pub gender: String,
    /// Months on books: tenure with the platform.
    pub tenure_months: u32,
    pub city: String,
    pub n_addresses: u32,
    pub preferred_payment_method: String,
    pub n_credit_cards: u32,
    pub n_card_brands: u32,
    pub phone_brand: String,
    pub n_phones: u32,
}

/// One scored user: bureau input, credit line, and the observed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Bureau score in [0, 1000].
    pub bureau_score: f64,
    pub generic: GenericAttributes,
    /// Approved loan amount in minor units, strictly positive.
    pub credit_line: Money,
    /// 1 = defaulter, 0 = non-defaulter.
    pub label: u8,
    /// Loan grant date; the observation window ends here.
    pub snapshot_date: NaiveDate,
    pub outcome_horizon_months: u32,
    /// Proprietary segmentation inputs, present when the source provides them.
    pub device_score: Option<f64>,
    pub wealth_score: Option<f64>,
}

impl UserRecord {
    pub fn is_defaulter(&self) -> bool {
        self.label == 1
    }
}

/// Fraction of a cohort with label 1, exactly `sum(y) / n`.
pub fn default_rate(users: &[UserRecord]) -> f64 {
    if users.is_empty() {
        return 0.0;
    }
    let bad: u64 = users.iter().map(|u| u.label as u64).sum();
    bad as f64 / users.len() as f64
}

/// Outcome of applying the decision threshold to a predicted default
/// probability. `deny == false` means the loan is granted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p_hat: f64,
    pub threshold: f64,
    pub deny: bool,
}

impl Decision {
    /// Classifier output as 0 = grant, 1 = deny.
    pub fn class(&self) -> u8 {
        self.deny as u8
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
}

/// Grant iff `p_hat < t`; the boundary `p_hat == t` is a denial.
pub fn decide(p_hat: f64, t: f64) -> Result<Decision, DecisionError> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(DecisionError::OutOfRange {
            name: "p_hat",
            value: p_hat,
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(DecisionError::OutOfRange {
            name: "threshold",
            value: t,
        });
    }
    Ok(Decision {
        p_hat,
        threshold: t,
        deny: p_hat >= t,
    })
}

/// Start of the observation window: `months` calendar months before the
/// snapshot date. Events at or after the snapshot date are outside the window.
pub fn window_start(snapshot: NaiveDate, months: u32) -> NaiveDate {
    snapshot
        .checked_sub_months(chrono::Months::new(months))
        .unwrap_or(NaiveDate::MIN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decide_grants_below_threshold() {
        let d = decide(0.02, 0.10).unwrap();
        assert!(!d.deny);
        assert_eq!(d.class(), 0);
    }

    #[test]
    fn decide_denies_on_boundary() {
        // p_hat == t is classified as deny.
        let d = decide(0.10, 0.10).unwrap();
        assert!(d.deny);
        assert_eq!(d.class(), 1);
    }

    #[test]
    fn decide_denies_above_threshold() {
        let d = decide(0.99, 0.50).unwrap();
        assert_eq!(d.class(), 1);
    }

    #[test]
    fn decide_rejects_out_of_range() {
        assert!(decide(1.2, 0.5).is_err());
        assert!(decide(0.5, -0.1).is_err());
    }

    #[test]
    fn unknown_vertical_maps_to_other_retail() {
        let (v, known) = Vertical::parse_lossy("restaurantes");
        assert_eq!(v, Vertical::OtherRetail);
        assert!(!known);
    }

    #[test]
    fn window_start_subtracts_months() {
        let snap = NaiveDate::from_ymd_opt(2024, 6, 30).unwrap();
        assert_eq!(
            window_start(snap, 6),
            NaiveDate::from_ymd_opt(2023, 12, 30).unwrap()
        );
    }

    proptest! {
        // decide is monotone in p_hat for fixed t.
        #[test]
        fn decide_monotone_in_p(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let c_lo = decide(lo, t).unwrap().class();
            let c_hi = decide(hi, t).unwrap().class();
            prop_assert!(c_lo <= c_hi);
        }
    }
}

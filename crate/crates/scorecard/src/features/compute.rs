//! The featurize engine: evaluates a list of [`FeatureSpec`]s over each
//! user's in-window events, producing one matrix row per user in input
//! order. Output is bit-identical regardless of event input order or
//! worker count: each user's events are sorted by a total order before any
//! floating-point accumulation.

use super::{
    Aggregate, ColumnInfo, DayPart, Denominator, FeatureError, FeatureMatrix, FeatureSpec,
    GenericField, Measure,
};
use crate::datamodel::{TransactionEvent, TxnStatus, UserRecord};
use chrono::Timelike;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Frozen ordinal encoding for categorical user attributes. Index 0 is the
/// catch-all for tokens unseen at build time; known tokens get 1-based
/// indexes in sorted order, so the encoding is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    fields: BTreeMap<&'static str, BTreeMap<String, usize>>,
}

impl Vocabulary {
    /// Scan user attributes and freeze one token table per categorical
    /// field. Labels are never consulted, so the encoding carries no
    /// target information.
    pub fn build(users: &[UserRecord]) -> Vocabulary {
        let mut fields: BTreeMap<&'static str, BTreeSet<String>> = BTreeMap::new();
        for field in CATEGORICAL_FIELDS {
            fields.insert(field.as_str(), BTreeSet::new());
        }
        for u in users {
            for field in CATEGORICAL_FIELDS {
                let token = generic_token(u, field);
                if !token.is_empty() {
                    fields
                        .get_mut(field.as_str())
                        .unwrap()
                        .insert(token.to_string());
                }
            }
        }
        Vocabulary {
            fields: fields
                .into_iter()
                .map(|(name, tokens)| {
                    let table = tokens
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| (t, i + 1))
                        .collect();
                    (name, table)
                })
                .collect(),
        }
    }

    /// Ordinal index for a token; unseen or empty tokens map to 0.
    pub fn encode(&self, field: GenericField, token: &str) -> usize {
        self.fields
            .get(field.as_str())
            .and_then(|table| table.get(token))
            .copied()
            .unwrap_or(0)
    }
}

const CATEGORICAL_FIELDS: [GenericField; 4] = [
    GenericField::Gender,
    GenericField::City,
    GenericField::PreferredPaymentMethod,
    GenericField::PhoneBrand,
];

fn generic_token(user: &UserRecord, field: GenericField) -> &str {
    match field {
        GenericField::Gender => &user.generic.gender,
        GenericField::City => &user.generic.city,
        GenericField::PreferredPaymentMethod => &user.generic.preferred_payment_method,
        GenericField::PhoneBrand => &user.generic.phone_brand,
        _ => "",
    }
}

/// Reject structurally invalid specs before any computation runs.
pub fn validate_specs(specs: &[FeatureSpec]) -> Result<(), FeatureError> {
    let mut seen = BTreeSet::new();
    for s in specs {
        let fail = |reason: &str| {
            Err(FeatureError::SpecValidation {
                name: s.name.clone(),
                reason: reason.to_string(),
            })
        };
        if s.name.is_empty() {
            return fail("empty name");
        }
        if !seen.insert(s.name.as_str()) {
            return Err(FeatureError::DuplicateColumn {
                name: s.name.clone(),
            });
        }
        match s.aggregate {
            Aggregate::Pct => {
                if s.denominator.is_none() {
                    return fail("pct aggregate requires a denominator");
                }
            }
            Aggregate::Identity => {
                if !matches!(s.measure, Measure::Generic(_) | Measure::Bureau) {
                    return fail("identity aggregate requires a user-attribute measure");
                }
            }
            Aggregate::TopShare => {
                if s.measure != Measure::Store {
                    return fail("top-share aggregate requires the store measure");
                }
            }
            _ => {}
        }
        if matches!(s.measure, Measure::Generic(_) | Measure::Bureau)
            && s.aggregate != Aggregate::Identity
        {
            return fail("user-attribute measures only support the identity aggregate");
        }
        if s.measure == Measure::Store
            && !matches!(s.aggregate, Aggregate::Distinct | Aggregate::TopShare)
        {
            return fail("store measure only supports distinct/top-share aggregates");
        }
    }
    Ok(())
}

/// Total order on events so per-user accumulation sequence is unique even
/// when timestamps collide; this is what makes featurize permutation-proof.
fn event_cmp(a: &TransactionEvent, b: &TransactionEvent) -> Ordering {
    a.timestamp
        .cmp(&b.timestamp)
        .then_with(|| a.amount.cmp(&b.amount))
        .then_with(|| a.vertical.cmp(&b.vertical))
        .then_with(|| a.status.cmp(&b.status))
        .then_with(|| a.payment_method.cmp(&b.payment_method))
        .then_with(|| a.tip.cmp(&b.tip))
        .then_with(|| a.discount.cmp(&b.discount))
        .then_with(|| a.store_id.cmp(&b.store_id))
        .then_with(|| {
            let ax = a.extra.iter().map(|(k, v)| (k, v.to_bits()));
            let bx = b.extra.iter().map(|(k, v)| (k, v.to_bits()));
            ax.cmp(bx)
        })
}

struct UserContext<'a> {
    user: &'a UserRecord,
    events: Vec<&'a TransactionEvent>,
    approved_spend: f64,
    approved_count: f64,
}

impl<'a> UserContext<'a> {
    fn new(user: &'a UserRecord, mut events: Vec<&'a TransactionEvent>, window_months: u32) -> Self {
        let start = crate::datamodel::window_start(user.snapshot_date, window_months);
        events.retain(|e| {
            let d = e.timestamp.date_naive();
            d >= start && d < user.snapshot_date
        });
        events.sort_by(|a, b| event_cmp(a, b));
        let mut approved_spend = 0.0;
        let mut approved_count = 0.0;
        for e in &events {
            if e.status == TxnStatus::Approved {
                approved_spend += e.amount.as_f64();
                approved_count += 1.0;
            }
        }
        UserContext {
            user,
            events,
            approved_spend,
            approved_count,
        }
    }

    fn denominator(&self, d: Denominator) -> f64 {
        match d {
            Denominator::ApprovedSpend => self.approved_spend,
            Denominator::ApprovedCount => self.approved_count,
        }
    }

    fn matches(&self, spec: &FeatureSpec, e: &TransactionEvent) -> bool {
        let f = &spec.filters;
        if let Some(v) = f.vertical {
            if e.vertical != v {
                return false;
            }
        }
        if !f.status.matches(e.status) {
            return false;
        }
        if let Some(pm) = f.payment_method {
            if e.payment_method != pm {
                return false;
            }
        }
        if let Some(part) = f.day_part {
            if DayPart::of_hour(e.timestamp.hour()) != part {
                return false;
            }
        }
        true
    }

    fn measure_value(&self, m: &Measure, e: &TransactionEvent) -> Option<f64> {
        match m {
            Measure::Amount => Some(e.amount.as_f64()),
            Measure::Tip => Some(e.tip.as_f64()),
            Measure::Discount => Some(e.discount.as_f64()),
            Measure::Unit => Some(1.0),
            Measure::TipPresent => Some((e.tip.0 > 0) as u8 as f64),
            Measure::DiscountPresent => Some((e.discount.0 > 0) as u8 as f64),
            Measure::Extra(key) => e.extra_value(key),
            Measure::Store | Measure::Generic(_) | Measure::Bureau => None,
        }
    }

    /// Evaluate one spec; `None` means missing.
    fn evaluate(&self, spec: &FeatureSpec, vocab: &Vocabulary) -> Option<f64> {
        match spec.aggregate {
            Aggregate::Identity => Some(self.identity_value(spec, vocab)),
            Aggregate::Count => {
                let mut n = 0u64;
                for e in &self.events {
                    if self.matches(spec, e) && self.measure_value(&spec.measure, e).is_some() {
                        n += 1;
                    }
                }
                Some(n as f64)
            }
            Aggregate::Sum => {
                let mut acc = 0.0;
                for e in &self.events {
                    if self.matches(spec, e) {
                        if let Some(v) = self.measure_value(&spec.measure, e) {
                            acc += v;
                        }
                    }
                }
                Some(acc)
            }
            Aggregate::Avg => {
                let mut acc = 0.0;
                let mut n = 0u64;
                for e in &self.events {
                    if self.matches(spec, e) {
                        if let Some(v) = self.measure_value(&spec.measure, e) {
                            acc += v;
                            n += 1;
                        }
                    }
                }
                (n > 0).then(|| acc / n as f64)
            }
            Aggregate::Max => {
                let mut best: Option<f64> = None;
                for e in &self.events {
                    if self.matches(spec, e) {
                        if let Some(v) = self.measure_value(&spec.measure, e) {
                            best = Some(match best {
                                Some(b) if b >= v => b,
                                _ => v,
                            });
                        }
                    }
                }
                best
            }
            Aggregate::Pct => {
                let denom = self.denominator(spec.denominator.expect("validated"));
                if denom <= 0.0 {
                    return None;
                }
                let mut acc = 0.0;
                for e in &self.events {
                    if self.matches(spec, e) {
                        if let Some(v) = self.measure_value(&spec.measure, e) {
                            acc += v;
                        }
                    }
                }
                Some(acc / denom)
            }
            Aggregate::Distinct => {
                if spec.measure == Measure::Store {
                    let mut seen = BTreeSet::new();
                    for e in &self.events {
                        if self.matches(spec, e) && !e.store_id.is_empty() {
                            seen.insert(e.store_id.as_str());
                        }
                    }
                    Some(seen.len() as f64)
                } else {
                    let mut seen = BTreeSet::new();
                    for e in &self.events {
                        if self.matches(spec, e) {
                            if let Some(v) = self.measure_value(&spec.measure, e) {
                                seen.insert(v.to_bits());
                            }
                        }
                    }
                    Some(seen.len() as f64)
                }
            }
            Aggregate::TopShare => {
                let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
                for e in &self.events {
                    if self.matches(spec, e) && !e.store_id.is_empty() {
                        *counts.entry(e.store_id.as_str()).or_insert(0) += 1;
                    }
                }
                let total: u64 = counts.values().sum();
                if total == 0 {
                    return None;
                }
                // Modal store; BTreeMap order makes the tie-break (smallest
                // id wins) deterministic.
                let top = counts.values().copied().max().unwrap();
                Some(top as f64 / total as f64)
            }
        }
    }

    fn identity_value(&self, spec: &FeatureSpec, vocab: &Vocabulary) -> f64 {
        match &spec.measure {
            Measure::Bureau => self.user.bureau_score,
            Measure::Generic(field) => match field {
                GenericField::AgeRange => self.user.generic.age_range as f64,
                GenericField::TenureMonths => self.user.generic.tenure_months as f64,
                GenericField::NAddresses => self.user.generic.n_addresses as f64,
                GenericField::NCreditCards => self.user.generic.n_credit_cards as f64,
                GenericField::NCardBrands => self.user.generic.n_card_brands as f64,
                GenericField::NPhones => self.user.generic.n_phones as f64,
                _ => vocab.encode(*field, generic_token(self.user, *field)) as f64,
            },
            _ => unreachable!("validated: identity implies user-attribute measure"),
        }
    }
}

/// Evaluate `specs` over each user's in-window events. One row per user in
/// input order; users with no matching events get zero for count-like
/// aggregates and missing for averages/maxima/shares.
pub fn featurize(
    users: &[UserRecord],
    events: &[TransactionEvent],
    specs: &[FeatureSpec],
    vocab: &Vocabulary,
    window_months: u32,
) -> Result<FeatureMatrix, FeatureError> {
    validate_specs(specs)?;

    let mut by_user: HashMap<&str, Vec<&TransactionEvent>> = HashMap::new();
    for e in events {
        by_user.entry(e.user_id.as_str()).or_default().push(e);
    }

    let width = specs.len();
    let rows: Vec<(Vec<f64>, Vec<bool>)> = users
        .par_iter()
        .map(|user| {
            let user_events = by_user.get(user.user_id.as_str()).cloned().unwrap_or_default();
            let mut values = Vec::with_capacity(width);
            let mut missing = Vec::with_capacity(width);
            // Window overrides regroup the context; cache per distinct window.
            let default_ctx = UserContext::new(user, user_events.clone(), window_months);
            let mut override_ctx: BTreeMap<u32, UserContext> = BTreeMap::new();
            for spec in specs {
                let ctx = match spec.window_months {
                    None => &default_ctx,
                    Some(m) if m == window_months => &default_ctx,
                    Some(m) => override_ctx
                        .entry(m)
                        .or_insert_with(|| UserContext::new(user, user_events.clone(), m)),
                };
                match ctx.evaluate(spec, vocab) {
                    Some(v) => {
                        values.push(v);
                        missing.push(false);
                    }
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
            (values, missing)
        })
        .collect();

    let mut values = Vec::with_capacity(users.len() * width);
    let mut missing = Vec::with_capacity(users.len() * width);
    for (v, m) in rows {
        values.extend(v);
        missing.extend(m);
    }
    Ok(FeatureMatrix {
        columns: specs
            .iter()
            .map(|s| ColumnInfo {
                name: s.name.clone(),
                source: s.source,
                aggregate: s.aggregate,
            })
            .collect(),
        values,
        missing,
        row_ids: users.iter().map(|u| u.user_id.clone()).collect(),
    })
}

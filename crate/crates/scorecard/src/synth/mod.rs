//! Synthetic cohort generator with a planted, fully documented ground
//! truth, sized to mimic the reference cohorts (50k users at a 5% default
//! rate, 30k at 9%) at desk scale.
//!
//! Two latent factors drive everything: wealth (bureau score, spend
//! levels, card ownership) and engagement (order volume, tenure, device
//! data availability), plus an independent payment-error propensity.
//! Default probability is a logistic function of OBSERVED quantities only
//! — standardized bureau score, log payment-error count, log total spend,
//! tenure — so a model with access to those features can in principle
//! recover the whole signal, and setting `app_effect = 0` makes the app
//! features carry no information beyond the bureau score by construction.
//! The intercept is calibrated by bisection so the mean planted
//! probability hits the configured default rate after clipping.

use crate::datamodel::{
    window_start, GenericAttributes, Money, PaymentMethod, TransactionEvent, TxnStatus,
    UserRecord, Vertical,
};
use crate::mix_seed;
use crate::segments::{split, SegmentName};
use chrono::{NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc};
use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("manifest not found at {0}")]
    MissingManifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything the generator needs; serializable so runs are reproducible
/// from config alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    /// Target cohort default rate after intercept calibration.
    pub base_default_rate: f64,
    /// Log-odds coefficient on the standardized bureau score (negative:
    /// higher score, lower risk).
    pub bureau_effect: f64,
    /// Multiplier on every app-behavior coefficient; 0 silences the app
    /// signal entirely.
    pub app_effect: f64,
    /// Extra log-odds for members of a segment side, keyed
    /// "segmentation:side" (e.g. "device_score:low").
    pub segment_rate_offsets: BTreeMap<String, f64>,
    /// Observation window length; events are generated inside it.
    pub window_months: u32,
    pub seed: u64,
    /// Median credit line in currency units (log-normal).
    pub credit_line_median: f64,
    pub credit_line_sigma: f64,
    /// Mean approved-order volume per user over the window.
    pub mean_orders: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 5_000,
            base_default_rate: 0.05,
            bureau_effect: -1.3,
            app_effect: 1.0,
            segment_rate_offsets: BTreeMap::new(),
            window_months: 6,
            seed: 7,
            credit_line_median: 250.0,
            credit_line_sigma: 0.6,
            mean_orders: 18.0,
        }
    }
}

impl GeneratorConfig {
    /// 50,000 users at a 5% default rate.
    pub fn country_a() -> Self {
        Self {
            n_users: 50_000,
            base_default_rate: 0.05,
            ..Self::default()
        }
    }

    /// 30,000 users at a 9% default rate.
    pub fn country_b() -> Self {
        Self {
            n_users: 30_000,
            base_default_rate: 0.09,
            ..Self::default()
        }
    }

    /// Small cohort for quick runs. The default rate is enriched relative
    /// to the country presets so that model comparisons on 5,000 users keep
    /// enough defaulters to be statistically meaningful.
    pub fn fast() -> Self {
        Self {
            n_users: 5_000,
            base_default_rate: 0.08,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self, SynthError> {
        match name {
            "country_a" => Ok(Self::country_a()),
            "country_b" => Ok(Self::country_b()),
            "fast" => Ok(Self::fast()),
            other => Err(SynthError::BadConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_users < 100 {
            return Err(SynthError::BadConfig(format!(
                "n_users must be at least 100, got {}",
                self.n_users
            )));
        }
        if !(self.base_default_rate > P_CLIP_LO && self.base_default_rate < P_CLIP_HI) {
            return Err(SynthError::BadConfig(format!(
                "base_default_rate must lie in ({P_CLIP_LO}, {P_CLIP_HI}), got {}",
                self.base_default_rate
            )));
        }
        if self.window_months == 0 {
            return Err(SynthError::BadConfig("window_months must be > 0".into()));
        }
        if !(self.credit_line_median > 0.0) || self.credit_line_sigma < 0.0 {
            return Err(SynthError::BadConfig(
                "credit line distribution needs positive median and non-negative sigma".into(),
            ));
        }
        if !(self.mean_orders > 0.0) {
            return Err(SynthError::BadConfig("mean_orders must be positive".into()));
        }
        for key in self.segment_rate_offsets.keys() {
            parse_offset_key(key)?;
        }
        Ok(())
    }
}

/// Planted probabilities are clipped to this range.
pub const P_CLIP_LO: f64 = 0.001;
pub const P_CLIP_HI: f64 = 0.6;

/// Sentinel device score for users without enough device history; sits
/// below every continuous draw so a median cut sends the bucket low.
pub const DEVICE_FLOOR: f64 = -4.0;

/// Share of users in a latent payment-distress state; their error
/// propensity is shifted up, which concentrates observable risk in a
/// small tail the way real delinquency does.
pub const DISTRESS_SHARE: f64 = 0.10;
const DISTRESS_SHIFT: f64 = 2.8;
/// Standardized bureau score below which the deep-subprime bump applies.
pub const BUREAU_TAIL_STD: f64 = -1.5;
/// Payment-error count at which the repeated-errors bump applies.
pub const MANY_ERRORS: u32 = 3;

/// Log-odds coefficients of the planted default model, on observed
/// feature scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoefficients {
    /// Per standard deviation of bureau score.
    pub bureau: f64,
    /// Step bump once the bureau score falls below [`BUREAU_TAIL_STD`];
    /// deep subprime carries concentrated risk.
    pub bureau_low_tail: f64,
    /// Per unit of ln(1 + payment-error count).
    pub payment_errors: f64,
    /// Step bump once the error count reaches [`MANY_ERRORS`]; repeated
    /// errors mark the slightly-bad borrowers the bureau misses.
    pub payment_errors_many: f64,
    /// Per standard deviation of ln(1 + total approved spend).
    pub spend: f64,
    /// Per standard deviation of tenure months.
    pub tenure: f64,
    /// Calibrated so the mean clipped probability hits the target rate.
    pub intercept: f64,
}

/// Per-user ground truth, enough to recompute expected default rates over
/// any subpopulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub p_default: f64,
    pub z_wealth: f64,
    pub z_engagement: f64,
    pub z_payment_error: f64,
}

/// Sidecar emitted with every generated cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthManifest {
    pub config: GeneratorConfig,
    pub coefficients: PlantedCoefficients,
    /// Mean planted probability = expected cohort default rate.
    pub expected_default_rate: f64,
    /// Expected share of users in the device-score floor bucket.
    pub device_floor_share: f64,
    pub per_user: Vec<UserTruth>,
}

pub struct GeneratedCohort {
    pub users: Vec<UserRecord>,
    pub events: Vec<TransactionEvent>,
    pub manifest: TruthManifest,
}

/// Loan grant date shared by the whole synthetic cohort.
pub fn snapshot_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 10, 1).expect("valid date")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn parse_offset_key(key: &str) -> Result<(SegmentName, bool), SynthError> {
    let bad = || SynthError::BadConfig(format!(
        "segment offset key must be \"<segmentation>:<low|high>\", got {key:?}"
    ));
    let (name, side) = key.split_once(':').ok_or_else(bad)?;
    let name = SegmentName::parse(name).map_err(|_| bad())?;
    if name == SegmentName::None {
        return Err(bad());
    }
    match side {
        "low" => Ok((name, false)),
        "high" => Ok((name, true)),
        _ => Err(bad()),
    }
}

const CITIES: [&str; 5] = ["metro_north", "metro_south", "coastal", "inland", "highlands"];
const PHONE_BRANDS: [&str; 4] = ["artemis", "boreal", "cygnus", "dorado"];
const GENDERS: [&str; 3] = ["f", "m", "x"];

/// Store pool sizes per commerce vertical (ids like "del0007").
const STORE_POOLS: [(Vertical, &str, u32); 4] = [
    (Vertical::Delivery, "del", 40),
    (Vertical::Groceries, "gro", 25),
    (Vertical::Pharmacy, "pha", 15),
    (Vertical::OtherRetail, "ret", 30),
];

/// Median order value per vertical, currency units.
fn amount_median(v: Vertical) -> f64 {
    match v {
        Vertical::Delivery => 9.0,
        Vertical::Groceries => 28.0,
        Vertical::Pharmacy => 14.0,
        Vertical::OtherRetail => 35.0,
        Vertical::Transport => 6.5,
        Vertical::Financial => 60.0,
    }
}

const VERTICAL_WEIGHTS: [(Vertical, f64); 6] = [
    (Vertical::Delivery, 0.40),
    (Vertical::Groceries, 0.16),
    (Vertical::Pharmacy, 0.07),
    (Vertical::OtherRetail, 0.12),
    (Vertical::Transport, 0.17),
    (Vertical::Financial, 0.08),
];

fn pick_weighted<T: Copy>(rng: &mut ChaCha8Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(item, w) in items {
        if u < w {
            return item;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

struct UserDraft {
    user: UserRecord,
    events: Vec<TransactionEvent>,
    z_wealth: f64,
    z_engagement: f64,
    z_payment_error: f64,
    payment_errors: u32,
    total_spend: f64,
    label_uniform: f64,
}

fn draw_user(cfg: &GeneratorConfig, index: usize, snapshot: NaiveDate) -> UserDraft {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index as u64 + 1));
    let user_id = format!("u{:06}", index + 1);
    let z_wealth: f64 = rng.sample(StandardNormal);
    let z_engagement: f64 = rng.sample(StandardNormal);
    let z_payment_error: f64 = rng.sample(StandardNormal);
    // a small distressed tail with strongly elevated error propensity
    let z_payment_error = if rng.gen::<f64>() < DISTRESS_SHARE {
        z_payment_error + DISTRESS_SHIFT
    } else {
        z_payment_error
    };

    let bureau_noise: f64 = rng.sample(StandardNormal);
    let bureau_score = (500.0 + 160.0 * (0.75 * z_wealth + 0.6614 * bureau_noise))
        .clamp(0.0, 1000.0);

    // device data exists mostly for engaged users; the rest sit on a floor
    // bucket that a median cut sends low (about 59% of the cohort)
    let device_score = if rng.gen::<f64>() < sigmoid(0.43 - 0.9 * z_engagement) {
        DEVICE_FLOOR
    } else {
        0.6 * z_wealth + 0.8 * rng.sample::<f64, _>(StandardNormal)
    };
    let wealth_score = 0.8 * z_wealth + 0.6 * rng.sample::<f64, _>(StandardNormal);

    let tenure_months = (16.0 + 9.0 * z_engagement + 6.0 * rng.sample::<f64, _>(StandardNormal))
        .round()
        .clamp(1.0, 96.0) as u32;
    let n_credit_cards = (1.2 + 0.8 * z_wealth + 0.6 * rng.sample::<f64, _>(StandardNormal))
        .round()
        .clamp(0.0, 5.0) as u32;
    let n_card_brands = if n_credit_cards == 0 {
        0
    } else {
        rng.gen_range(1..=n_credit_cards.min(3))
    };
    let age_range = pick_weighted(
        &mut rng,
        &[(1u32, 0.10), (2, 0.24), (3, 0.26), (4, 0.20), (5, 0.13), (6, 0.07)],
    );
    let gender = GENDERS[pick_weighted(&mut rng, &[(0usize, 0.48), (1, 0.48), (2, 0.04)])];
    let city = CITIES[pick_weighted(
        &mut rng,
        &[(0usize, 0.30), (1, 0.25), (2, 0.20), (3, 0.15), (4, 0.10)],
    )];
    let phone_brand = PHONE_BRANDS[rng.gen_range(0..PHONE_BRANDS.len())];
    let n_addresses = pick_weighted(&mut rng, &[(1u32, 0.55), (2, 0.30), (3, 0.10), (4, 0.05)]);
    let n_phones = pick_weighted(&mut rng, &[(1u32, 0.80), (2, 0.17), (3, 0.03)]);

    // favorite payment method tilts toward cards with wealth
    let w_credit = (0.30 * (1.0 + 0.5 * z_wealth)).clamp(0.05, 0.70);
    let favorite_pm = pick_weighted(
        &mut rng,
        &[
            (PaymentMethod::CreditCard, w_credit),
            (PaymentMethod::DebitCard, 0.25),
            (PaymentMethod::Wallet, 0.25),
            (PaymentMethod::Cash, 0.20),
        ],
    );
    let preferred_payment_method = favorite_pm.as_str().to_string();

    let credit_line_units = (cfg.credit_line_median.ln()
        + 0.25 * z_wealth
        + cfg.credit_line_sigma * rng.sample::<f64, _>(StandardNormal))
    .exp();
    let credit_line = Money(((credit_line_units * 100.0).round() as i64).max(100));

    // favorite store per commerce vertical
    let favorites: Vec<u32> = STORE_POOLS
        .iter()
        .map(|&(_, _, pool)| rng.gen_range(0..pool))
        .collect();

    let start = window_start(snapshot, cfg.window_months);
    let window_days = (snapshot - start).num_days().max(1);
    let p_error = sigmoid(-3.0 + 0.9 * z_payment_error);

    // ~1% lurkers keep the empty-history paths exercised
    let n_orders = if rng.gen::<f64>() < 0.01 {
        rng.gen_range(0..=1)
    } else {
        let lambda = cfg.mean_orders * (0.45 * z_engagement - 0.101).exp();
        Poisson::new(lambda.max(1e-9))
            .expect("positive lambda")
            .sample(&mut rng)
            .min(150.0) as u64
    };

    let mut events = Vec::with_capacity(n_orders as usize);
    let mut payment_errors = 0u32;
    let mut total_spend = 0.0;
    for _ in 0..n_orders {
        let vertical = pick_weighted(&mut rng, &VERTICAL_WEIGHTS);
        let day = rng.gen_range(0..window_days);
        let date = start + chrono::Days::new(day as u64);
        let hour_base = pick_weighted(
            &mut rng,
            &[(0u32, 0.08), (6, 0.27), (12, 0.33), (18, 0.32)],
        );
        let time = NaiveTime::from_hms_opt(
            hour_base + rng.gen_range(0..6),
            rng.gen_range(0..60),
            rng.gen_range(0..60),
        )
        .expect("valid time");
        let timestamp = Utc.from_utc_datetime(&NaiveDateTime::new(date, time));

        let amount_units = (amount_median(vertical).ln()
            + 0.30 * z_wealth
            + 0.45 * rng.sample::<f64, _>(StandardNormal))
        .exp();
        let amount = Money(((amount_units * 100.0).round() as i64).max(50));

        let payment_method = if rng.gen::<f64>() < 0.7 {
            favorite_pm
        } else {
            PaymentMethod::ALL[rng.gen_range(0..PaymentMethod::ALL.len())]
        };

        let err_scale = match vertical {
            Vertical::Transport => 0.5,
            Vertical::Financial => 0.3,
            _ => 1.0,
        };
        let u = rng.gen::<f64>();
        let status = if u < p_error * err_scale {
            TxnStatus::CancelledPaymentError
        } else if u < p_error * err_scale + 0.025 {
            TxnStatus::CancelledUser
        } else if u < p_error * err_scale + 0.029 {
            TxnStatus::CancelledFraud
        } else if u < p_error * err_scale + 0.041 {
            TxnStatus::Refunded
        } else {
            TxnStatus::Approved
        };
        if status == TxnStatus::CancelledPaymentError {
            payment_errors += 1;
        }
        if status == TxnStatus::Approved {
            total_spend += amount.as_f64();
        }

        let commerce = matches!(
            vertical,
            Vertical::Delivery | Vertical::Groceries | Vertical::Pharmacy | Vertical::OtherRetail
        );
        let tip = if commerce && rng.gen::<f64>() < 0.35 {
            Money((amount.0 as f64 * rng.gen_range(0.05..0.18)).round() as i64)
        } else {
            Money(0)
        };
        let discount = if commerce && rng.gen::<f64>() < 0.22 {
            Money((amount.0 as f64 * rng.gen_range(0.05..0.30)).round() as i64)
        } else {
            Money(0)
        };

        let store_id = if commerce {
            let (slot, prefix, pool) = STORE_POOLS
                .iter()
                .enumerate()
                .find_map(|(i, &(v, p, n))| (v == vertical).then_some((i, p, n)))
                .expect("commerce vertical has a pool");
            let idx = if rng.gen::<f64>() < 0.6 {
                favorites[slot]
            } else {
                rng.gen_range(0..pool)
            };
            format!("{prefix}{idx:04}")
        } else {
            String::new()
        };

        let mut extra = BTreeMap::new();
        match vertical {
            Vertical::Transport => {
                let travel = (2.6 + 0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
                extra.insert(
                    "travel_time_minutes".to_string(),
                    travel.clamp(3.0, 90.0).round(),
                );
                extra.insert("departure_zone".to_string(), rng.gen_range(1..=12) as f64);
                extra.insert("destination_zone".to_string(), rng.gen_range(1..=12) as f64);
            }
            Vertical::Financial => {
                extra.insert("counterparty".to_string(), rng.gen_range(1..=400) as f64);
            }
            _ => {
                extra.insert("product_count".to_string(), rng.gen_range(1..=8) as f64);
            }
        }

        events.push(TransactionEvent {
            user_id: user_id.clone(),
            timestamp,
            vertical,
            amount,
            payment_method,
            status,
            tip,
            discount,
            store_id,
            extra,
        });
    }

    let user = UserRecord {
        user_id,
        bureau_score,
        generic: GenericAttributes {
            age_range,
            gender: gender.to_string(),
            tenure_months,
            city: city.to_string(),
            n_addresses,
            preferred_payment_method,
            n_credit_cards,
            n_card_brands,
            phone_brand: phone_brand.to_string(),
            n_phones,
        },
        credit_line,
        label: 0,
        snapshot_date: snapshot,
        outcome_horizon_months: 6,
        device_score: Some(device_score),
        wealth_score: Some(wealth_score),
    };
    UserDraft {
        user,
        events,
        z_wealth,
        z_engagement,
        z_payment_error,
        payment_errors,
        total_spend,
        label_uniform: rng.gen::<f64>(),
    }
}

fn standardized(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Generate a cohort: users, their event history, and the truth sidecar.
/// Deterministic per config (including seed); users are drawn on
/// independent child streams.
pub fn generate(cfg: &GeneratorConfig) -> Result<GeneratedCohort, SynthError> {
    cfg.validate()?;
    let snapshot = snapshot_date();
    let mut drafts: Vec<UserDraft> = (0..cfg.n_users)
        .map(|i| draw_user(cfg, i, snapshot))
        .collect();

    // planted log-odds over observed features; the two step terms keep
    // risk concentrated enough that denial policies have real savings to
    // find, on both the bureau side and the app side
    let coeffs = PlantedCoefficients {
        bureau: cfg.bureau_effect,
        bureau_low_tail: -2.2 * cfg.bureau_effect,
        payment_errors: 0.8 * cfg.app_effect,
        payment_errors_many: 2.6 * cfg.app_effect,
        spend: -0.45 * cfg.app_effect,
        tenure: -0.3 * cfg.app_effect,
        intercept: 0.0,
    };
    let bureau_std = standardized(
        &drafts.iter().map(|d| d.user.bureau_score).collect::<Vec<_>>(),
    );
    let spend_std = standardized(
        &drafts
            .iter()
            .map(|d| (1.0 + d.total_spend).ln())
            .collect::<Vec<_>>(),
    );
    let tenure_std = standardized(
        &drafts
            .iter()
            .map(|d| d.user.generic.tenure_months as f64)
            .collect::<Vec<_>>(),
    );
    let mut raw: Vec<f64> = (0..drafts.len())
        .map(|i| {
            let deep_subprime = bureau_std[i] < BUREAU_TAIL_STD;
            let many_errors = drafts[i].payment_errors >= MANY_ERRORS;
            coeffs.bureau * bureau_std[i]
                + if deep_subprime { coeffs.bureau_low_tail } else { 0.0 }
                + coeffs.payment_errors * (1.0 + drafts[i].payment_errors as f64).ln()
                + if many_errors { coeffs.payment_errors_many } else { 0.0 }
                + coeffs.spend * spend_std[i]
                + coeffs.tenure * tenure_std[i]
        })
        .collect();

    // optional planted per-segment offsets
    for (key, &offset) in &cfg.segment_rate_offsets {
        let (name, high_side) = parse_offset_key(key)?;
        let scores: Vec<f64> = match name {
            SegmentName::DeviceScore => drafts
                .iter()
                .map(|d| d.user.device_score.unwrap_or(DEVICE_FLOOR))
                .collect(),
            SegmentName::WealthScore => drafts
                .iter()
                .map(|d| d.user.wealth_score.unwrap_or(0.0))
                .collect(),
            SegmentName::Rfm => {
                let users: Vec<UserRecord> = drafts.iter().map(|d| d.user.clone()).collect();
                let events: Vec<TransactionEvent> =
                    drafts.iter().flat_map(|d| d.events.iter().cloned()).collect();
                crate::segments::rfm_score(&users, &events, snapshot, cfg.window_months)
            }
            SegmentName::None => unreachable!("rejected by key parser"),
        };
        let cut = split(&scores, None).expect("cohort is non-empty");
        let members = if high_side { &cut.high } else { &cut.low };
        for &i in members {
            raw[i] += offset;
        }
    }

    // calibrate the intercept so the mean clipped probability hits target
    let clipped_mean = |c: f64| -> f64 {
        raw.iter()
            .map(|r| sigmoid(c + r).clamp(P_CLIP_LO, P_CLIP_HI))
            .sum::<f64>()
            / raw.len() as f64
    };
    let (mut lo, mut hi) = (-20.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if clipped_mean(mid) < cfg.base_default_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let coeffs = PlantedCoefficients {
        intercept,
        ..coeffs
    };

    let mut per_user = Vec::with_capacity(drafts.len());
    let mut users = Vec::with_capacity(drafts.len());
    let mut events = Vec::new();
    let mut p_sum = 0.0;
    for (i, draft) in drafts.iter_mut().enumerate() {
        let p = sigmoid(intercept + raw[i]).clamp(P_CLIP_LO, P_CLIP_HI);
        p_sum += p;
        draft.user.label = (draft.label_uniform < p) as u8;
        per_user.push(UserTruth {
            user_id: draft.user.user_id.clone(),
            p_default: p,
            z_wealth: draft.z_wealth,
            z_engagement: draft.z_engagement,
            z_payment_error: draft.z_payment_error,
        });
        users.push(draft.user.clone());
        events.append(&mut draft.events);
    }

    let manifest = TruthManifest {
        config: cfg.clone(),
        coefficients: coeffs,
        expected_default_rate: p_sum / users.len() as f64,
        device_floor_share: 0.5925,
        per_user,
    };
    Ok(GeneratedCohort {
        users,
        events,
        manifest,
    })
}

/// Human-readable table of the planted coefficients and their expected
/// effect directions.
pub fn describe_truth(manifest: &TruthManifest) -> String {
    let c = &manifest.coefficients;
    let dir = |v: f64, up: &str, down: &str| if v > 0.0 { up.to_string() } else if v < 0.0 { down.to_string() } else { "no effect".to_string() };
    let mut out = String::new();
    out.push_str(&format!(
        "planted ground truth: {} users, seed {}, target default rate {:.4}\n",
        manifest.config.n_users, manifest.config.seed, manifest.config.base_default_rate
    ));
    out.push_str(&format!(
        "  {:<18} {:>8}  effect\n",
        "coefficient", "value"
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "bureau_score",
        c.bureau,
        dir(c.bureau, "higher score raises risk", "higher score lowers risk")
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "bureau_low_tail",
        c.bureau_low_tail,
        dir(
            c.bureau_low_tail,
            "deep-subprime scores raise risk",
            "deep-subprime scores lower risk"
        )
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "payment_errors",
        c.payment_errors,
        dir(c.payment_errors, "more errors raise risk", "more errors lower risk")
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "payment_errors_many",
        c.payment_errors_many,
        dir(
            c.payment_errors_many,
            "repeated errors raise risk",
            "repeated errors lower risk"
        )
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "spend",
        c.spend,
        dir(c.spend, "higher spend raises risk", "higher spend lowers risk")
    ));
    out.push_str(&format!(
        "  {:<18} {:>8.3}  {}\n",
        "tenure",
        c.tenure,
        dir(c.tenure, "longer tenure raises risk", "longer tenure lowers risk")
    ));
    out.push_str(&format!("  {:<18} {:>8.3}\n", "intercept", c.intercept));
    out.push_str(&format!(
        "  expected default rate {:.4}; device floor share {:.4}\n",
        manifest.expected_default_rate, manifest.device_floor_share
    ));
    for (key, offset) in &manifest.config.segment_rate_offsets {
        out.push_str(&format!("  segment offset {key}: {offset:+.3}\n"));
    }
    out
}

pub fn save_manifest(path: &Path, manifest: &TruthManifest) -> Result<(), SynthError> {
    let file = File::create(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::to_writer(BufWriter::new(file), manifest)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<TruthManifest, SynthError> {
    if !path.exists() {
        return Err(SynthError::MissingManifest(path.display().to_string()));
    }
    let file = File::open(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            n_users: 800,
            seed: 3,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny();
        c.n_users = 99;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.base_default_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.segment_rate_offsets.insert("device:low".into(), 0.1);
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.segment_rate_offsets.insert("rfm:high".into(), 0.1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn realized_rate_is_near_target() {
        let cohort = generate(&tiny()).unwrap();
        let rate = cohort.users.iter().filter(|u| u.label == 1).count() as f64
            / cohort.users.len() as f64;
        // binomial 99% band around the calibrated mean probability
        let expect = cohort.manifest.expected_default_rate;
        assert!((expect - 0.05).abs() < 1e-6, "calibration off: {expect}");
        let sd = (0.05 * 0.95 / 800.0_f64).sqrt();
        assert!((rate - expect).abs() < 2.576 * sd + 1e-12, "rate {rate}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&tiny()).unwrap();
        let b = generate(&tiny()).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.events, b.events);
        assert_eq!(
            serde_json::to_string(&a.manifest).unwrap(),
            serde_json::to_string(&b.manifest).unwrap()
        );
        let mut c = tiny();
        c.seed = 4;
        let d = generate(&c).unwrap();
        assert_ne!(a.users, d.users);
    }

    #[test]
    fn events_respect_domain_invariants() {
        let cohort = generate(&tiny()).unwrap();
        assert!(!cohort.events.is_empty());
        let snapshot = snapshot_date();
        let start = window_start(snapshot, 6);
        for e in &cohort.events {
            assert!(e.amount.0 >= 0 && e.tip.0 >= 0 && e.discount.0 >= 0);
            let d = e.timestamp.date_naive();
            assert!(d >= start && d < snapshot, "event outside window: {d}");
            if matches!(e.vertical, Vertical::Transport | Vertical::Financial) {
                assert_eq!(e.tip.0, 0);
                assert_eq!(e.discount.0, 0);
                assert!(e.store_id.is_empty());
            } else {
                assert!(!e.store_id.is_empty());
                assert!(e.extra.contains_key("product_count"));
            }
        }
    }

    #[test]
    fn coefficients_echo_config_and_directions() {
        let cohort = generate(&tiny()).unwrap();
        let m = &cohort.manifest;
        assert_eq!(m.config, tiny());
        assert!(m.coefficients.payment_errors > 0.0);
        assert!(m.coefficients.payment_errors_many > 0.0);
        assert!(m.coefficients.bureau < 0.0);
        assert!(m.coefficients.bureau_low_tail > 0.0);
        // the bureau terms dominate their own scale and all app terms
        assert!(m.coefficients.bureau.abs() > m.coefficients.payment_errors.abs());
        assert!(m.coefficients.bureau.abs() > m.coefficients.spend.abs());
        assert!(m.coefficients.bureau.abs() > m.coefficients.tenure.abs());
        let bureau_max = m.coefficients.bureau.abs().max(m.coefficients.bureau_low_tail.abs());
        let app_max = m
            .coefficients
            .payment_errors
            .abs()
            .max(m.coefficients.payment_errors_many.abs())
            .max(m.coefficients.spend.abs())
            .max(m.coefficients.tenure.abs());
        assert!(bureau_max > app_max);
        let report = describe_truth(m);
        assert!(report.contains("payment_errors"));
        assert!(report.contains("more errors raise risk"));
        assert!(report.contains("repeated errors raise risk"));
        assert!(report.contains("higher score lowers risk"));
        assert!(report.contains("deep-subprime scores raise risk"));
    }

    #[test]
    fn app_effect_zero_silences_app_coefficients() {
        let mut c = tiny();
        c.app_effect = 0.0;
        let cohort = generate(&c).unwrap();
        assert_eq!(cohort.manifest.coefficients.payment_errors, 0.0);
        assert_eq!(cohort.manifest.coefficients.payment_errors_many, 0.0);
        assert_eq!(cohort.manifest.coefficients.spend, 0.0);
        assert_eq!(cohort.manifest.coefficients.tenure, 0.0);
    }

    #[test]
    fn device_floor_bucket_near_target_share() {
        let cohort = generate(&GeneratorConfig {
            n_users: 4000,
            seed: 9,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let floor = cohort
            .users
            .iter()
            .filter(|u| u.device_score == Some(DEVICE_FLOOR))
            .count() as f64
            / cohort.users.len() as f64;
        assert!((floor - 0.5925).abs() < 0.03, "floor share {floor}");
    }

    #[test]
    fn planted_signals_have_the_right_sign_across_seeds() {
        // point-biserial correlation of key observed features with labels
        for seed in 1..=10 {
            let cohort = generate(&GeneratorConfig {
                n_users: 2500,
                seed,
                ..GeneratorConfig::default()
            })
            .unwrap();
            let labels: Vec<f64> = cohort.users.iter().map(|u| u.label as f64).collect();
            let bureau: Vec<f64> = cohort.users.iter().map(|u| u.bureau_score).collect();
            let mut errors: std::collections::HashMap<&str, f64> = Default::default();
            for e in &cohort.events {
                if e.status == TxnStatus::CancelledPaymentError {
                    *errors.entry(e.user_id.as_str()).or_default() += 1.0;
                }
            }
            let err_counts: Vec<f64> = cohort
                .users
                .iter()
                .map(|u| errors.get(u.user_id.as_str()).copied().unwrap_or(0.0))
                .collect();
            assert!(
                correlation(&bureau, &labels) < 0.0,
                "seed {seed}: bureau sign"
            );
            assert!(
                correlation(&err_counts, &labels) > 0.0,
                "seed {seed}: payment-error sign"
            );
        }
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (a, b) in x.iter().zip(y) {
            cov += (a - mx) * (b - my);
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
        }
        cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let cohort = generate(&tiny()).unwrap();
        save_manifest(&path, &cohort.manifest).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.config, cohort.manifest.config);
        assert_eq!(loaded.per_user.len(), cohort.manifest.per_user.len());
        assert!(matches!(
            load_manifest(&dir.path().join("absent.json")),
            Err(SynthError::MissingManifest(_))
        ));
    }

    #[test]
    fn presets_match_documented_cohorts() {
        assert_eq!(GeneratorConfig::country_a().n_users, 50_000);
        assert_eq!(GeneratorConfig::country_a().base_default_rate, 0.05);
        assert_eq!(GeneratorConfig::country_b().n_users, 30_000);
        assert_eq!(GeneratorConfig::country_b().base_default_rate, 0.09);
        assert!(GeneratorConfig::preset("fast").unwrap().n_users <= 5_000);
        assert!(GeneratorConfig::preset("nope").is_err());
    }
}

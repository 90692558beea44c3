//! The default feature catalog: every engineered column the pipeline
//! computes out of the box, spanning user attributes, the bureau score,
//! order behavior per vertical, consumption shares, cancellations, refunds,
//! payment-method usage, discounts, tips, store loyalty, order timing,
//! rides, and financial-service activity.

use super::{
    Aggregate, DayPart, Denominator, FeatureSource, FeatureSpec, Filters, GenericField, Measure,
    StatusFilter,
};
use crate::datamodel::{PaymentMethod, TxnStatus, Vertical};

fn spec(
    name: &str,
    source: FeatureSource,
    measure: Measure,
    aggregate: Aggregate,
    filters: Filters,
    denominator: Option<Denominator>,
) -> FeatureSpec {
    FeatureSpec {
        name: name.to_string(),
        source,
        measure,
        aggregate,
        filters,
        denominator,
        window_months: None,
    }
}

fn approved(vertical: Option<Vertical>) -> Filters {
    Filters {
        vertical,
        status: StatusFilter::Approved,
        payment_method: None,
        day_part: None,
    }
}

/// Build the default catalog. Count/sum/average/max of order value are
/// emitted per order vertical; shares use the user's total approved spend
/// (or order count, for timing shares) as denominator.
pub fn default_feature_catalog() -> Vec<FeatureSpec> {
    let mut specs = Vec::new();

    // User attributes, passed through unchanged (categoricals are
    // vocabulary-encoded at featurize time).
    for (name, field) in [
        ("generic_age_range", GenericField::AgeRange),
        ("generic_gender", GenericField::Gender),
        ("generic_mob", GenericField::TenureMonths),
        ("generic_city", GenericField::City),
        ("generic_n_addresses", GenericField::NAddresses),
        (
            "generic_preferred_payment_method",
            GenericField::PreferredPaymentMethod,
        ),
        ("generic_n_credit_cards", GenericField::NCreditCards),
        ("generic_n_card_brands", GenericField::NCardBrands),
        ("generic_phone_brand", GenericField::PhoneBrand),
        ("generic_n_phones", GenericField::NPhones),
    ] {
        specs.push(spec(
            name,
            FeatureSource::Generic,
            Measure::Generic(field),
            Aggregate::Identity,
            Filters::default(),
            None,
        ));
    }

    specs.push(spec(
        "bureau_score",
        FeatureSource::Bureau,
        Measure::Bureau,
        Aggregate::Identity,
        Filters::default(),
        None,
    ));

    // Approved-order aggregates per order vertical.
    for v in Vertical::DELIVERY_FAMILY {
        let p = v.as_str();
        specs.push(spec(
            &format!("{p}_order_count"),
            FeatureSource::Delivery,
            Measure::Unit,
            Aggregate::Count,
            approved(Some(v)),
            None,
        ));
        specs.push(spec(
            &format!("{p}_total_spend"),
            FeatureSource::Delivery,
            Measure::Amount,
            Aggregate::Sum,
            approved(Some(v)),
            None,
        ));
        specs.push(spec(
            &format!("{p}_avg_ticket"),
            FeatureSource::Delivery,
            Measure::Amount,
            Aggregate::Avg,
            approved(Some(v)),
            None,
        ));
        specs.push(spec(
            &format!("{p}_max_ticket"),
            FeatureSource::Delivery,
            Measure::Amount,
            Aggregate::Max,
            approved(Some(v)),
            None,
        ));
    }

    // Share of total approved spend per vertical; the six columns partition
    // a user's spend, so they sum to 1 whenever total spend is positive.
    for v in Vertical::ALL {
        let source = match v {
            Vertical::Transport => FeatureSource::Transport,
            Vertical::Financial => FeatureSource::Financial,
            _ => FeatureSource::Delivery,
        };
        specs.push(spec(
            &format!("pct_spend_{}", v.as_str()),
            source,
            Measure::Amount,
            Aggregate::Pct,
            approved(Some(v)),
            Some(Denominator::ApprovedSpend),
        ));
    }

    // Cancellations, split by cause.
    specs.push(spec(
        "delivery_payment_error_count",
        FeatureSource::Delivery,
        Measure::Unit,
        Aggregate::Count,
        Filters {
            vertical: Some(Vertical::Delivery),
            status: StatusFilter::Exact(TxnStatus::CancelledPaymentError),
            payment_method: None,
            day_part: None,
        },
        None,
    ));
    for (name, status) in [
        ("payment_error_count", TxnStatus::CancelledPaymentError),
        ("cancelled_user_count", TxnStatus::CancelledUser),
        ("cancelled_fraud_count", TxnStatus::CancelledFraud),
    ] {
        specs.push(spec(
            name,
            FeatureSource::Delivery,
            Measure::Unit,
            Aggregate::Count,
            Filters {
                vertical: None,
                status: StatusFilter::Exact(status),
                payment_method: None,
                day_part: None,
            },
            None,
        ));
    }
    specs.push(spec(
        "cancelled_total_count",
        FeatureSource::Delivery,
        Measure::Unit,
        Aggregate::Count,
        Filters {
            vertical: None,
            status: StatusFilter::AnyCancelled,
            payment_method: None,
            day_part: None,
        },
        None,
    ));

    // Refunds.
    let refunded = Filters {
        vertical: None,
        status: StatusFilter::Exact(TxnStatus::Refunded),
        payment_method: None,
        day_part: None,
    };
    specs.push(spec(
        "refund_count",
        FeatureSource::Delivery,
        Measure::Unit,
        Aggregate::Count,
        refunded.clone(),
        None,
    ));
    specs.push(spec(
        "refund_amount_total",
        FeatureSource::Delivery,
        Measure::Amount,
        Aggregate::Sum,
        refunded,
        None,
    ));

    // Payment-method usage: counts plus share of approved spend.
    for pm in PaymentMethod::ALL {
        let filters = Filters {
            vertical: None,
            status: StatusFilter::Approved,
            payment_method: Some(pm),
            day_part: None,
        };
        specs.push(spec(
            &format!("pm_{}_count", pm.as_str()),
            FeatureSource::Delivery,
            Measure::Unit,
            Aggregate::Count,
            filters.clone(),
            None,
        ));
        specs.push(spec(
            &format!("pct_spend_{}", pm.as_str()),
            FeatureSource::Delivery,
            Measure::Amount,
            Aggregate::Pct,
            filters,
            Some(Denominator::ApprovedSpend),
        ));
    }

    // Card spend levels complement the share columns above.
    for pm in [PaymentMethod::CreditCard, PaymentMethod::DebitCard] {
        specs.push(spec(
            &format!("{}_spend", pm.as_str()),
            FeatureSource::Financial,
            Measure::Amount,
            Aggregate::Sum,
            Filters {
                vertical: None,
                status: StatusFilter::Approved,
                payment_method: Some(pm),
                day_part: None,
            },
            None,
        ));
    }

    // Discounts and tips on approved orders.
    specs.push(spec(
        "discount_total",
        FeatureSource::Delivery,
        Measure::Discount,
        Aggregate::Sum,
        approved(None),
        None,
    ));
    specs.push(spec(
        "discount_order_pct",
        FeatureSource::Delivery,
        Measure::DiscountPresent,
        Aggregate::Pct,
        approved(None),
        Some(Denominator::ApprovedCount),
    ));
    specs.push(spec(
        "tip_total",
        FeatureSource::Delivery,
        Measure::Tip,
        Aggregate::Sum,
        approved(None),
        None,
    ));
    specs.push(spec(
        "tip_avg",
        FeatureSource::Delivery,
        Measure::Tip,
        Aggregate::Avg,
        approved(None),
        None,
    ));
    specs.push(spec(
        "tip_order_pct",
        FeatureSource::Delivery,
        Measure::TipPresent,
        Aggregate::Pct,
        approved(None),
        Some(Denominator::ApprovedCount),
    ));

    // Store loyalty: breadth of stores and concentration on the favorite.
    specs.push(spec(
        "distinct_stores",
        FeatureSource::Delivery,
        Measure::Store,
        Aggregate::Distinct,
        approved(None),
        None,
    ));
    specs.push(spec(
        "top_store_order_share",
        FeatureSource::Delivery,
        Measure::Store,
        Aggregate::TopShare,
        approved(None),
        None,
    ));

    // Basket size.
    specs.push(spec(
        "avg_products_per_order",
        FeatureSource::Delivery,
        Measure::Extra("product_count".to_string()),
        Aggregate::Avg,
        approved(None),
        None,
    ));

    // When in the day the user orders.
    for (name, part) in [
        ("orders_night_share", DayPart::Night),
        ("orders_morning_share", DayPart::Morning),
        ("orders_afternoon_share", DayPart::Afternoon),
        ("orders_evening_share", DayPart::Evening),
    ] {
        specs.push(spec(
            name,
            FeatureSource::Delivery,
            Measure::Unit,
            Aggregate::Pct,
            Filters {
                vertical: None,
                status: StatusFilter::Approved,
                payment_method: None,
                day_part: Some(part),
            },
            Some(Denominator::ApprovedCount),
        ));
    }

    // Rides.
    let transport = approved(Some(Vertical::Transport));
    specs.push(spec(
        "transport_trip_count",
        FeatureSource::Transport,
        Measure::Unit,
        Aggregate::Count,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_total_spend",
        FeatureSource::Transport,
        Measure::Amount,
        Aggregate::Sum,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_avg_ticket",
        FeatureSource::Transport,
        Measure::Amount,
        Aggregate::Avg,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_avg_travel_time",
        FeatureSource::Transport,
        Measure::Extra("travel_time_minutes".to_string()),
        Aggregate::Avg,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_max_travel_time",
        FeatureSource::Transport,
        Measure::Extra("travel_time_minutes".to_string()),
        Aggregate::Max,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_distinct_departures",
        FeatureSource::Transport,
        Measure::Extra("departure_zone".to_string()),
        Aggregate::Distinct,
        transport.clone(),
        None,
    ));
    specs.push(spec(
        "transport_distinct_destinations",
        FeatureSource::Transport,
        Measure::Extra("destination_zone".to_string()),
        Aggregate::Distinct,
        transport,
        None,
    ));

    // Financial services: transfers and wallet movements.
    let financial = approved(Some(Vertical::Financial));
    specs.push(spec(
        "financial_txn_count",
        FeatureSource::Financial,
        Measure::Unit,
        Aggregate::Count,
        financial.clone(),
        None,
    ));
    specs.push(spec(
        "financial_total_volume",
        FeatureSource::Financial,
        Measure::Amount,
        Aggregate::Sum,
        financial.clone(),
        None,
    ));
    specs.push(spec(
        "financial_avg_amount",
        FeatureSource::Financial,
        Measure::Amount,
        Aggregate::Avg,
        financial.clone(),
        None,
    ));
    specs.push(spec(
        "financial_max_amount",
        FeatureSource::Financial,
        Measure::Amount,
        Aggregate::Max,
        financial.clone(),
        None,
    ));
    specs.push(spec(
        "financial_distinct_counterparties",
        FeatureSource::Financial,
        Measure::Extra("counterparty".to_string()),
        Aggregate::Distinct,
        financial,
        None,
    ));

    specs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_large_enough() {
        assert!(default_feature_catalog().len() >= 40);
    }

    #[test]
    fn catalog_names_are_unique() {
        let specs = default_feature_catalog();
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), specs.len());
    }

    #[test]
    fn catalog_contains_delivery_payment_error_count() {
        let specs = default_feature_catalog();
        let s = specs
            .iter()
            .find(|s| s.name == "delivery_payment_error_count")
            .expect("spec present");
        assert_eq!(s.source, FeatureSource::Delivery);
        assert_eq!(s.aggregate, Aggregate::Count);
        assert_eq!(s.filters.vertical, Some(Vertical::Delivery));
        assert_eq!(
            s.filters.status,
            StatusFilter::Exact(TxnStatus::CancelledPaymentError)
        );
    }

    #[test]
    fn catalog_contains_generic_mob_pass_through() {
        let specs = default_feature_catalog();
        let s = specs
            .iter()
            .find(|s| s.name == "generic_mob")
            .expect("spec present");
        assert_eq!(s.source, FeatureSource::Generic);
        assert_eq!(s.aggregate, Aggregate::Identity);
        assert_eq!(s.measure, Measure::Generic(GenericField::TenureMonths));
    }

    #[test]
    fn catalog_covers_all_sources() {
        let specs = default_feature_catalog();
        for source in [
            FeatureSource::Generic,
            FeatureSource::Delivery,
            FeatureSource::Transport,
            FeatureSource::Financial,
            FeatureSource::Bureau,
        ] {
            assert!(
                specs.iter().any(|s| s.source == source),
                "no spec with source {source:?}"
            );
        }
    }

    #[test]
    fn pct_specs_declare_denominator() {
        for s in default_feature_catalog() {
            if s.aggregate == Aggregate::Pct {
                assert!(s.denominator.is_some(), "{} lacks denominator", s.name);
            }
        }
    }
}

//! File ingestion for user records and transaction events.
//!
//! Both readers accept CSV (`.csv`) or JSON Lines (`.jsonl` / `.ndjson`),
//! chosen by file extension. Structural problems (missing file, empty file,
//! absent required column) abort with [`IngestError`]; malformed individual
//! rows are skipped and reported in the [`IngestReport`] so one bad row
//! cannot sink a batch.

use super::{
    GenericAttributes, Money, PaymentMethod, TransactionEvent, TxnStatus, UserRecord, Vertical,
};
use chrono::{DateTime, NaiveDate, Utc};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;
use thiserror::Error;

/// Structural ingestion failure: nothing usable was read.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is empty")]
    EmptyFile { path: String },
    #[error("{path} is missing required column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path}: unsupported extension (expected .csv, .jsonl, or .ndjson)")]
    UnknownFormat { path: String },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// One skipped row: where it was and why it was dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row number (header excluded for CSV).
    pub row: usize,
    pub column: String,
    pub reason: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: column `{}`: {}", self.row, self.column, self.reason)
    }
}

/// Outcome of one ingestion pass.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub skipped: Vec<RowError>,
    /// Rows whose vertical token was unknown and coerced to `other_retail`.
    pub unknown_verticals: usize,
}

impl IngestReport {
    pub fn rows_skipped(&self) -> usize {
        self.skipped.len()
    }
}

/// Which optional columns a user file carried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UserSchema {
    pub has_device_score: bool,
    pub has_wealth_score: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Csv,
    Jsonl,
}

fn file_kind(path: &Path) -> Result<FileKind, IngestError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(FileKind::Csv),
        Some("jsonl") | Some("ndjson") => Ok(FileKind::Jsonl),
        _ => Err(IngestError::UnknownFormat {
            path: path.display().to_string(),
        }),
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

// device_score / wealth_score are optional and intentionally absent here.
const USER_COLUMNS: [&str; 16] = [
    "user_id",
    "bureau_score",
    "age_range",
    "gender",
    "tenure_months",
    "city",
    "n_addresses",
    "preferred_payment_method",
    "n_credit_cards",
    "n_card_brands",
    "phone_brand",
    "n_phones",
    "credit_line",
    "label",
    "snapshot_date",
    "outcome_horizon_months",
];

const EVENT_COLUMNS: [&str; 9] = [
    "user_id",
    "timestamp",
    "vertical",
    "amount",
    "payment_method",
    "status",
    "tip",
    "discount",
    "store_id",
];

struct ColumnIndex {
    by_name: BTreeMap<String, usize>,
}

impl ColumnIndex {
    fn new(headers: &csv::StringRecord) -> ColumnIndex {
        let by_name = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        ColumnIndex { by_name }
    }

    fn require(&self, path: &Path, names: &[&str]) -> Result<(), IngestError> {
        for name in names {
            if !self.by_name.contains_key(*name) {
                return Err(IngestError::MissingColumn {
                    path: path.display().to_string(),
                    column: (*name).to_string(),
                });
            }
        }
        Ok(())
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.by_name
            .get(name)
            .and_then(|&i| record.get(i))
            .map(str::trim)
    }

    fn has(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }
}

fn row_err(row: usize, column: &str, reason: impl Into<String>) -> RowError {
    RowError {
        row,
        column: column.to_string(),
        reason: reason.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    idx: &ColumnIndex,
    record: &csv::StringRecord,
    row: usize,
    name: &str,
) -> Result<T, RowError>
where
    T::Err: std::fmt::Display,
{
    let raw = idx
        .get(record, name)
        .ok_or_else(|| row_err(row, name, "missing value"))?;
    raw.parse::<T>()
        .map_err(|e| row_err(row, name, format!("cannot parse `{raw}`: {e}")))
}

fn parse_optional_f64(
    idx: &ColumnIndex,
    record: &csv::StringRecord,
    row: usize,
    name: &str,
) -> Result<Option<f64>, RowError> {
    match idx.get(record, name) {
        None | Some("") => Ok(None),
        Some(raw) => raw
            .parse::<f64>()
            .map(Some)
            .map_err(|e| row_err(row, name, format!("cannot parse `{raw}`: {e}"))),
    }
}

fn user_from_csv(
    idx: &ColumnIndex,
    record: &csv::StringRecord,
    row: usize,
) -> Result<UserRecord, RowError> {
    let bureau_score: f64 = parse_field(idx, record, row, "bureau_score")?;
    if !(0.0..=1000.0).contains(&bureau_score) {
        return Err(row_err(
            row,
            "bureau_score",
            format!("{bureau_score} outside [0, 1000]"),
        ));
    }
    let label: u8 = parse_field(idx, record, row, "label")?;
    if label > 1 {
        return Err(row_err(row, "label", format!("{label} is not 0/1")));
    }
    let credit_line = Money(parse_field::<i64>(idx, record, row, "credit_line")?);
    if credit_line.0 <= 0 {
        return Err(row_err(
            row,
            "credit_line",
            format!("{} is not positive", credit_line.0),
        ));
    }
    let snapshot_raw = idx
        .get(record, "snapshot_date")
        .ok_or_else(|| row_err(row, "snapshot_date", "missing value"))?;
    let snapshot_date = NaiveDate::parse_from_str(snapshot_raw, "%Y-%m-%d")
        .map_err(|e| row_err(row, "snapshot_date", format!("cannot parse `{snapshot_raw}`: {e}")))?;

    Ok(UserRecord {
        user_id: idx
            .get(record, "user_id")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| row_err(row, "user_id", "missing value"))?
            .to_string(),
        bureau_score,
        generic: GenericAttributes {
            age_range: parse_field(idx, record, row, "age_range")?,
            gender: idx.get(record, "gender").unwrap_or("").to_string(),
            tenure_months: parse_field(idx, record, row, "tenure_months")?,
            city: idx.get(record, "city").unwrap_or("").to_string(),
            n_addresses: parse_field(idx, record, row, "n_addresses")?,
            preferred_payment_method: idx
                .get(record, "preferred_payment_method")
                .unwrap_or("")
                .to_string(),
            n_credit_cards: parse_field(idx, record, row, "n_credit_cards")?,
            n_card_brands: parse_field(idx, record, row, "n_card_brands")?,
            phone_brand: idx.get(record, "phone_brand").unwrap_or("").to_string(),
            n_phones: parse_field(idx, record, row, "n_phones")?,
        },
        credit_line,
        label,
        snapshot_date,
        outcome_horizon_months: parse_field(idx, record, row, "outcome_horizon_months")?,
        device_score: parse_optional_f64(idx, record, row, "device_score")?,
        wealth_score: parse_optional_f64(idx, record, row, "wealth_score")?,
    })
}

/// Read user records from a CSV or JSONL file.
pub fn ingest_users(path: &Path) -> Result<(Vec<UserRecord>, UserSchema, IngestReport), IngestError> {
    match file_kind(path)? {
        FileKind::Csv => ingest_users_csv(path),
        FileKind::Jsonl => ingest_users_jsonl(path),
    }
}

fn ingest_users_csv(
    path: &Path,
) -> Result<(Vec<UserRecord>, UserSchema, IngestReport), IngestError> {
    let file = open(path)?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.display().to_string(),
            source,
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    let idx = ColumnIndex::new(&headers);
    idx.require(path, &USER_COLUMNS)?;
    let schema = UserSchema {
        has_device_score: idx.has("device_score"),
        has_wealth_score: idx.has("wealth_score"),
    };

    let mut users = Vec::new();
    let mut report = IngestReport::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push(row_err(row, "<record>", e.to_string()));
                continue;
            }
        };
        match user_from_csv(&idx, &record, row) {
            Ok(user) => {
                users.push(user);
                report.rows_kept += 1;
            }
            Err(e) => report.skipped.push(e),
        }
    }
    if report.rows_read == 0 {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    for e in &report.skipped {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok((users, schema, report))
}

fn ingest_users_jsonl(
    path: &Path,
) -> Result<(Vec<UserRecord>, UserSchema, IngestReport), IngestError> {
    let file = open(path)?;
    let mut users = Vec::new();
    let mut report = IngestReport::default();
    let mut schema = UserSchema::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        match serde_json::from_str::<UserRecord>(&line) {
            Ok(user) => {
                schema.has_device_score |= user.device_score.is_some();
                schema.has_wealth_score |= user.wealth_score.is_some();
                users.push(user);
                report.rows_kept += 1;
            }
            Err(e) => report.skipped.push(row_err(row, "<json>", e.to_string())),
        }
    }
    if report.rows_read == 0 {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    for e in &report.skipped {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok((users, schema, report))
}

fn event_from_csv(
    idx: &ColumnIndex,
    record: &csv::StringRecord,
    row: usize,
    report: &mut IngestReport,
) -> Result<TransactionEvent, RowError> {
    let ts_raw = idx
        .get(record, "timestamp")
        .ok_or_else(|| row_err(row, "timestamp", "missing value"))?;
    let timestamp = DateTime::parse_from_rfc3339(ts_raw)
        .map_err(|e| row_err(row, "timestamp", format!("cannot parse `{ts_raw}`: {e}")))?
        .with_timezone(&Utc);

    let vertical_raw = idx
        .get(record, "vertical")
        .ok_or_else(|| row_err(row, "vertical", "missing value"))?;
    let (vertical, known) = Vertical::parse_lossy(vertical_raw);
    if !known {
        report.unknown_verticals += 1;
        log::warn!("row {row}: unknown vertical `{vertical_raw}` coerced to other_retail");
    }

    let amount = Money(parse_field::<i64>(idx, record, row, "amount")?);
    if amount.is_negative() {
        return Err(row_err(row, "amount", format!("{} is negative", amount.0)));
    }

    let pm_raw = idx
        .get(record, "payment_method")
        .ok_or_else(|| row_err(row, "payment_method", "missing value"))?;
    let payment_method = PaymentMethod::parse(pm_raw)
        .ok_or_else(|| row_err(row, "payment_method", format!("unknown method `{pm_raw}`")))?;

    let status_raw = idx
        .get(record, "status")
        .ok_or_else(|| row_err(row, "status", "missing value"))?;
    let status = TxnStatus::parse(status_raw)
        .ok_or_else(|| row_err(row, "status", format!("unknown status `{status_raw}`")))?;

    let mut extra = BTreeMap::new();
    for (name, &col) in &idx.by_name {
        if EVENT_COLUMNS.contains(&name.as_str()) {
            continue;
        }
        if let Some(raw) = record.get(col).map(str::trim) {
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw
                .parse()
                .map_err(|e| row_err(row, name, format!("cannot parse `{raw}`: {e}")))?;
            extra.insert(name.clone(), value);
        }
    }

    Ok(TransactionEvent {
        user_id: idx
            .get(record, "user_id")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| row_err(row, "user_id", "missing value"))?
            .to_string(),
        timestamp,
        vertical,
        amount,
        payment_method,
        status,
        tip: Money(parse_field::<i64>(idx, record, row, "tip")?),
        discount: Money(parse_field::<i64>(idx, record, row, "discount")?),
        store_id: idx.get(record, "store_id").unwrap_or("").to_string(),
        extra,
    })
}

/// Read transaction events from a CSV or JSONL file. Events come back
/// sorted by `(user_id, timestamp)` so downstream grouping is a linear scan.
pub fn ingest_events(path: &Path) -> Result<(Vec<TransactionEvent>, IngestReport), IngestError> {
    let (mut events, report) = match file_kind(path)? {
        FileKind::Csv => ingest_events_csv(path)?,
        FileKind::Jsonl => ingest_events_jsonl(path)?,
    };
    events.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then_with(|| a.timestamp.cmp(&b.timestamp))
    });
    Ok((events, report))
}

fn ingest_events_csv(
    path: &Path,
) -> Result<(Vec<TransactionEvent>, IngestReport), IngestError> {
    let file = open(path)?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.display().to_string(),
            source,
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    let idx = ColumnIndex::new(&headers);
    idx.require(path, &EVENT_COLUMNS)?;

    let mut events = Vec::new();
    let mut report = IngestReport::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push(row_err(row, "<record>", e.to_string()));
                continue;
            }
        };
        match event_from_csv(&idx, &record, row, &mut report) {
            Ok(event) => {
                events.push(event);
                report.rows_kept += 1;
            }
            Err(e) => report.skipped.push(e),
        }
    }
    if report.rows_read == 0 {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    for e in &report.skipped {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok((events, report))
}

fn ingest_events_jsonl(
    path: &Path,
) -> Result<(Vec<TransactionEvent>, IngestReport), IngestError> {
    let file = open(path)?;
    let mut events = Vec::new();
    let mut report = IngestReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        match serde_json::from_str::<TransactionEvent>(&line) {
            Ok(event) => {
                events.push(event);
                report.rows_kept += 1;
            }
            Err(e) => report.skipped.push(row_err(row, "<json>", e.to_string())),
        }
    }
    if report.rows_read == 0 {
        return Err(IngestError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    for e in &report.skipped {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok((events, report))
}

/// Write user records as CSV (including device/wealth columns when any
/// record carries them). Round-trips through [`ingest_users`].
pub fn write_users(path: &Path, users: &[UserRecord]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let with_scores = users
        .iter()
        .any(|u| u.device_score.is_some() || u.wealth_score.is_some());
    let mut header: Vec<&str> = USER_COLUMNS.to_vec();
    if with_scores {
        header.push("device_score");
        header.push("wealth_score");
    }
    w.write_record(&header).map_err(|source| IngestError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    for u in users {
        let mut row = vec![
            u.user_id.clone(),
            format!("{}", u.bureau_score),
            format!("{}", u.generic.age_range),
            u.generic.gender.clone(),
            format!("{}", u.generic.tenure_months),
            u.generic.city.clone(),
            format!("{}", u.generic.n_addresses),
            u.generic.preferred_payment_method.clone(),
            format!("{}", u.generic.n_credit_cards),
            format!("{}", u.generic.n_card_brands),
            u.generic.phone_brand.clone(),
            format!("{}", u.generic.n_phones),
            format!("{}", u.credit_line.0),
            format!("{}", u.label),
            u.snapshot_date.format("%Y-%m-%d").to_string(),
            format!("{}", u.outcome_horizon_months),
        ];
        if with_scores {
            row.push(u.device_score.map(|v| format!("{v}")).unwrap_or_default());
            row.push(u.wealth_score.map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&row).map_err(|source| IngestError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Write transaction events as JSON Lines. Round-trips through
/// [`ingest_events`]; JSONL is used because events carry a variable
/// `extra` map that does not fit a fixed CSV header.
pub fn write_events(path: &Path, events: &[TransactionEvent]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    for e in events {
        let line = serde_json::to_string(e).expect("event serializes");
        writeln!(w, "{line}").map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

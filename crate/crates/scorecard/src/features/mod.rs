//! Feature engineering: compile raw transaction events and user attributes
//! into a dense numeric [`FeatureMatrix`] via declarative [`FeatureSpec`]s.
//!
//! Aggregates with no defined value on an empty event set (averages, maxima,
//! shares) are reported through an explicit missing mask rather than filled
//! with zero: the downstream tree learner routes missing values along a
//! learned default branch, and zero-filling would conflate "no activity"
//! with "cheap activity".

mod catalog;
mod compute;

pub use catalog::default_feature_catalog;
pub use compute::{featurize, validate_specs, Vocabulary};

use crate::datamodel::{PaymentMethod, TxnStatus, Vertical};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Feature family a spec belongs to; mirrors how the source data is grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Generic,
    Delivery,
    Transport,
    Financial,
    Bureau,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Generic => "generic",
            FeatureSource::Delivery => "delivery",
            FeatureSource::Transport => "transport",
            FeatureSource::Financial => "financial",
            FeatureSource::Bureau => "bureau",
        }
    }
}

/// What quantity of each matching event feeds the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Order value in minor currency units.
    Amount,
    Tip,
    Discount,
    /// Constant 1 per matching event; used with count-like aggregates.
    Unit,
    /// Indicator that the event carries a positive tip.
    TipPresent,
    /// Indicator that the event carries a positive discount.
    DiscountPresent,
    /// A numeric field from the event's extra map (skips events lacking it).
    Extra(String),
    /// The store identifier; only valid with distinct/top-share aggregates.
    Store,
    /// A user attribute passed through unchanged (identity aggregate only).
    Generic(GenericField),
    /// The user's bureau score (identity aggregate only).
    Bureau,
}

/// User attributes available to identity pass-through specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenericField {
    AgeRange,
    Gender,
    TenureMonths,
    City,
    NAddresses,
    PreferredPaymentMethod,
    NCreditCards,
    NCardBrands,
    PhoneBrand,
    NPhones,
}

impl GenericField {
    /// Fields that are categorical and need vocabulary encoding.
    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            GenericField::Gender
                | GenericField::City
                | GenericField::PreferredPaymentMethod
                | GenericField::PhoneBrand
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenericField::AgeRange => "age_range",
            GenericField::Gender => "gender",
            GenericField::TenureMonths => "tenure_months",
            GenericField::City => "city",
            GenericField::NAddresses => "n_addresses",
            GenericField::PreferredPaymentMethod => "preferred_payment_method",
            GenericField::NCreditCards => "n_credit_cards",
            GenericField::NCardBrands => "n_card_brands",
            GenericField::PhoneBrand => "phone_brand",
            GenericField::NPhones => "n_phones",
        }
    }
}

/// How matching measures collapse to one number per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Count,
    Sum,
    Avg,
    Max,
    /// Numerator sum divided by the declared denominator.
    Pct,
    /// Number of distinct values of the measure.
    Distinct,
    /// Share of store-bearing orders placed at the user's modal store.
    TopShare,
    /// Pass a user attribute through unchanged.
    Identity,
}

impl Aggregate {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregate::Count => "count",
            Aggregate::Sum => "sum",
            Aggregate::Avg => "avg",
            Aggregate::Max => "max",
            Aggregate::Pct => "pct",
            Aggregate::Distinct => "distinct",
            Aggregate::TopShare => "top_share",
            Aggregate::Identity => "identity",
        }
    }

    /// Aggregates whose value on an empty event set is a well-defined zero.
    pub fn zero_on_empty(self) -> bool {
        matches!(self, Aggregate::Count | Aggregate::Sum | Aggregate::Distinct)
    }
}

/// Denominator for share-type aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Total approved spend across all verticals in-window.
    ApprovedSpend,
    /// Total count of approved events in-window.
    ApprovedCount,
}

/// Event status filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFilter {
    #[default]
    Approved,
    Exact(TxnStatus),
    AnyCancelled,
    Any,
}

impl StatusFilter {
    pub fn matches(self, status: TxnStatus) -> bool {
        match self {
            StatusFilter::Approved => status == TxnStatus::Approved,
            StatusFilter::Exact(s) => status == s,
            StatusFilter::AnyCancelled => status.is_cancelled(),
            StatusFilter::Any => true,
        }
    }
}

/// Six-hour bucket of the order's local hour of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayPart {
    /// 00:00–05:59
    Night,
    /// 06:00–11:59
    Morning,
    /// 12:00–17:59
    Afternoon,
    /// 18:00–23:59
    Evening,
}

impl DayPart {
    pub fn of_hour(hour: u32) -> DayPart {
        match hour {
            0..=5 => DayPart::Night,
            6..=11 => DayPart::Morning,
            12..=17 => DayPart::Afternoon,
            _ => DayPart::Evening,
        }
    }
}

/// Predicate set restricting which events feed a spec.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Filters {
    pub vertical: Option<Vertical>,
    #[serde(default)]
    pub status: StatusFilter,
    pub payment_method: Option<PaymentMethod>,
    pub day_part: Option<DayPart>,
}

/// One engineered feature: which events, what quantity, how collapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub source: FeatureSource,
    pub measure: Measure,
    pub aggregate: Aggregate,
    #[serde(default)]
    pub filters: Filters,
    /// Required when aggregate is `Pct`.
    pub denominator: Option<Denominator>,
    /// Overrides the run-level observation window when set.
    pub window_months: Option<u32>,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature spec `{name}`: {reason}")]
    SpecValidation { name: String, reason: String },
    #[error("matrix has no column named `{name}`")]
    MissingColumn { name: String },
    #[error("duplicate column name `{name}`")]
    DuplicateColumn { name: String },
    #[error("matrix file {path}: {reason}")]
    BadMatrixFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Column metadata kept alongside the values for audit traceability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub source: FeatureSource,
    pub aggregate: Aggregate,
}

/// Model-variant selector: which columns a training run sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    BureauOnly,
    BureauPlusApp,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BureauOnly => "bureau_only",
            Variant::BureauPlusApp => "bureau_plus_app",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const BUREAU_COLUMN: &str = "bureau_score";

/// Dense numeric matrix with named columns and a per-cell missing mask.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnInfo>,
    /// Row-major `n_rows × n_cols`; NaN exactly where `missing` is true.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub row_ids: Vec<String>,
}

/// Bitwise value equality, so two matrices with missing cells (stored as
/// NaN) still compare equal — matching the bit-identical determinism
/// contract rather than IEEE NaN semantics.
impl PartialEq for FeatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
            && self.missing == other.missing
            && self.row_ids == other.row_ids
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.columns.len() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn row_missing(&self, row: usize) -> &[bool] {
        let w = self.columns.len();
        &self.missing[row * w..(row + 1) * w]
    }

    /// Number of missing cells per column, for the audit manifest.
    pub fn missing_counts(&self) -> Vec<usize> {
        let w = self.columns.len();
        let mut counts = vec![0usize; w];
        for (i, &m) in self.missing.iter().enumerate() {
            if m {
                counts[i % w] += 1;
            }
        }
        counts
    }

    /// Select the columns a model variant trains on. `BureauOnly` projects
    /// down to the single bureau column; `BureauPlusApp` is the identity.
    pub fn project_variant(&self, variant: Variant) -> Result<FeatureMatrix, FeatureError> {
        match variant {
            Variant::BureauPlusApp => Ok(self.clone()),
            Variant::BureauOnly => {
                let col = self.column_index(BUREAU_COLUMN).ok_or_else(|| {
                    FeatureError::MissingColumn {
                        name: BUREAU_COLUMN.to_string(),
                    }
                })?;
                self.select_columns(&[col])
            }
        }
    }

    /// Projection onto a subset of column indexes, preserving row order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<FeatureMatrix, FeatureError> {
        let w = self.columns.len();
        for &c in cols {
            if c >= w {
                return Err(FeatureError::MissingColumn {
                    name: format!("#{c}"),
                });
            }
        }
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * cols.len());
        let mut missing = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for &c in cols {
                values.push(self.values[r * w + c]);
                missing.push(self.missing[r * w + c]);
            }
        }
        Ok(FeatureMatrix {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            values,
            missing,
            row_ids: self.row_ids.clone(),
        })
    }

    /// Row subset by index, preserving the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let w = self.columns.len();
        let mut values = Vec::with_capacity(rows.len() * w);
        let mut missing = Vec::with_capacity(rows.len() * w);
        let mut row_ids = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(&self.values[r * w..(r + 1) * w]);
            missing.extend_from_slice(&self.missing[r * w..(r + 1) * w]);
            row_ids.push(self.row_ids[r].clone());
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            missing,
            row_ids,
        }
    }

    /// Write the matrix as CSV (missing cells empty) plus a sidecar JSON
    /// manifest `<path>.manifest.json` recording column provenance and
    /// missing counts.
    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let io_err = |source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        let mut header = String::from("row_id");
        for c in &self.columns {
            header.push(',');
            header.push_str(&c.name);
        }
        writeln!(w, "{header}").map_err(io_err)?;
        let width = self.columns.len();
        let mut line = String::new();
        for r in 0..self.n_rows() {
            line.clear();
            line.push_str(&self.row_ids[r]);
            for c in 0..width {
                line.push(',');
                if !self.missing[r * width + c] {
                    line.push_str(&format!("{}", self.values[r * width + c]));
                }
            }
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;

        let manifest = self.manifest();
        let mpath = manifest_path(path);
        let mfile = File::create(&mpath).map_err(|source| FeatureError::Io {
            path: mpath.display().to_string(),
            source,
        })?;
        serde_json::to_writer_pretty(BufWriter::new(mfile), &manifest).map_err(|e| {
            FeatureError::BadMatrixFile {
                path: mpath.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        Ok(())
    }

    pub fn manifest(&self) -> MatrixManifest {
        let missing = self.missing_counts();
        MatrixManifest {
            n_rows: self.n_rows(),
            columns: self
                .columns
                .iter()
                .zip(missing)
                .map(|(c, m)| ManifestColumn {
                    name: c.name.clone(),
                    source: c.source,
                    aggregate: c.aggregate,
                    missing_count: m,
                })
                .collect(),
        }
    }

    /// Read a matrix written by [`FeatureMatrix::write_csv`]; the sidecar
    /// manifest must be present (it carries column provenance).
    pub fn read_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
        let mpath = manifest_path(path);
        let mfile = File::open(&mpath).map_err(|source| FeatureError::Io {
            path: mpath.display().to_string(),
            source,
        })?;
        let manifest: MatrixManifest =
            serde_json::from_reader(BufReader::new(mfile)).map_err(|e| {
                FeatureError::BadMatrixFile {
                    path: mpath.display().to_string(),
                    reason: e.to_string(),
                }
            })?;

        let io_err = |source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        };
        let bad = |reason: String| FeatureError::BadMatrixFile {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(io_err)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".to_string()))?
            .map_err(io_err)?;
        let names: Vec<&str> = header.split(',').collect();
        if names.first() != Some(&"row_id") {
            return Err(bad("first column must be row_id".to_string()));
        }
        let expected: Vec<&str> = manifest.columns.iter().map(|c| c.name.as_str()).collect();
        if names[1..] != expected[..] {
            return Err(bad("header does not match sidecar manifest".to_string()));
        }

        let width = manifest.columns.len();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        let mut row_ids = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err)?;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width + 1 {
                return Err(bad(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    cells.len(),
                    width + 1
                )));
            }
            row_ids.push(cells[0].to_string());
            for cell in &cells[1..] {
                if cell.is_empty() {
                    values.push(f64::NAN);
                    missing.push(true);
                } else {
                    let v: f64 = cell
                        .parse()
                        .map_err(|e| bad(format!("row {}: bad number `{cell}`: {e}", i + 1)))?;
                    values.push(v);
                    missing.push(false);
                }
            }
        }
        Ok(FeatureMatrix {
            columns: manifest
                .columns
                .into_iter()
                .map(|c| ColumnInfo {
                    name: c.name,
                    source: c.source,
                    aggregate: c.aggregate,
                })
                .collect(),
            values,
            missing,
            row_ids,
        })
    }
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.json");
    std::path::PathBuf::from(s)
}

/// Sidecar audit record for a serialized matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub n_rows: usize,
    pub columns: Vec<ManifestColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestColumn {
    pub name: String,
    pub source: FeatureSource,
    pub aggregate: Aggregate,
    pub missing_count: usize,
}

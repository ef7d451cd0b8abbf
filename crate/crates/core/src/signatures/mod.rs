//! Per-cell digital signatures: traffic volume per 2-hour bin and app
//! category, and their relative-risk normalization.

mod io;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Points;
use crate::grid::{CellId, CityRegion};
use crate::ingest::{ServiceTaxonomy, TrafficRecord};
use crate::scalar::Scalar;

pub use io::{read_tensor, write_tensor, write_tensor_csv, TensorKind, TENSOR_MAGIC, TENSOR_VERSION};

/// Number of 2-hour bins in a day.
pub const BINS: usize = 12;

/// Default output for a positive value whose peers are all zero.
pub const DEFAULT_RISK_CAP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("service `{0}` is not covered by the app taxonomy")]
    UnknownService(String),
    #[error("no traffic records")]
    EmptyInput,
    #[error("no traffic records fall on a {0}")]
    NoRecordsForDayType(DayType),
    #[error("record cell {cell} is not an active cell of region '{region}'")]
    InactiveCell { cell: CellId, region: String },
    #[error("relative risk needs at least 2 locations, got {0}")]
    TooFewLocations(usize),
    #[error("tensors cannot be combined: {0}")]
    Incompatible(String),
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Weekday, DayType::Weekend];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Weekday => "weekday",
            Self::Weekend => "weekend",
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DayType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "weekday" | "week" => Ok(Self::Weekday),
            "weekend" => Ok(Self::Weekend),
            other => Err(format!("unknown day type `{other}` (expected weekday or weekend)")),
        }
    }
}

/// Monday–Thursday are weekdays; Friday belongs to the weekend.
pub fn day_type_of_date(date: NaiveDate) -> DayType {
    match date.weekday() {
        Weekday::Mon | Weekday::Tue | Weekday::Wed | Weekday::Thu => DayType::Weekday,
        Weekday::Fri | Weekday::Sat | Weekday::Sun => DayType::Weekend,
    }
}

pub fn day_type_of(ts: &NaiveDateTime) -> DayType {
    day_type_of_date(ts.date())
}

/// 2-hour bin index: 00:00–01:59 → 0, …, 22:00–23:59 → 11.
pub fn bin_of(ts: &NaiveDateTime) -> usize {
    ts.hour() as usize / 2
}

/// A contiguous block of rows that came from one region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub region: String,
    pub start: usize,
    pub len: usize,
}

/// Dense `cells × 12 × categories` array, row-major, with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTensor<T> {
    day_type: DayType,
    categories: Vec<String>,
    cells: Vec<CellId>,
    segments: Vec<Segment>,
    values: Vec<T>,
}

impl<T: Scalar> CellTensor<T> {
    pub fn from_parts(
        day_type: DayType,
        categories: Vec<String>,
        cells: Vec<CellId>,
        segments: Vec<Segment>,
        values: Vec<T>,
    ) -> Result<Self, SignatureError> {
        if categories.is_empty() {
            return Err(SignatureError::Invalid("no categories".into()));
        }
        let expected = cells.len() * BINS * categories.len();
        if values.len() != expected {
            return Err(SignatureError::Invalid(format!(
                "expected {expected} values for {} cells, got {}",
                cells.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(SignatureError::Invalid("values must be finite and nonnegative".into()));
        }
        let mut next = 0;
        for seg in &segments {
            if seg.start != next {
                return Err(SignatureError::Invalid("segments must tile the rows in order".into()));
            }
            next += seg.len;
        }
        if next != cells.len() {
            return Err(SignatureError::Invalid(format!(
                "segments cover {next} rows, tensor has {}",
                cells.len()
            )));
        }
        Ok(Self {
            day_type,
            categories,
            cells,
            segments,
            values,
        })
    }

    pub fn day_type(&self) -> DayType {
        self.day_type
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Entries per cell (`12 × D`).
    pub fn row_len(&self) -> usize {
        BINS * self.categories.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, cell: usize, bin: usize, category: usize) -> T {
        self.values[cell * self.row_len() + bin * self.categories.len() + category]
    }

    pub fn points(&self) -> Points<'_, T> {
        Points::new(&self.values, self.row_len()).expect("tensor rows have uniform width")
    }

    /// Rows whose every entry is zero.
    pub fn silent_rows(&self) -> Vec<bool> {
        (0..self.n_cells())
            .map(|i| self.row(i).iter().all(|v| v.is_zero()))
            .collect()
    }

    /// Keeps only rows with `keep[i]`, updating segments.
    pub fn retain_rows(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.n_cells(), "mask length must match rows");
        let mut cells = Vec::new();
        let mut values = Vec::new();
        let mut segments = Vec::new();
        for seg in &self.segments {
            let start = cells.len();
            for i in seg.start..seg.start + seg.len {
                if keep[i] {
                    cells.push(self.cells[i]);
                    values.extend_from_slice(self.row(i));
                }
            }
            segments.push(Segment {
                region: seg.region.clone(),
                start,
                len: cells.len() - start,
            });
        }
        Self {
            day_type: self.day_type,
            categories: self.categories.clone(),
            cells,
            segments,
            values,
        }
    }

    fn map_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            day_type: self.day_type,
            categories: self.categories.clone(),
            cells: self.cells.clone(),
            segments: self.segments.clone(),
            values,
        }
    }
}

/// Raw aggregated traffic volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureTensor<T>(CellTensor<T>);

impl<T> Deref for SignatureTensor<T> {
    type Target = CellTensor<T>;

    fn deref(&self) -> &CellTensor<T> {
        &self.0
    }
}

impl<T: Scalar> SignatureTensor<T> {
    pub fn new(inner: CellTensor<T>) -> Self {
        Self(inner)
    }

    pub fn into_inner(self) -> CellTensor<T> {
        self.0
    }

    pub fn retain_rows(&self, keep: &[bool]) -> Self {
        Self(self.0.retain_rows(keep))
    }

    pub fn drop_silent_cells(&self) -> Self {
        let keep: Vec<bool> = self.silent_rows().into_iter().map(|s| !s).collect();
        self.retain_rows(&keep)
    }

    /// Stacks per-city tensors row-wise for global-level analysis.
    pub fn concat(parts: &[SignatureTensor<T>]) -> Result<Self, SignatureError> {
        let first = parts
            .first()
            .ok_or_else(|| SignatureError::Incompatible("nothing to concatenate".into()))?;
        let mut cells = Vec::new();
        let mut values = Vec::new();
        let mut segments = Vec::new();
        for part in parts {
            if part.day_type != first.day_type {
                return Err(SignatureError::Incompatible("mixed day types".into()));
            }
            if part.categories != first.categories {
                return Err(SignatureError::Incompatible("category orders differ".into()));
            }
            let offset = cells.len();
            segments.extend(part.segments.iter().map(|s| Segment {
                region: s.region.clone(),
                start: s.start + offset,
                len: s.len,
            }));
            cells.extend_from_slice(&part.cells);
            values.extend_from_slice(&part.values);
        }
        Ok(Self(CellTensor::from_parts(
            first.day_type,
            first.categories.clone(),
            cells,
            segments,
            values,
        )?))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Divide totals by the number of distinct matching days in the input.
    pub mean_per_day: bool,
}

/// Aggregates traffic into a `cells × 12 × D` tensor for one day type.
///
/// Uplink and downlink are summed. Every active cell of the region gets a
/// row, in region order, whether or not it has traffic.
pub fn build_signatures<T: Scalar>(
    records: &[TrafficRecord],
    taxonomy: &ServiceTaxonomy,
    region: &CityRegion,
    day_type: DayType,
    options: BuildOptions,
) -> Result<SignatureTensor<T>, SignatureError> {
    if records.is_empty() {
        return Err(SignatureError::EmptyInput);
    }
    let cells = region.cells();
    let row_of: HashMap<CellId, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let d = taxonomy.n_categories();
    let row_len = BINS * d;

    let mut contributions: Vec<(usize, f64)> = Vec::with_capacity(records.len());
    let mut days = BTreeSet::new();
    for rec in records {
        let category = taxonomy
            .category_index(&rec.service)
            .ok_or_else(|| SignatureError::UnknownService(rec.service.clone()))?;
        let row = *row_of.get(&rec.cell).ok_or_else(|| SignatureError::InactiveCell {
            cell: rec.cell,
            region: region.name().to_string(),
        })?;
        if day_type_of(&rec.timestamp) != day_type {
            continue;
        }
        days.insert(rec.timestamp.date());
        contributions.push((row * row_len + bin_of(&rec.timestamp) * d + category, rec.volume));
    }

    if days.is_empty() {
        return Err(SignatureError::NoRecordsForDayType(day_type));
    }

    // Summing in sorted order makes the result independent of record order.
    contributions.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut totals = vec![0.0f64; cells.len() * row_len];
    for (idx, v) in contributions {
        totals[idx] += v;
    }
    if options.mean_per_day {
        let n_days = days.len() as f64;
        totals.iter_mut().for_each(|v| *v /= n_days);
    }

    let values = totals.into_iter().map(T::lit).collect();
    let segments = vec![Segment {
        region: region.name().to_string(),
        start: 0,
        len: cells.len(),
    }];
    Ok(SignatureTensor(CellTensor::from_parts(
        day_type,
        taxonomy.categories().to_vec(),
        cells,
        segments,
        values,
    )?))
}

/// A (bin, category) column in which some cell had positive volume while all
/// other cells had none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CappedColumn {
    pub bin: usize,
    pub category: String,
    pub capped_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskQuality {
    pub cap: f64,
    pub capped_columns: Vec<CappedColumn>,
}

impl RiskQuality {
    pub fn capped_entries(&self) -> usize {
        self.capped_columns.iter().map(|c| c.capped_cells).sum()
    }
}

/// Relative-risk ratios: each value over the mean of the other locations in
/// its (bin, category) column.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTensor<T> {
    data: CellTensor<T>,
    quality: RiskQuality,
}

impl<T> Deref for NormalizedTensor<T> {
    type Target = CellTensor<T>;

    fn deref(&self) -> &CellTensor<T> {
        &self.data
    }
}

impl<T: Scalar> NormalizedTensor<T> {
    pub fn from_parts(data: CellTensor<T>, quality: RiskQuality) -> Self {
        Self { data, quality }
    }

    pub fn quality(&self) -> &RiskQuality {
        &self.quality
    }

    pub fn into_inner(self) -> CellTensor<T> {
        self.data
    }
}

/// Relative risk of one column; returns the ratios and how many were capped.
///
/// `out[i] = x[i] / (Σ_{k≠i} x[k] / (n − 1))`. A zero denominator gives 1.0
/// when `x[i]` is also zero and `cap` otherwise.
pub fn relative_risk_column<T: Scalar>(column: &[T], cap: T) -> (Vec<T>, usize) {
    let n = column.len();
    let others_count = T::from_count(n - 1);
    // prefix[i] = Σ_{k<i}, suffix[i] = Σ_{k>=i}; the sum of the others is then
    // formed without subtracting from the total, which would cancel badly when
    // one value dominates.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    for &x in column {
        let last = *prefix.last().unwrap();
        prefix.push(last + x);
    }
    let mut suffix = vec![T::zero(); n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + column[i];
    }
    let mut capped = 0;
    let out = (0..n)
        .map(|i| {
            let others = prefix[i] + suffix[i + 1];
            let x = column[i];
            if others.is_zero() {
                if x.is_zero() {
                    T::one()
                } else {
                    capped += 1;
                    cap
                }
            } else {
                x / (others / others_count)
            }
        })
        .collect();
    (out, capped)
}

pub fn relative_risk<T: Scalar>(tensor: &SignatureTensor<T>, cap: T) -> Result<NormalizedTensor<T>, SignatureError> {
    let n = tensor.n_cells();
    if n < 2 {
        return Err(SignatureError::TooFewLocations(n));
    }
    let width = tensor.row_len();
    let d = tensor.n_categories();
    let columns: Vec<(Vec<T>, usize)> = (0..width)
        .into_par_iter()
        .map(|j| {
            let column: Vec<T> = (0..n).map(|i| tensor.values[i * width + j]).collect();
            relative_risk_column(&column, cap)
        })
        .collect();

    let mut values = vec![T::zero(); n * width];
    let mut capped_columns = Vec::new();
    for (j, (column, capped)) in columns.into_iter().enumerate() {
        for (i, v) in column.into_iter().enumerate() {
            values[i * width + j] = v;
        }
        if capped > 0 {
            capped_columns.push(CappedColumn {
                bin: j / d,
                category: tensor.categories[j % d].clone(),
                capped_cells: capped,
            });
        }
    }
    Ok(NormalizedTensor {
        data: tensor.map_values(values),
        quality: RiskQuality {
            cap: cap.as_f64(),
            capped_columns,
        },
    })
}

/// `(x − min) / (max − min)`; a constant series maps to zeros.
pub fn minmax_scale<T: Scalar>(series: &[T]) -> Vec<T> {
    let Some(&first) = series.first() else {
        return Vec::new();
    };
    let (lo, hi) = series
        .iter()
        .fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if range.is_zero() {
        return vec![T::zero(); series.len()];
    }
    series.iter().map(|&x| (x - lo) / range).collect()
}

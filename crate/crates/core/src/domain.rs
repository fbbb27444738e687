//! Domain types shared by every pipeline stage: requests, projects, the
//! 24-month analysis window, and the complaint-type catalog and whitelist.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Months, NaiveDate};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Months before the construction start covered by the analysis window.
pub const PRE_MONTHS: usize = 12;
/// Total months in an analysis window.
pub const WINDOW_MONTHS: usize = 24;

const DEFAULT_WHITELIST: &str = include_str!("../data/whitelist.csv");

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("duplicate complaint type in catalog: {0}")]
    DuplicateType(String),
    #[error("unknown QoL indicator: {0}")]
    UnknownIndicator(String),
    #[error("complaint type {complaint_type:?} mapped to both {first} and {second}")]
    WhitelistConflict {
        complaint_type: String,
        first: QoLIndicator,
        second: QoLIndicator,
    },
    #[error("whitelist is missing column {0}")]
    MissingColumn(&'static str),
    #[error("whitelist csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Five-digit zip code kept as an opaque identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ZipCode(String);

impl ZipCode {
    /// Accepts exactly five ASCII digits, optionally followed by a ZIP+4
    /// suffix (`10002-1234`), which is dropped.
    pub fn parse(raw: &str) -> Option<ZipCode> {
        let raw = raw.trim();
        let head = match raw.split_once('-') {
            Some((head, tail)) if tail.len() == 4 && tail.bytes().all(|b| b.is_ascii_digit()) => head,
            Some(_) => return None,
            None => raw,
        };
        if head.len() == 5 && head.bytes().all(|b| b.is_ascii_digit()) {
            Some(ZipCode(head.to_string()))
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ZipCode {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ZipCode::parse(&value).ok_or_else(|| format!("invalid zip code {value:?}"))
    }
}

impl From<ZipCode> for String {
    fn from(zip: ZipCode) -> String {
        zip.0
    }
}

impl fmt::Display for ZipCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One 311 complaint record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub unique_key: String,
    pub created_date: NaiveDate,
    pub agency: String,
    pub complaint_type: String,
    pub descriptor: String,
    pub incident_zip: ZipCode,
    pub borough: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionProject {
    pub id: u32,
    pub start_date: NaiveDate,
    pub duration_months: u32,
    pub zip: ZipCode,
}

/// 24 contiguous calendar-month intervals around a project start: months
/// 1..=12 are the baseline year, month 13 begins on the start date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    start: NaiveDate,
    /// `boundaries[t - 1]..boundaries[t]` is month `t`.
    boundaries: Vec<NaiveDate>,
}

impl AnalysisWindow {
    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn anchor(&self) -> NaiveDate {
        self.boundaries[0]
    }

    /// Exclusive end of the window (start date plus twelve months).
    pub fn end(&self) -> NaiveDate {
        self.boundaries[WINDOW_MONTHS]
    }

    /// Half-open interval `[from, to)` of month `t` (1-based).
    pub fn month(&self, t: usize) -> Option<(NaiveDate, NaiveDate)> {
        if (1..=WINDOW_MONTHS).contains(&t) {
            Some((self.boundaries[t - 1], self.boundaries[t]))
        } else {
            None
        }
    }

    pub fn months(&self) -> impl Iterator<Item = (usize, NaiveDate, NaiveDate)> + '_ {
        self.boundaries.windows(2).enumerate().map(|(i, w)| (i + 1, w[0], w[1]))
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.anchor() && date < self.end()
    }
}

/// Offsets the start date by `delta` calendar months, clamping the day to
/// the last day of the target month.
fn shift_months(date: NaiveDate, delta: i32) -> NaiveDate {
    let months = Months::new(delta.unsigned_abs());
    let shifted = if delta >= 0 {
        date.checked_add_months(months)
    } else {
        date.checked_sub_months(months)
    };
    shifted.expect("calendar month offset stays within chrono's date range")
}

pub fn expand_window(project: &ConstructionProject) -> AnalysisWindow {
    let start = project.start_date;
    let boundaries = (0..=WINDOW_MONTHS as i32)
        .map(|k| shift_months(start, k - PRE_MONTHS as i32))
        .collect();
    AnalysisWindow { start, boundaries }
}

/// 1-based month of `date` inside the window, if any.
pub fn month_index(date: NaiveDate, window: &AnalysisWindow) -> Option<usize> {
    if !window.contains(date) {
        return None;
    }
    // number of boundaries <= date
    Some(window.boundaries.partition_point(|b| *b <= date))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QoLIndicator {
    Environment,
    Waste,
    Safety,
    Transportation,
    Other,
}

impl QoLIndicator {
    pub fn as_str(self) -> &'static str {
        match self {
            QoLIndicator::Environment => "Environment",
            QoLIndicator::Waste => "Waste",
            QoLIndicator::Safety => "Safety",
            QoLIndicator::Transportation => "Transportation",
            QoLIndicator::Other => "Other",
        }
    }
}

impl fmt::Display for QoLIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QoLIndicator {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "environment" => Ok(QoLIndicator::Environment),
            "waste" => Ok(QoLIndicator::Waste),
            "safety" => Ok(QoLIndicator::Safety),
            "transportation" => Ok(QoLIndicator::Transportation),
            "other" => Ok(QoLIndicator::Other),
            _ => Err(DomainError::UnknownIndicator(s.to_string())),
        }
    }
}

/// Case- and whitespace-insensitive key used for complaint-type matching.
pub fn normalize_type(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Complaint type to QoL indicator mapping. Lookups ignore case and
/// repeated whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Whitelist {
    entries: IndexMap<String, (String, QoLIndicator)>,
}

impl Whitelist {
    /// Reads `complaint_type,qol_indicator` CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Whitelist, DomainError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers()?.clone();
        let col = |name: &'static str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or(DomainError::MissingColumn(name))
        };
        let type_col = col("complaint_type")?;
        let indicator_col = col("qol_indicator")?;

        let mut entries: IndexMap<String, (String, QoLIndicator)> = IndexMap::new();
        for record in csv.records() {
            let record = record?;
            let name = record.get(type_col).unwrap_or("").to_string();
            let indicator: QoLIndicator = record.get(indicator_col).unwrap_or("").parse()?;
            let key = normalize_type(&name);
            if let Some((_, existing)) = entries.get(&key) {
                if *existing != indicator {
                    return Err(DomainError::WhitelistConflict {
                        complaint_type: name,
                        first: *existing,
                        second: indicator,
                    });
                }
                continue;
            }
            entries.insert(key, (name, indicator));
        }
        Ok(Whitelist { entries })
    }

    pub fn lookup(&self, complaint_type: &str) -> Option<QoLIndicator> {
        self.entries
            .get(&normalize_type(complaint_type))
            .map(|(_, indicator)| *indicator)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, QoLIndicator)> {
        self.entries.values().map(|(n, q)| (n.as_str(), *q))
    }
}

impl Default for Whitelist {
    /// The fifteen road-reconstruction complaint types and their indicators.
    fn default() -> Self {
        Whitelist::from_csv(DEFAULT_WHITELIST.as_bytes()).expect("bundled whitelist is valid")
    }
}

/// Ordered, duplicate-free list of complaint types; index `i` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ComplaintCatalog {
    types: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl ComplaintCatalog {
    pub fn new(types: Vec<String>) -> Result<ComplaintCatalog, DomainError> {
        let mut lookup = HashMap::with_capacity(types.len());
        for (pos, name) in types.iter().enumerate() {
            if lookup.insert(name.clone(), pos + 1).is_some() {
                return Err(DomainError::DuplicateType(name.clone()));
            }
        }
        Ok(ComplaintCatalog { types, lookup })
    }

    /// Catalog of every distinct complaint type in `requests`, sorted.
    pub fn from_requests<'a>(requests: impl IntoIterator<Item = &'a ServiceRequest>) -> ComplaintCatalog {
        let mut types: Vec<String> = requests
            .into_iter()
            .map(|r| r.complaint_type.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        types.dedup();
        ComplaintCatalog::new(types).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    /// Name of type `i` (1-based).
    pub fn name(&self, i: usize) -> Option<&str> {
        i.checked_sub(1).and_then(|pos| self.types.get(pos)).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.types.iter().enumerate().map(|(p, n)| (p + 1, n.as_str()))
    }
}

impl TryFrom<Vec<String>> for ComplaintCatalog {
    type Error = DomainError;

    fn try_from(types: Vec<String>) -> Result<Self, Self::Error> {
        ComplaintCatalog::new(types)
    }
}

impl From<ComplaintCatalog> for Vec<String> {
    fn from(catalog: ComplaintCatalog) -> Self {
        catalog.types
    }
}

//! CSV ingestion for 311 exports and project tables, window/zip filtering,
//! and a paged HTTP fetcher for open-data endpoints.

use std::io::{Read, Write};
use std::thread;
use std::time::Duration;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{expand_window, month_index, AnalysisWindow, ConstructionProject, ServiceRequest, ZipCode};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("malformed row at record {record}: {reason}")]
    MalformedRow { record: u64, reason: String },
    #[error("malformed date {0:?}")]
    MalformedDate(String),
    #[error("malformed duration {0:?}")]
    MalformedDuration(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("network error: {0}")]
    Network(String),
    #[error("response is not csv: {0}")]
    NonCsvResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

/// Row accounting for one ingest run.
/// `rows_read == rows_kept + rows_skipped_malformed + rows_out_of_scope`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rows_skipped_malformed: u64,
    pub rows_out_of_scope: u64,
}

impl IngestReport {
    pub fn is_balanced(&self) -> bool {
        self.rows_read == self.rows_kept + self.rows_skipped_malformed + self.rows_out_of_scope
    }
}

/// Date rendering for written CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateStyle {
    /// `M/D/YY`, as in the 311 export snippet.
    Short,
    /// Zero-padded `MM/DD/YY`, as in the project table.
    Padded,
    Iso,
}

pub fn format_date(date: NaiveDate, style: DateStyle) -> String {
    let yy = date.year().rem_euclid(100);
    match style {
        DateStyle::Short => format!("{}/{}/{:02}", date.month(), date.day(), yy),
        DateStyle::Padded => format!("{:02}/{:02}/{:02}", date.month(), date.day(), yy),
        DateStyle::Iso => date.format("%Y-%m-%d").to_string(),
    }
}

/// Parses `M/D/YY`, `M/D/YYYY` or ISO `YYYY-MM-DD`. A trailing time component
/// separated by whitespace or `T` is ignored. Two-digit years pivot at 70.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    let day_part = raw.split(|c: char| c.is_whitespace() || c == 'T').next().unwrap_or("");
    if day_part.contains('/') {
        let mut parts = day_part.split('/');
        let month: u32 = parts.next()?.parse().ok()?;
        let day: u32 = parts.next()?.parse().ok()?;
        let year_raw = parts.next()?;
        if parts.next().is_some() {
            return None;
        }
        let year: i32 = year_raw.parse().ok()?;
        let year = match year_raw.len() {
            2 if year >= 70 => 1900 + year,
            2 => 2000 + year,
            4 => year,
            _ => return None,
        };
        NaiveDate::from_ymd_opt(year, month, day)
    } else {
        NaiveDate::parse_from_str(day_part, "%Y-%m-%d").ok()
    }
}

fn header_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn find_column(headers: &csv::StringRecord, aliases: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| aliases.iter().any(|a| header_key(h) == header_key(a)))
}

fn require_column(headers: &csv::StringRecord, name: &str, aliases: &[&str]) -> Result<usize, IngestError> {
    find_column(headers, aliases).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

struct RequestColumns {
    key: usize,
    created: usize,
    complaint: usize,
    zip: usize,
    agency: Option<usize>,
    descriptor: Option<usize>,
    borough: Option<usize>,
}

enum RowOutcome {
    Kept(ServiceRequest),
    Malformed(String),
    UnknownZip,
}

fn read_request(record: &csv::StringRecord, cols: &RequestColumns) -> RowOutcome {
    let field = |i: usize| record.get(i).map(str::trim);
    let optional = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("").trim().to_string();

    let Some(key) = field(cols.key).filter(|s| !s.is_empty()) else {
        return RowOutcome::Malformed("empty unique key".into());
    };
    let Some(created_raw) = field(cols.created) else {
        return RowOutcome::Malformed("missing created date".into());
    };
    let Some(created_date) = parse_date(created_raw) else {
        return RowOutcome::Malformed(format!("bad created date {created_raw:?}"));
    };
    let Some(complaint) = field(cols.complaint).filter(|s| !s.is_empty()) else {
        return RowOutcome::Malformed("empty complaint type".into());
    };
    let Some(zip) = field(cols.zip).and_then(ZipCode::parse) else {
        return RowOutcome::UnknownZip;
    };
    RowOutcome::Kept(ServiceRequest {
        unique_key: key.to_string(),
        created_date,
        agency: optional(cols.agency),
        complaint_type: complaint.to_string(),
        descriptor: optional(cols.descriptor),
        incident_zip: zip,
        borough: optional(cols.borough),
    })
}

/// Streams a 311 export. Only the identifying columns plus complaint type,
/// created date, incident zip (and agency/descriptor/borough if present) are
/// materialized. Rows without a usable zip are counted out of scope.
pub fn parse_requests<R: Read>(reader: R, mode: ParseMode) -> Result<(Vec<ServiceRequest>, IngestReport), IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let cols = RequestColumns {
        key: require_column(&headers, "Unique Key", &["unique key"])?,
        created: require_column(&headers, "Created Date", &["created date"])?,
        complaint: require_column(&headers, "Complaint Type", &["complaint type"])?,
        zip: require_column(&headers, "Incident Zip", &["incident zip"])?,
        agency: find_column(&headers, &["agency"]),
        descriptor: find_column(&headers, &["descriptor"]),
        borough: find_column(&headers, &["borough"]),
    };

    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let outcome = match csv.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => read_request(&record, &cols),
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => RowOutcome::Malformed(e.to_string()),
        };
        report.rows_read += 1;
        match outcome {
            RowOutcome::Kept(req) => {
                report.rows_kept += 1;
                out.push(req);
            }
            RowOutcome::UnknownZip => report.rows_out_of_scope += 1,
            RowOutcome::Malformed(reason) => {
                if mode == ParseMode::Strict {
                    return Err(IngestError::MalformedRow {
                        record: report.rows_read,
                        reason,
                    });
                }
                report.rows_skipped_malformed += 1;
            }
        }
    }
    Ok((out, report))
}

/// Parses a duration such as `4 years`, `2 years 6 months` or `18 months`.
pub fn parse_duration(raw: &str) -> Result<u32, IngestError> {
    let bad = || IngestError::MalformedDuration(raw.to_string());
    let tokens: Vec<String> = raw.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    let number = |s: &str| s.parse::<u32>().map_err(|_| bad());
    let months = match tokens.as_slice() {
        [y, unit] if matches!(unit.as_str(), "year" | "years") => number(y)?.checked_mul(12).ok_or_else(bad)?,
        [m, unit] if matches!(unit.as_str(), "month" | "months") => number(m)?,
        [y, yu, m, mu] if matches!(yu.as_str(), "year" | "years") && matches!(mu.as_str(), "month" | "months") => {
            number(y)?
                .checked_mul(12)
                .and_then(|v| v.checked_add(number(m).ok()?))
                .ok_or_else(bad)?
        }
        _ => return Err(bad()),
    };
    if months == 0 {
        return Err(bad());
    }
    Ok(months)
}

pub fn format_duration(months: u32) -> String {
    let (years, rest) = (months / 12, months % 12);
    let plural = |n: u32, unit: &str| {
        if n == 1 {
            format!("{n} {unit}")
        } else {
            format!("{n} {unit}s")
        }
    };
    match (years, rest) {
        (0, m) => plural(m, "month"),
        (y, 0) => plural(y, "year"),
        (y, m) => format!("{} {}", plural(y, "year"), plural(m, "month")),
    }
}

/// Reads the project table: `id,start,duration,zip` (a `#` header is accepted
/// for the id column).
pub fn parse_projects<R: Read>(reader: R) -> Result<Vec<ConstructionProject>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h.trim() == "#")
        .or_else(|| find_column(&headers, &["id", "project id"]))
        .ok_or_else(|| IngestError::MissingColumn("id".into()))?;
    let start_col = require_column(&headers, "start", &["start", "start date"])?;
    let duration_col = require_column(&headers, "duration", &["duration"])?;
    let zip_col = require_column(&headers, "zip", &["zip", "zip code"])?;

    let mut projects = Vec::new();
    for (n, record) in csv.records().enumerate() {
        let record = record?;
        let row = n as u64 + 1;
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let id: u32 = get(id_col)
            .parse()
            .ok()
            .filter(|id| *id > 0)
            .ok_or_else(|| IngestError::MalformedRow {
                record: row,
                reason: format!("project id {:?} is not a positive integer", get(id_col)),
            })?;
        let start_date =
            parse_date(get(start_col)).ok_or_else(|| IngestError::MalformedDate(get(start_col).to_string()))?;
        let duration_months = parse_duration(get(duration_col))?;
        let zip = ZipCode::parse(get(zip_col)).ok_or_else(|| IngestError::MalformedRow {
            record: row,
            reason: format!("zip {:?} is not five digits", get(zip_col)),
        })?;
        projects.push(ConstructionProject {
            id,
            start_date,
            duration_months,
            zip,
        });
    }
    Ok(projects)
}

/// Requests in the project's zip whose date falls inside its window.
pub fn filter_requests<'a, I>(
    requests: I,
    project: &ConstructionProject,
    window: &AnalysisWindow,
) -> Vec<&'a ServiceRequest>
where
    I: IntoIterator<Item = &'a ServiceRequest>,
{
    requests
        .into_iter()
        .filter(|r| r.incident_zip == project.zip && month_index(r.created_date, window).is_some())
        .collect()
}

/// Drops requests that fall in no project's zip and window, moving them from
/// `rows_kept` to `rows_out_of_scope`.
pub fn retain_in_scope(
    requests: Vec<ServiceRequest>,
    projects: &[ConstructionProject],
    report: &mut IngestReport,
) -> Vec<ServiceRequest> {
    let windows: Vec<_> = projects.iter().map(|p| (p, expand_window(p))).collect();
    let before = requests.len() as u64;
    let kept: Vec<ServiceRequest> = requests
        .into_iter()
        .filter(|r| {
            windows
                .iter()
                .any(|(p, w)| r.incident_zip == p.zip && w.contains(r.created_date))
        })
        .collect();
    let dropped = before - kept.len() as u64;
    report.rows_kept -= dropped;
    report.rows_out_of_scope += dropped;
    kept
}

pub const REQUEST_HEADER: [&str; 7] = [
    "Unique Key",
    "Created Date",
    "Agency",
    "Complaint Type",
    "Descriptor",
    "Incident Zip",
    "Borough",
];

pub fn write_requests<'a, W, I>(writer: W, requests: I, style: DateStyle) -> Result<(), IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a ServiceRequest>,
{
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(REQUEST_HEADER)?;
    for r in requests {
        csv.write_record([
            r.unique_key.as_str(),
            &format_date(r.created_date, style),
            &r.agency,
            &r.complaint_type,
            &r.descriptor,
            r.incident_zip.as_str(),
            &r.borough,
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_projects<W: Write>(writer: W, projects: &[ConstructionProject]) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["id", "start", "duration", "zip"])?;
    for p in projects {
        csv.write_record([
            p.id.to_string(),
            format_date(p.start_date, DateStyle::Padded),
            format_duration(p.duration_months),
            p.zip.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Paged CSV download settings. The default parameter names follow the
/// Socrata convention used by most municipal portals.
#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub endpoint: String,
    pub filters: Vec<(String, String)>,
    pub page_size: usize,
    pub limit_param: String,
    pub offset_param: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl FetchConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        FetchConfig {
            endpoint: endpoint.into(),
            filters: Vec::new(),
            page_size: 1000,
            limit_param: "$limit".into(),
            offset_param: "$offset".into(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

/// Concatenated pages with a single header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedCsv {
    pub data: Vec<u8>,
    pub rows: usize,
    pub pages: usize,
}

fn is_csv_content_type(content_type: &str) -> bool {
    let ct = content_type.to_ascii_lowercase();
    ct.contains("csv") || ct.starts_with("text/plain") || ct.starts_with("application/octet-stream")
}

fn get_page(agent: &ureq::Agent, config: &FetchConfig, offset: usize) -> Result<String, IngestError> {
    let mut last_error = String::new();
    for attempt in 0..config.max_attempts.max(1) {
        if attempt > 0 {
            thread::sleep(config.initial_backoff * 2u32.pow(attempt - 1));
        }
        let mut request = agent.get(&config.endpoint);
        for (k, v) in &config.filters {
            request = request.query(k, v);
        }
        request = request
            .query(&config.limit_param, &config.page_size.to_string())
            .query(&config.offset_param, &offset.to_string());
        match request.call() {
            Ok(response) => {
                let content_type = response.content_type().to_string();
                if !is_csv_content_type(&content_type) {
                    return Err(IngestError::NonCsvResponse(content_type));
                }
                return response.into_string().map_err(|e| IngestError::Network(e.to_string()));
            }
            Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
                last_error = format!("HTTP {code}");
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(IngestError::Network(format!("HTTP {code} from {}", config.endpoint)));
            }
            Err(ureq::Error::Transport(t)) => last_error = t.to_string(),
        }
    }
    Err(IngestError::Network(format!(
        "{} failed after {} attempts: {last_error}",
        config.endpoint, config.max_attempts
    )))
}

/// Downloads every page of a CSV endpoint with offset/limit paging, retrying
/// transient failures (5xx, 429, transport) with exponential backoff.
pub fn fetch_remote(config: &FetchConfig) -> Result<FetchedCsv, IngestError> {
    if config.page_size == 0 {
        return Err(IngestError::Network("page size must be positive".into()));
    }
    let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Option<csv::StringRecord> = None;
    let mut rows = 0;
    let mut pages = 0;
    let mut offset = 0;
    loop {
        let body = get_page(&agent, config, offset)?;
        pages += 1;
        if body.trim().is_empty() {
            break;
        }
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let page_header = reader
            .headers()
            .map_err(|e| IngestError::NonCsvResponse(e.to_string()))?
            .clone();
        match &header {
            None => {
                writer.write_record(&page_header)?;
                header = Some(page_header);
            }
            Some(h) if *h != page_header => {
                return Err(IngestError::NonCsvResponse("header changed between pages".into()));
            }
            Some(_) => {}
        }
        let mut page_rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| IngestError::NonCsvResponse(e.to_string()))?;
            writer.write_record(&record)?;
            page_rows += 1;
        }
        rows += page_rows;
        if page_rows < config.page_size {
            break;
        }
        offset += config.page_size;
    }
    let data = writer.into_inner().map_err(|e| IngestError::Io(e.into_error()))?;
    Ok(FetchedCsv { data, rows, pages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    const HEADER: &str = "Unique Key,Created Date,Agency,Complaint Type,Descriptor,Incident Zip,Borough\n";

    #[test]
    fn parses_export_snippet_row() {
        let csv = format!("{HEADER}36154062, 5/11/17, DOB, General construction, Construction, 10002, Manhattan\n");
        let (rows, report) = parse_requests(csv.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.unique_key, "36154062");
        assert_eq!(r.complaint_type, "General construction");
        assert_eq!(r.incident_zip.as_str(), "10002");
        assert_eq!(r.created_date, ymd(2017, 5, 11));
        assert_eq!(r.agency, "DOB");
        assert_eq!(r.borough, "Manhattan");
        assert_eq!(report.rows_read, 1);
        assert!(report.is_balanced());
    }

    #[test]
    fn empty_file_with_header() {
        let (rows, report) = parse_requests(HEADER.as_bytes(), ParseMode::Strict).unwrap();
        assert!(rows.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn lenient_skips_bad_date_strict_aborts() {
        let csv = format!(
            "{HEADER}1,5/11/17,DOB,Noise,x,10002,Manhattan\n2,13/45/17,DOB,Noise,x,10002,Manhattan\n3,2017-05-12,DOT,Noise,x,10002,Manhattan\n"
        );
        let (rows, report) = parse_requests(csv.as_bytes(), ParseMode::Lenient).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(report.rows_kept, 2);
        assert_eq!(report.rows_skipped_malformed, 1);
        assert!(report.is_balanced());
        let err = parse_requests(csv.as_bytes(), ParseMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { record: 2, .. }));
    }

    #[test]
    fn unknown_zip_counted_out_of_scope() {
        let csv = format!("{HEADER}1,5/11/17,DOB,Noise,x,,Manhattan\n2,5/11/17,DOB,Noise,x,N/A,Manhattan\n");
        let (rows, report) = parse_requests(csv.as_bytes(), ParseMode::Strict).unwrap();
        assert!(rows.is_empty());
        assert_eq!(report.rows_out_of_scope, 2);
        assert!(report.is_balanced());
    }

    #[test]
    fn missing_required_column() {
        let csv = "Unique Key,Created Date,Complaint Type\n1,5/11/17,Noise\n";
        match parse_requests(csv.as_bytes(), ParseMode::Lenient) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "Incident Zip"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn api_style_headers_accepted() {
        let csv = "unique_key,created_date,complaint_type,incident_zip\n7,2017-05-11T00:00:00.000,Noise,10002\n";
        let (rows, _) = parse_requests(csv.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(rows[0].created_date, ymd(2017, 5, 11));
        assert_eq!(rows[0].agency, "");
    }

    #[test]
    fn date_formats_and_pivot() {
        assert_eq!(parse_date("08/05/13"), Some(ymd(2013, 8, 5)));
        assert_eq!(parse_date("5/11/17"), Some(ymd(2017, 5, 11)));
        assert_eq!(parse_date("1/1/70"), Some(ymd(1970, 1, 1)));
        assert_eq!(parse_date("1/1/69"), Some(ymd(2069, 1, 1)));
        assert_eq!(parse_date("05/11/2017 03:14:00 PM"), Some(ymd(2017, 5, 11)));
        assert_eq!(parse_date("2016-02-29"), Some(ymd(2016, 2, 29)));
        assert_eq!(parse_date("13/45/17"), None);
        assert_eq!(parse_date("2015-02-29"), None);
        assert_eq!(parse_date("5/11/217"), None);
        assert_eq!(parse_date(""), None);
    }

    #[test]
    fn duration_grammar() {
        assert_eq!(parse_duration("4 years").unwrap(), 48);
        assert_eq!(parse_duration("2 years 6 months").unwrap(), 30);
        assert_eq!(parse_duration("1 year 1 months").unwrap(), 13);
        assert_eq!(parse_duration("1 year").unwrap(), 12);
        assert_eq!(parse_duration("18 Months").unwrap(), 18);
        for bad in ["", "years", "2 decades", "0 months", "1 year 2", "-1 years"] {
            assert!(
                matches!(parse_duration(bad), Err(IngestError::MalformedDuration(_))),
                "{bad}"
            );
        }
        for m in 1..100 {
            assert_eq!(parse_duration(&format_duration(m)).unwrap(), m);
        }
    }

    #[test]
    fn project_table_rows() {
        let csv = "id,start,duration,zip\n1, 08/05/13, 4 years, 10004\n15, 01/31/17, 2 years 6 months, 10002\n";
        let projects = parse_projects(csv.as_bytes()).unwrap();
        assert_eq!(projects[0].duration_months, 48);
        assert_eq!(projects[0].start_date, ymd(2013, 8, 5));
        assert_eq!(projects[1].id, 15);
        assert_eq!(projects[1].duration_months, 30);
        assert_eq!(projects[1].zip.as_str(), "10002");

        let bad_id = "id,start,duration,zip\nx, 01/01/20, 1 year, 10001\n";
        assert!(matches!(
            parse_projects(bad_id.as_bytes()),
            Err(IngestError::MalformedRow { .. })
        ));
        let bad_date = "id,start,duration,zip\n1, 02/30/20, 1 year, 10001\n";
        assert!(matches!(
            parse_projects(bad_date.as_bytes()),
            Err(IngestError::MalformedDate(_))
        ));
        let bad_dur = "id,start,duration,zip\n1, 01/01/20, soon, 10001\n";
        assert!(matches!(
            parse_projects(bad_dur.as_bytes()),
            Err(IngestError::MalformedDuration(_))
        ));
        let hash = "#,Start,Duration,Zip\n2,09/23/13,1 year 9 months,10034\n";
        let p = parse_projects(hash.as_bytes()).unwrap();
        assert_eq!((p[0].id, p[0].duration_months), (2, 21));
    }

    fn request(key: &str, date: NaiveDate, zip: &str) -> ServiceRequest {
        ServiceRequest {
            unique_key: key.into(),
            created_date: date,
            agency: "DOT".into(),
            complaint_type: "Street condition".into(),
            descriptor: String::new(),
            incident_zip: ZipCode::parse(zip).unwrap(),
            borough: "Manhattan".into(),
        }
    }

    #[test]
    fn filter_by_zip_and_window() {
        let project = ConstructionProject {
            id: 15,
            start_date: ymd(2017, 1, 31),
            duration_months: 30,
            zip: ZipCode::parse("10002").unwrap(),
        };
        let window = expand_window(&project);
        let requests = vec![
            request("a", ymd(2017, 5, 10), "10075"),
            request("b", window.anchor(), "10002"),
            request("c", ymd(2015, 12, 31), "10002"),
            request("d", ymd(2017, 5, 11), "10002"),
            request("e", window.end(), "10002"),
        ];
        let kept = filter_requests(&requests, &project, &window);
        let keys: Vec<_> = kept.iter().map(|r| r.unique_key.as_str()).collect();
        assert_eq!(keys, ["b", "d"]);
        let again = filter_requests(kept.iter().copied(), &project, &window);
        assert_eq!(again, kept);

        let mut report = IngestReport {
            rows_read: 5,
            rows_kept: 5,
            ..Default::default()
        };
        let scoped = retain_in_scope(requests, &[project], &mut report);
        assert_eq!(scoped.len(), 2);
        assert_eq!(report.rows_out_of_scope, 3);
        assert!(report.is_balanced());
    }
}

//! Reading pre-extracted event streams.
//!
//! Two layouts are accepted, picked by file extension:
//! - `.csv` / `.tsv`: a header row naming `patient_id`, `timestamp`,
//!   `category`, `event_type` and optionally `value`, in any order;
//! - `.jsonl` / `.ndjson`: one JSON object per line with the same keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Medication,
    Procedure,
    Lab,
    Physiological,
}

impl Category {
    /// Categories whose measurements may carry a numeric value.
    pub fn may_be_continuous(self) -> bool {
        matches!(self, Category::Lab | Category::Physiological)
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "medication" | "med" => Ok(Category::Medication),
            "procedure" | "proc" => Ok(Category::Procedure),
            "lab" => Ok(Category::Lab),
            "physiological" | "physio" => Ok(Category::Physiological),
            other => Err(Error::Validation(format!("unknown category {other:?}"))),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Medication => "medication",
            Category::Procedure => "procedure",
            Category::Lab => "lab",
            Category::Physiological => "physiological",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: String,
    pub timestamp: DateTime<Utc>,
    pub category: Category,
    pub event_type: String,
    pub value: Option<f64>,
}

/// Parsed events plus every line that could not be parsed.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub events: Vec<RawEvent>,
    pub rejected: Vec<LineError>,
}

impl IngestReport {
    /// Fails if any line was rejected.
    pub fn into_strict(self, path: &Path) -> Result<Vec<RawEvent>> {
        if self.rejected.is_empty() {
            Ok(self.events)
        } else {
            Err(Error::Ingestion {
                path: path.to_path_buf(),
                lines: self.rejected,
            })
        }
    }
}

/// ISO-8601 timestamps with or without offset; naive times are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight is valid").and_utc());
    }
    Err(Error::Validation(format!("unparseable timestamp {s:?}")))
}

fn parse_value(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Validation(format!("unparseable value {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Validation(format!("non-finite value {s:?}")));
    }
    Ok(Some(v))
}

fn build_event(patient: &str, ts: &str, cat: &str, kind: &str, value: Option<&str>) -> Result<RawEvent> {
    let patient_id = patient.trim();
    let event_type = kind.trim();
    if patient_id.is_empty() {
        return Err(Error::Validation("empty patient_id".into()));
    }
    if event_type.is_empty() {
        return Err(Error::Validation("empty event_type".into()));
    }
    Ok(RawEvent {
        patient_id: patient_id.to_string(),
        timestamp: parse_timestamp(ts)?,
        category: cat.parse()?,
        event_type: event_type.to_string(),
        value: value.map(parse_value).transpose()?.flatten(),
    })
}

enum Layout {
    Delimited(u8),
    JsonLines,
}

fn layout_for(path: &Path) -> Result<Layout> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => Ok(Layout::Delimited(b',')),
        Some("tsv") => Ok(Layout::Delimited(b'\t')),
        Some("jsonl") | Some("ndjson") => Ok(Layout::JsonLines),
        other => Err(Error::Config(format!(
            "cannot infer event file format from extension {other:?} of {}",
            path.display()
        ))),
    }
}

/// Reads an event file, sorting events by `(patient_id, timestamp)` and
/// collecting malformed lines instead of failing on them.
pub fn ingest(path: &Path) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = match layout_for(path)? {
        Layout::Delimited(d) => ingest_delimited(&text, d)?,
        Layout::JsonLines => ingest_json_lines(&text),
    };
    report
        .events
        .sort_by(|a, b| (a.patient_id.as_str(), a.timestamp).cmp(&(b.patient_id.as_str(), b.timestamp)));
    Ok(report)
}

fn ingest_delimited(text: &str, delimiter: u8) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    if text.trim().is_empty() {
        return Ok(report);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("event file header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(pid), Some(ts), Some(cat), Some(kind)) = (col("patient_id"), col("timestamp"), col("category"), col("event_type"))
    else {
        return Err(Error::Format(format!(
            "event file header must name patient_id, timestamp, category, event_type; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    let val = col("value");
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                report.rejected.push(LineError {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Validation(format!("missing column {i}")));
        let parsed = (|| {
            build_event(
                field(pid)?,
                field(ts)?,
                field(cat)?,
                field(kind)?,
                val.and_then(|i| rec.get(i)),
            )
        })();
        match parsed {
            Ok(ev) => report.events.push(ev),
            Err(e) => report.rejected.push(LineError {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
struct JsonEvent {
    patient_id: serde_json::Value,
    timestamp: String,
    category: String,
    event_type: String,
    #[serde(default)]
    value: Option<f64>,
}

fn ingest_json_lines(text: &str) -> IngestReport {
    let mut report = IngestReport::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<JsonEvent>(raw)
            .map_err(Error::from)
            .and_then(|j| {
                let pid = match &j.patient_id {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    other => return Err(Error::Validation(format!("bad patient_id {other}"))),
                };
                let value = j.value.map(|v| v.to_string());
                build_event(&pid, &j.timestamp, &j.category, &j.event_type, value.as_deref())
            });
        match parsed {
            Ok(ev) => report.events.push(ev),
            Err(e) => report.rejected.push(LineError {
                line,
                reason: e.to_string(),
            }),
        }
    }
    report
}

/// Groups sorted events by patient.
pub fn group_by_patient(events: &[RawEvent]) -> Vec<&[RawEvent]> {
    events
        .chunk_by(|a, b| a.patient_id == b.patient_id)
        .collect()
}

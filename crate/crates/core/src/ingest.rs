//! Reading and writing backlog and release files in JSON or CSV.
//!
//! JSON backlog records are objects with `id`, `title`, `description`,
//! `kind` and optional `severity`, `story_points`, `sign`. Release records
//! carry `version`, `items`, `env` and `rt_runs_ms`. The CSV variants use a
//! mandatory header row; in the release CSV the `items` and `rt_runs_ms`
//! cells hold `;`-separated lists and the environment is flattened into
//! `os_bits`, `clock_ghz`, `ram_gb`, `disk_gb` columns.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    sort_releases, BacklogItem, Dataset, EnvironmentSpec, Kind, OsBits, ReleaseRecord, Severity,
    Sign, StoryPoints, Version,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// `.csv` means CSV; everything else is read as JSON.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_backlog(path: &Path, format: Format) -> Result<Vec<BacklogItem>> {
    let text = read(path)?;
    match format {
        Format::Json => parse_backlog_json(&text),
        Format::Csv => parse_backlog_csv(&text),
    }
}

/// Reads a release file, detecting the format from the extension.
pub fn parse_measurements(path: &Path) -> Result<Vec<ReleaseRecord>> {
    parse_measurements_as(path, Format::from_path(path))
}

pub fn parse_measurements_as(path: &Path, format: Format) -> Result<Vec<ReleaseRecord>> {
    let text = read(path)?;
    match format {
        Format::Json => parse_releases_json(&text),
        Format::Csv => parse_releases_csv(&text),
    }
}

pub fn load_dataset(backlog: &Path, releases: &Path) -> Result<Dataset> {
    let items = parse_backlog(backlog, Format::from_path(backlog))?;
    let releases = parse_measurements(releases)?;
    Dataset::new(items, releases)
}

fn malformed(location: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Malformed {
        location: location.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Lifts a value-level error into one that names where it happened.
fn at(location: &str, field: &str, err: Error) -> Error {
    match err {
        Error::InvalidStoryPoints(_) | Error::Malformed { .. } => err,
        other => malformed(location, field, other.to_string()),
    }
}

fn top_level_array(text: &str) -> Result<Vec<Value>> {
    match serde_json::from_str::<Value>(text)? {
        Value::Array(records) => Ok(records),
        _ => Err(malformed("document", "<root>", "expected a JSON array")),
    }
}

fn as_object<'a>(value: &'a Value, location: &str) -> Result<&'a Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| malformed(location, "<record>", "expected an object"))
}

fn req_str<'a>(obj: &'a Map<String, Value>, field: &str, location: &str) -> Result<&'a str> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(malformed(location, field, "expected a string")),
        None => Err(malformed(location, field, "missing")),
    }
}

fn opt_str<'a>(
    obj: &'a Map<String, Value>,
    field: &str,
    location: &str,
) -> Result<Option<&'a str>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(malformed(location, field, "expected a string")),
    }
}

fn opt_int(obj: &Map<String, Value>, field: &str, location: &str) -> Result<Option<i64>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_i64() {
            Some(i) => Ok(Some(i)),
            None => match v.as_f64() {
                Some(f) if f.fract() == 0.0 => Ok(Some(f as i64)),
                _ => Err(malformed(location, field, "expected an integer")),
            },
        },
    }
}

fn req_f64(obj: &Map<String, Value>, field: &str, location: &str) -> Result<f64> {
    obj.get(field)
        .ok_or_else(|| malformed(location, field, "missing"))?
        .as_f64()
        .ok_or_else(|| malformed(location, field, "expected a number"))
}

struct RawItem<'a> {
    id: &'a str,
    title: &'a str,
    description: &'a str,
    kind: &'a str,
    severity: Option<&'a str>,
    story_points: Option<i64>,
    sign: Option<i64>,
}

fn build_item(raw: RawItem<'_>, location: &str) -> Result<BacklogItem> {
    if raw.id.trim().is_empty() {
        return Err(malformed(location, "id", "empty"));
    }
    let kind = Kind::parse(raw.kind).map_err(|e| at(location, "kind", e))?;
    let severity = raw
        .severity
        .filter(|s| !s.trim().is_empty())
        .map(Severity::parse)
        .transpose()
        .map_err(|e| at(location, "severity", e))?;
    let story_points = raw
        .story_points
        .map(StoryPoints::new)
        .transpose()
        .map_err(|e| at(location, "story_points", e))?;
    let sign = raw
        .sign
        .map(Sign::try_from)
        .transpose()
        .map_err(|e| at(location, "sign", e))?
        .unwrap_or_default();
    Ok(BacklogItem {
        id: raw.id.to_string(),
        title: raw.title.to_string(),
        description: raw.description.to_string(),
        kind,
        severity,
        story_points,
        sign,
    })
}

fn check_unique(items: &[BacklogItem]) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

pub fn parse_backlog_json(text: &str) -> Result<Vec<BacklogItem>> {
    let records = top_level_array(text)?;
    let mut items = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let location = format!("record {}", i + 1);
        let obj = as_object(record, &location)?;
        let raw = RawItem {
            id: req_str(obj, "id", &location)?,
            title: opt_str(obj, "title", &location)?.unwrap_or(""),
            description: opt_str(obj, "description", &location)?.unwrap_or(""),
            kind: req_str(obj, "kind", &location)?,
            severity: opt_str(obj, "severity", &location)?,
            story_points: opt_int(obj, "story_points", &location)?,
            sign: opt_int(obj, "sign", &location)?,
        };
        items.push(build_item(raw, &location)?);
    }
    check_unique(&items)?;
    Ok(items)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Fields)
        .from_reader(text.as_bytes())
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column(headers, name).ok_or_else(|| malformed("header", name, "missing column"))
}

fn cell(record: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| record.get(i)).filter(|s| !s.is_empty())
}

fn parse_int_cell(value: Option<&str>, field: &str, location: &str) -> Result<Option<i64>> {
    value
        .map(|v| {
            v.parse::<i64>()
                .map_err(|_| malformed(location, field, format!("`{v}` is not an integer")))
        })
        .transpose()
}

fn parse_f64_cell(value: &str, field: &str, location: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| malformed(location, field, format!("`{value}` is not a number")))
}

pub fn parse_backlog_csv(text: &str) -> Result<Vec<BacklogItem>> {
    let mut reader = csv_reader(text);
    let headers = reader.headers()?.clone();
    let id = require_column(&headers, "id")?;
    let kind = require_column(&headers, "kind")?;
    let title = column(&headers, "title");
    let description = column(&headers, "description");
    let severity = column(&headers, "severity");
    let story_points = column(&headers, "story_points");
    let sign = column(&headers, "sign");

    let mut items = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let location = format!("line {}", i + 2);
        let raw = RawItem {
            id: record.get(id).unwrap_or(""),
            title: cell(&record, title).unwrap_or(""),
            description: cell(&record, description).unwrap_or(""),
            kind: record.get(kind).unwrap_or(""),
            severity: cell(&record, severity),
            story_points: parse_int_cell(cell(&record, story_points), "story_points", &location)?,
            sign: parse_int_cell(cell(&record, sign), "sign", &location)?,
        };
        items.push(build_item(raw, &location)?);
    }
    check_unique(&items)?;
    Ok(items)
}

fn parse_env(value: Option<&Value>, location: &str) -> Result<EnvironmentSpec> {
    let obj = value
        .and_then(Value::as_object)
        .ok_or_else(|| malformed(location, "env", "missing or not an object"))?;
    let bits = opt_int(obj, "os_bits", location)?
        .ok_or_else(|| malformed(location, "env.os_bits", "missing"))?;
    let os_bits = u32::try_from(bits)
        .map_err(|_| malformed(location, "env.os_bits", "out of range"))
        .and_then(|b| OsBits::try_from(b).map_err(|e| at(location, "env.os_bits", e)))?;
    let env = EnvironmentSpec {
        os_bits,
        clock_ghz: req_f64(obj, "clock_ghz", location)?,
        ram_gb: req_f64(obj, "ram_gb", location)?,
        disk_gb: req_f64(obj, "disk_gb", location)?,
    };
    env.validate().map_err(|e| at(location, "env", e))?;
    Ok(env)
}

fn finish_releases(mut releases: Vec<ReleaseRecord>) -> Result<Vec<ReleaseRecord>> {
    sort_releases(&mut releases)?;
    Ok(releases)
}

pub fn parse_releases_json(text: &str) -> Result<Vec<ReleaseRecord>> {
    let records = top_level_array(text)?;
    let mut releases = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let location = format!("record {}", i + 1);
        let obj = as_object(record, &location)?;
        let version = req_str(obj, "version", &location)?.to_string();
        let items = match obj.get("items") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(ids)) => ids
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| malformed(&location, "items", "expected string ids"))
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(malformed(&location, "items", "expected an array")),
        };
        let env = parse_env(obj.get("env"), &location)?;
        let rt_runs_ms = match obj.get("rt_runs_ms") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(runs)) => runs
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| malformed(&location, "rt_runs_ms", "expected numbers"))
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(malformed(&location, "rt_runs_ms", "expected an array")),
        };
        if let Some(bad) = rt_runs_ms.iter().find(|rt| !(rt.is_finite() && **rt > 0.0)) {
            return Err(malformed(
                &location,
                "rt_runs_ms",
                format!("run {bad} must be positive"),
            ));
        }
        releases.push(ReleaseRecord {
            version: Version(version),
            items,
            env,
            rt_runs_ms,
        });
    }
    finish_releases(releases)
}

fn split_list(value: Option<&str>) -> impl Iterator<Item = &str> {
    value
        .unwrap_or("")
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

pub fn parse_releases_csv(text: &str) -> Result<Vec<ReleaseRecord>> {
    let mut reader = csv_reader(text);
    let headers = reader.headers()?.clone();
    let version = require_column(&headers, "version")?;
    let os_bits = require_column(&headers, "os_bits")?;
    let clock = require_column(&headers, "clock_ghz")?;
    let ram = require_column(&headers, "ram_gb")?;
    let disk = require_column(&headers, "disk_gb")?;
    let items = column(&headers, "items");
    let runs = column(&headers, "rt_runs_ms");

    let mut releases = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let location = format!("line {}", i + 2);
        let get = |idx: usize| record.get(idx).unwrap_or("");
        let bits = get(os_bits)
            .parse::<u32>()
            .map_err(|_| malformed(&location, "os_bits", "expected 32 or 64"))?;
        let env = EnvironmentSpec {
            os_bits: OsBits::try_from(bits).map_err(|e| at(&location, "os_bits", e))?,
            clock_ghz: parse_f64_cell(get(clock), "clock_ghz", &location)?,
            ram_gb: parse_f64_cell(get(ram), "ram_gb", &location)?,
            disk_gb: parse_f64_cell(get(disk), "disk_gb", &location)?,
        };
        env.validate().map_err(|e| at(&location, "env", e))?;
        let rt_runs_ms = split_list(cell(&record, runs))
            .map(|v| parse_f64_cell(v, "rt_runs_ms", &location))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = rt_runs_ms.iter().find(|rt| !(rt.is_finite() && **rt > 0.0)) {
            return Err(malformed(
                &location,
                "rt_runs_ms",
                format!("run {bad} must be positive"),
            ));
        }
        releases.push(ReleaseRecord {
            version: Version::new(get(version)),
            items: split_list(cell(&record, items))
                .map(str::to_string)
                .collect(),
            env,
            rt_runs_ms,
        });
    }
    finish_releases(releases)
}

/// Paired response times of the same workload on 32-bit and 64-bit
/// systems: a CSV with `rt32` and `rt64` columns.
pub fn parse_os_pairs_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv_reader(text);
    let headers = reader.headers()?.clone();
    let rt32 = require_column(&headers, "rt32")?;
    let rt64 = require_column(&headers, "rt64")?;
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let location = format!("line {}", i + 2);
        let get = |idx: usize| record.get(idx).unwrap_or("");
        pairs.push((
            parse_f64_cell(get(rt32), "rt32", &location)?,
            parse_f64_cell(get(rt64), "rt64", &location)?,
        ));
    }
    Ok(pairs)
}

pub fn parse_os_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    parse_os_pairs_csv(&read(path)?)
}

pub fn backlog_to_json(items: &[BacklogItem]) -> Result<String> {
    Ok(serde_json::to_string_pretty(items)?)
}

pub fn releases_to_json(releases: &[ReleaseRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(releases)?)
}

pub fn backlog_to_csv(items: &[BacklogItem]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(Vec::new());
    w.write_record([
        "id",
        "title",
        "description",
        "kind",
        "severity",
        "story_points",
        "sign",
    ])?;
    for item in items {
        w.write_record([
            item.id.clone(),
            item.title.clone(),
            item.description.clone(),
            item.kind.to_string(),
            item.severity.map(|s| s.to_string()).unwrap_or_default(),
            item.story_points.map(|s| s.to_string()).unwrap_or_default(),
            i64::from(item.sign).to_string(),
        ])?;
    }
    csv_into_string(w)
}

pub fn releases_to_csv(releases: &[ReleaseRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "version",
        "items",
        "os_bits",
        "clock_ghz",
        "ram_gb",
        "disk_gb",
        "rt_runs_ms",
    ])?;
    for r in releases {
        let runs: Vec<String> = r.rt_runs_ms.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.version.to_string(),
            r.items.join(";"),
            u32::from(r.env.os_bits).to_string(),
            r.env.clock_ghz.to_string(),
            r.env.ram_gb.to_string(),
            r.env.disk_gb.to_string(),
            runs.join(";"),
        ])?;
    }
    csv_into_string(w)
}

fn csv_into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8 for utf-8 input"))
}

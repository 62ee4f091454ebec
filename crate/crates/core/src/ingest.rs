//! Click-log parsing, preprocessing and accidental-click filtering.
//!
//! CSV columns are fixed: `ad_id,app_id,platform,timestamp,dwell_seconds,cpc,converted`.
//! Empty `cpc`/`converted` cells mean absent. JSONL uses the same field names.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::threshold::ThresholdLookup;

pub const CSV_HEADER: [&str; 7] = [
    "ad_id",
    "app_id",
    "platform",
    "timestamp",
    "dwell_seconds",
    "cpc",
    "converted",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Android,
    Ios,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Android => "android",
            Platform::Ios => "ios",
            Platform::Other => "other",
        }
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "android" => Ok(Platform::Android),
            "ios" => Ok(Platform::Ios),
            "other" => Ok(Platform::Other),
            _ => Err(format!("unknown platform {s:?}")),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ad click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub ad_id: String,
    pub app_id: String,
    pub platform: Platform,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub dwell_seconds: f64,
    pub cpc: Option<f64>,
    pub converted: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format {s:?} (expected csv or jsonl)")),
        }
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based line number in the source, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<ClickRecord>,
    pub rejected: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub outlier_cap_seconds: f64,
    /// Groups below this many clicks are flagged `low_sample`.
    pub min_clicks_threshold: usize,
    pub min_clicks_discount: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            outlier_cap_seconds: 600.0,
            min_clicks_threshold: 100,
            min_clicks_discount: 40,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outlier_cap_seconds.is_finite() && self.outlier_cap_seconds > 0.0) {
            return Err(Error::Contract("outlier_cap_seconds must be positive and finite".into()));
        }
        if self.min_clicks_threshold == 0 || self.min_clicks_discount == 0 {
            return Err(Error::Contract("minimum click floors must be positive".into()));
        }
        Ok(())
    }
}

/// Log-dwell observations of one (ad, app) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdSample {
    pub ad_id: String,
    pub app_id: String,
    pub log_dwell: Vec<f64>,
    pub low_sample: bool,
}

impl AdSample {
    pub fn n(&self) -> usize {
        self.log_dwell.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub total: usize,
    pub outliers_dropped: usize,
    pub nonpositive_dropped: usize,
    pub groups: usize,
    pub low_sample_groups: usize,
}

pub type GroupKey = (String, String);

pub fn parse_click_log<R: Read>(source: R, format: Format) -> Result<ParsedLog> {
    match format {
        Format::Csv => parse_csv(source),
        Format::Jsonl => parse_jsonl(std::io::BufReader::new(source)),
    }
}

fn parse_csv<R: Read>(source: R) -> Result<ParsedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();
    let mut out = ParsedLog::default();

    let header = match rows.next() {
        None => return Ok(out),
        Some(h) => h.map_err(csv_error)?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let missing: Vec<&str> = CSV_HEADER
        .iter()
        .copied()
        .filter(|c| !names.contains(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing columns: {}", missing.join(", "))));
    }
    if names != CSV_HEADER {
        return Err(Error::Schema(format!(
            "columns must appear in order {}; got {}",
            CSV_HEADER.join(","),
            names.join(",")
        )));
    }

    for (idx, row) in rows.enumerate() {
        let line = idx + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(e) => {
                out.rejected.push(Diagnostic { line, reason: e.to_string() });
                continue;
            }
        };
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.iter().collect();
        match record_from_fields(&fields) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(Diagnostic { line, reason }),
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}

fn record_from_fields(f: &[&str]) -> std::result::Result<ClickRecord, String> {
    if f.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, found {}", CSV_HEADER.len(), f.len()));
    }
    let timestamp = f[3]
        .trim()
        .parse::<i64>()
        .map_err(|_| format!("bad timestamp {:?}", f[3]))?;
    let dwell = f[4]
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("bad dwell {:?}", f[4]))?;
    let cpc = match f[5].trim() {
        "" => None,
        s => Some(s.parse::<f64>().map_err(|_| format!("bad cpc {s:?}"))?),
    };
    let converted = match f[6].trim() {
        "" => None,
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        s => return Err(format!("bad converted flag {s:?}")),
    };
    let platform = f[2].trim().parse::<Platform>()?;
    checked_record(f[0].trim(), f[1].trim(), platform, timestamp, dwell, cpc, converted)
}

fn checked_record(
    ad_id: &str,
    app_id: &str,
    platform: Platform,
    timestamp: i64,
    dwell_seconds: f64,
    cpc: Option<f64>,
    converted: Option<bool>,
) -> std::result::Result<ClickRecord, String> {
    if ad_id.is_empty() {
        return Err("empty ad_id".into());
    }
    if app_id.is_empty() {
        return Err("empty app_id".into());
    }
    if !dwell_seconds.is_finite() {
        return Err("non-finite dwell".into());
    }
    if dwell_seconds < 0.0 {
        return Err("negative dwell".into());
    }
    if let Some(c) = cpc {
        if !c.is_finite() || c < 0.0 {
            return Err("negative or non-finite cpc".into());
        }
    }
    Ok(ClickRecord {
        ad_id: ad_id.to_owned(),
        app_id: app_id.to_owned(),
        platform,
        timestamp,
        dwell_seconds,
        cpc,
        converted,
    })
}

#[derive(Deserialize)]
struct RawJsonRecord {
    ad_id: String,
    app_id: String,
    platform: String,
    timestamp: i64,
    dwell_seconds: f64,
    #[serde(default)]
    cpc: Option<f64>,
    #[serde(default)]
    converted: Option<bool>,
}

fn parse_jsonl<R: BufRead>(source: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawJsonRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                let platform = raw.platform.parse::<Platform>()?;
                checked_record(
                    &raw.ad_id,
                    &raw.app_id,
                    platform,
                    raw.timestamp,
                    raw.dwell_seconds,
                    raw.cpc,
                    raw.converted,
                )
            });
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(Diagnostic { line: line_no, reason }),
        }
    }
    Ok(out)
}

/// Writes records in `format`. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_click_log<W: Write>(records: &[ClickRecord], format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Csv => {
            writeln!(out, "{}", CSV_HEADER.join(","))?;
            for r in records {
                let cpc = r.cpc.map(|c| c.to_string()).unwrap_or_default();
                let conv = match r.converted {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    csv_field(&r.ad_id),
                    csv_field(&r.app_id),
                    r.platform,
                    r.timestamp,
                    r.dwell_seconds,
                    cpc,
                    conv
                )?;
            }
        }
        Format::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

/// Drops outliers and non-positive dwell values, log-transforms the rest and
/// groups by (ad_id, app_id). Groups under `cfg.min_clicks_threshold` are kept
/// but flagged.
pub fn preprocess(
    records: &[ClickRecord],
    cfg: &IngestConfig,
) -> (BTreeMap<GroupKey, AdSample>, PreprocessStats) {
    let mut stats = PreprocessStats { total: records.len(), ..Default::default() };
    let mut groups: BTreeMap<GroupKey, AdSample> = BTreeMap::new();
    for r in records {
        if r.dwell_seconds > cfg.outlier_cap_seconds {
            stats.outliers_dropped += 1;
            continue;
        }
        if r.dwell_seconds <= 0.0 {
            stats.nonpositive_dropped += 1;
            continue;
        }
        let x = r.dwell_seconds.ln();
        debug_assert!(x.is_finite());
        groups
            .entry((r.ad_id.clone(), r.app_id.clone()))
            .or_insert_with(|| AdSample {
                ad_id: r.ad_id.clone(),
                app_id: r.app_id.clone(),
                log_dwell: Vec::new(),
                low_sample: false,
            })
            .log_dwell
            .push(x);
    }
    for sample in groups.values_mut() {
        sample.low_sample = sample.n() < cfg.min_clicks_threshold;
        if sample.low_sample {
            stats.low_sample_groups += 1;
        }
    }
    stats.groups = groups.len();
    (groups, stats)
}

/// `dwell <= threshold` is accidental.
pub fn is_accidental(dwell_seconds: f64, threshold_seconds: f64) -> bool {
    dwell_seconds <= threshold_seconds
}

/// Splits `records` into (kept, removed). Relative order is preserved in both.
pub fn filter_accidental(
    records: &[ClickRecord],
    thresholds: &ThresholdLookup,
) -> (Vec<ClickRecord>, Vec<ClickRecord>) {
    records
        .iter()
        .cloned()
        .partition(|r| !is_accidental(r.dwell_seconds, thresholds.seconds_for(&r.app_id)))
}

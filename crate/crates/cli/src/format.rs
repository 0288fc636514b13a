//! Line-oriented check-in logs: the 8-column tab-separated layout of the
//! public Foursquare NYC/TKY releases, with configurable column positions.

use std::fmt::Write as _;
use std::io::BufRead;

use chrono::{DateTime, TimeZone, Utc};
use poirec_core::ingest::RawCheckInRecord;
use serde::{Deserialize, Serialize};

/// Timestamp layout of the public release, e.g. `Tue Apr 03 18:00:09 +0000 2012`.
pub const DEFAULT_TIME_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

/// Column positions (0-based) of the eight fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatDescriptor {
    pub delimiter: char,
    /// Exact field count of a well-formed line.
    pub n_columns: usize,
    pub user: usize,
    pub poi: usize,
    pub category_id: usize,
    pub category_name: usize,
    pub lat: usize,
    pub lon: usize,
    pub tz_offset: usize,
    pub time: usize,
    pub time_format: String,
}

impl Default for FormatDescriptor {
    fn default() -> Self {
        Self {
            delimiter: '\t',
            n_columns: 8,
            user: 0,
            poi: 1,
            category_id: 2,
            category_name: 3,
            lat: 4,
            lon: 5,
            tz_offset: 6,
            time: 7,
            time_format: DEFAULT_TIME_FORMAT.to_string(),
        }
    }
}

impl FormatDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        let cols = [
            self.user,
            self.poi,
            self.category_id,
            self.category_name,
            self.lat,
            self.lon,
            self.tz_offset,
            self.time,
        ];
        if let Some(c) = cols.iter().find(|&&c| c >= self.n_columns) {
            return Err(format!("column {c} out of range for {} columns", self.n_columns));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<RawCheckInRecord>,
    pub malformed: Vec<MalformedLine>,
    /// Nonblank lines seen.
    pub lines: usize,
}

impl ParsedLog {
    pub fn malformed_ratio(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.malformed.len() as f64 / self.lines as f64
        }
    }
}

/// Decodes every nonblank line; bad lines are collected, not fatal. Bytes
/// that are not valid UTF-8 are replaced rather than rejected.
pub fn parse_checkins<R: BufRead>(mut source: R, format: &FormatDescriptor) -> std::io::Result<ParsedLog> {
    let mut log = ParsedLog::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if source.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let text = String::from_utf8_lossy(&buf);
        let text = text.trim_end_matches(['\n', '\r']);
        let text = if line_no == 1 { text.trim_start_matches('\u{feff}') } else { text };
        if text.trim().is_empty() {
            continue;
        }
        log.lines += 1;
        match parse_line(text, format) {
            Ok(r) => log.records.push(r),
            Err(reason) => log.malformed.push(MalformedLine { line: line_no, reason }),
        }
    }
    Ok(log)
}

pub fn parse_line(line: &str, format: &FormatDescriptor) -> Result<RawCheckInRecord, String> {
    let fields: Vec<&str> = line.split(format.delimiter).collect();
    if fields.len() != format.n_columns {
        return Err(format!("expected {} columns, found {}", format.n_columns, fields.len()));
    }
    let nonempty = |i: usize, what: &str| {
        let v = fields[i].trim();
        if v.is_empty() {
            Err(format!("empty {what}"))
        } else {
            Ok(v.to_string())
        }
    };
    let coord = |i: usize, what: &str, bound: f64| -> Result<f64, String> {
        let v: f64 = fields[i].trim().parse().map_err(|_| format!("bad {what} {:?}", fields[i]))?;
        if !v.is_finite() || v.abs() > bound {
            return Err(format!("{what} {v} out of range"));
        }
        Ok(v)
    };
    let tz_offset_min = fields[format.tz_offset]
        .trim()
        .parse::<i32>()
        .map_err(|_| format!("bad timezone offset {:?}", fields[format.tz_offset]))?;
    let raw_time = fields[format.time].trim();
    let timestamp = DateTime::parse_from_str(raw_time, &format.time_format)
        .map_err(|e| format!("bad timestamp {raw_time:?}: {e}"))?
        .timestamp();
    Ok(RawCheckInRecord {
        user_id: nonempty(format.user, "user id")?,
        poi_id: nonempty(format.poi, "venue id")?,
        category_id: nonempty(format.category_id, "category id")?,
        category_name: fields[format.category_name].trim().to_string(),
        lat: coord(format.lat, "latitude", 90.0)?,
        lon: coord(format.lon, "longitude", 180.0)?,
        tz_offset_min,
        timestamp,
    })
}

/// Renders records in the default layout, one line each.
pub fn format_checkins(records: &[RawCheckInRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let time = Utc
            .timestamp_opt(r.timestamp, 0)
            .single()
            .map(|t| t.format("%a %b %d %H:%M:%S +0000 %Y").to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.user_id, r.poi_id, r.category_id, r.category_name, r.lat, r.lon, r.tz_offset_min, time
        );
    }
    out
}

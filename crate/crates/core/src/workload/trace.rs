//! Ingestion of Azure-style function traces and derivation of arrival
//! sequences from per-minute invocation counts.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::time::SimTime;
use crate::workload::{WorkloadMeta, WorkloadSpec};

const KEY_COLUMNS: [&str; 3] = ["HashOwner", "HashApp", "HashFunction"];
const MINUTE: u64 = 60_000_000;
/// Memory recorded on trace-derived entries until a distribution is applied.
pub const TRACE_MEMORY_MB: u32 = 128;

/// Average duration of one function, keyed by its owner/app/function hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationRow {
    pub key: String,
    pub average_ms: f64,
}

/// Per-minute invocation counts of one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationRow {
    pub key: String,
    pub counts: Vec<i64>,
}

/// One duration class with its summed per-minute invocation counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub duration: SimTime,
    pub label: Option<String>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceTable {
    /// Sorted by duration, one row per distinct duration (or bucket).
    pub rows: Vec<TraceRow>,
}

impl TraceTable {
    pub fn minutes(&self) -> usize {
        self.rows.iter().map(|r| r.counts.len()).max().unwrap_or(0)
    }

    pub fn total_invocations(&self) -> u64 {
        self.rows.iter().flat_map(|r| &r.counts).sum()
    }
}

/// Calibrated duration points; trace durations snap to the nearest one.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    buckets: Vec<(String, SimTime)>,
}

impl BucketTable {
    pub fn new(mut buckets: Vec<(String, SimTime)>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::InvalidParams("bucket table is empty".into()));
        }
        buckets.sort_by_key(|b| b.1);
        Ok(BucketTable { buckets })
    }

    /// Parses CSV rows `bucket_label,duration_ms` under a header line.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| csv_error(source_name, &e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["bucket_label", "duration_ms"] {
            return Err(Error::parse(source_name, 1, "expected header `bucket_label,duration_ms`"));
        }
        let mut buckets = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(source_name, &e))?;
            let line = line_of(&rec);
            let ms: f64 = rec[1]
                .parse()
                .map_err(|_| Error::parse(source_name, line, format!("duration_ms `{}` is not a number", &rec[1])))?;
            if !(ms > 0.0 && ms.is_finite()) {
                return Err(Error::parse(source_name, line, "duration_ms must be positive"));
            }
            buckets.push((rec[0].to_string(), SimTime::from_millis_f64(ms)));
        }
        Self::new(buckets)
    }

    /// The bucket closest to `duration`; ties go to the shorter bucket.
    pub fn nearest(&self, duration: SimTime) -> &(String, SimTime) {
        let i = self.buckets.partition_point(|b| b.1 < duration);
        match (i.checked_sub(1).map(|j| &self.buckets[j]), self.buckets.get(i)) {
            (Some(lo), Some(hi)) => {
                if duration - lo.1 <= hi.1 - duration {
                    lo
                } else {
                    hi
                }
            }
            (Some(lo), None) => lo,
            (None, Some(hi)) => hi,
            (None, None) => unreachable!("bucket table is never empty"),
        }
    }
}

fn csv_error(source_name: &str, e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(source_name, line, e.to_string())
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn key_indices(headers: &csv::StringRecord, source_name: &str) -> Result<[usize; 3]> {
    let mut idx = [0; 3];
    for (slot, name) in idx.iter_mut().zip(KEY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(source_name, 1, format!("missing column `{name}`")))?;
    }
    Ok(idx)
}

fn key_of(rec: &csv::StringRecord, idx: [usize; 3]) -> String {
    idx.map(|i| rec.get(i).unwrap_or("")).join("/")
}

/// Reads a function-duration table (needs the three hash columns and
/// `Average`, in milliseconds).
pub fn parse_durations(text: &str, source_name: &str) -> Result<Vec<DurationRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(source_name, &e))?.clone();
    let keys = key_indices(&headers, source_name)?;
    let avg = headers
        .iter()
        .position(|h| h == "Average")
        .ok_or_else(|| Error::parse(source_name, 1, "missing column `Average`"))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(source_name, &e))?;
        let raw = rec.get(avg).unwrap_or("");
        let average_ms = raw
            .parse()
            .map_err(|_| Error::parse(source_name, line_of(&rec), format!("Average `{raw}` is not a number")))?;
        rows.push(DurationRow {
            key: key_of(&rec, keys),
            average_ms,
        });
    }
    Ok(rows)
}

/// Reads a per-minute invocation table. Every column whose header is a
/// positive integer `m` holds the count for minute `m` (1-based).
pub fn parse_invocations(text: &str, source_name: &str) -> Result<Vec<InvocationRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(source_name, &e))?.clone();
    let keys = key_indices(&headers, source_name)?;
    let minute_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.parse::<usize>().ok().filter(|&m| m >= 1).map(|m| (i, m - 1)))
        .collect();
    if minute_cols.is_empty() {
        return Err(Error::parse(source_name, 1, "no per-minute count columns"));
    }
    let width = minute_cols.iter().map(|&(_, m)| m + 1).max().unwrap_or(0);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(source_name, &e))?;
        let mut counts = vec![0i64; width];
        for &(col, minute) in &minute_cols {
            let raw = rec.get(col).unwrap_or("");
            counts[minute] = raw.parse().map_err(|_| {
                Error::parse(source_name, line_of(&rec), format!("count `{raw}` for minute {} is not an integer", minute + 1))
            })?;
        }
        rows.push(InvocationRow {
            key: key_of(&rec, keys),
            counts,
        });
    }
    Ok(rows)
}

/// Joins durations with invocation counts, drops garbage rows, and merges
/// functions that share a duration (or a bucket, when a table is given).
///
/// A duration row is garbage when its average is not a positive finite
/// number or exceeds `max_duration`; an invocation row is garbage when any
/// count is negative. Functions missing from either table are dropped, and
/// only the first duration row of a repeated key is used.
pub fn ingest_trace(
    durations: &[DurationRow],
    invocations: &[InvocationRow],
    buckets: Option<&BucketTable>,
    max_duration: SimTime,
) -> Result<TraceTable> {
    let mut by_key: HashMap<&str, SimTime> = HashMap::new();
    for d in durations {
        let valid = d.average_ms.is_finite() && d.average_ms > 0.0;
        let duration = SimTime::from_millis_f64(d.average_ms);
        if valid && duration > SimTime::ZERO && duration <= max_duration {
            by_key.entry(d.key.as_str()).or_insert(duration);
        }
    }

    let mut grouped: BTreeMap<SimTime, (Option<String>, Vec<u64>)> = BTreeMap::new();
    for inv in invocations {
        if inv.counts.iter().any(|&c| c < 0) {
            continue;
        }
        let Some(&duration) = by_key.get(inv.key.as_str()) else {
            continue;
        };
        let (duration, label) = match buckets {
            Some(b) => {
                let (label, at) = b.nearest(duration);
                (*at, Some(label.clone()))
            }
            None => (duration, None),
        };
        let slot = grouped.entry(duration).or_insert_with(|| (label, Vec::new()));
        if slot.1.len() < inv.counts.len() {
            slot.1.resize(inv.counts.len(), 0);
        }
        for (acc, &c) in slot.1.iter_mut().zip(&inv.counts) {
            *acc += c as u64;
        }
    }
    if grouped.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(TraceTable {
        rows: grouped
            .into_iter()
            .map(|(duration, (label, counts))| TraceRow { duration, label, counts })
            .collect(),
    })
}

/// Reads and ingests a duration CSV, an invocation CSV and an optional
/// bucket table from disk.
pub fn read_trace(
    durations: &Path,
    invocations: &Path,
    buckets: Option<&Path>,
    max_duration: SimTime,
) -> Result<TraceTable> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let name = |p: &Path| p.display().to_string();
    let d = parse_durations(&read(durations)?, &name(durations))?;
    let i = parse_invocations(&read(invocations)?, &name(invocations))?;
    let b = buckets.map(|p| BucketTable::parse(&read(p)?, &name(p))).transpose()?;
    ingest_trace(&d, &i, b.as_ref(), max_duration)
}

/// Turns per-minute counts into an arrival sequence.
///
/// Counts are divided by `scale` (floor). Within each selected minute a class
/// with `k` invocations arrives at offsets `i * 60 s / k`, `i = 0..k`. All
/// arrivals are merged in time order (ties by class order, i.e. by
/// duration) and converted to inter-arrival times. An all-zero result is an
/// empty workload, not an error.
pub fn derive_iat(trace: &TraceTable, scale: u32, minutes: Range<usize>) -> Result<WorkloadSpec> {
    if scale == 0 {
        return Err(Error::InvalidParams("scale factor must be at least 1".into()));
    }
    if minutes.is_empty() || minutes.end > trace.minutes() {
        return Err(Error::InvalidParams(format!(
            "minute range {}..{} outside the trace's {} minutes",
            minutes.start,
            minutes.end,
            trace.minutes()
        )));
    }
    let mut arrivals: Vec<(SimTime, usize)> = Vec::new();
    for (class, row) in trace.rows.iter().enumerate() {
        for minute in minutes.clone() {
            let k = row.counts.get(minute).copied().unwrap_or(0) / u64::from(scale);
            let base = (minute - minutes.start) as u64 * MINUTE;
            arrivals.extend((0..k).map(|i| (SimTime::from_micros(base + i * MINUTE / k), class)));
        }
    }
    arrivals.sort();
    let mut spec = WorkloadSpec::from_arrivals(
        arrivals
            .into_iter()
            .map(|(at, class)| (at, trace.rows[class].duration, TRACE_MEMORY_MB)),
    );
    spec.meta = WorkloadMeta {
        source: Some(format!("trace minutes {}..{}", minutes.start, minutes.end)),
        scale: Some(scale),
        seed: None,
    };
    Ok(spec)
}

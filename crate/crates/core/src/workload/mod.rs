//! Workload specifications: the on-disk format, trace-derived generation and
//! the synthetic generator.
//!
//! A workload file has one header line followed by CSV rows
//! `iat_us,demand_us,memory_mb`. Optional `# key: value` lines before the
//! header carry provenance (source, scale factor, seed) and are ignored by
//! the simulation itself.

mod synth;
mod trace;

pub use synth::{short_fraction, synthesize, BurstParams, SynthParams};
pub use trace::{
    derive_iat, ingest_trace, parse_durations, read_trace, parse_invocations, BucketTable, DurationRow, InvocationRow,
    TraceRow, TraceTable,
};

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Task, TaskId};
use crate::time::SimTime;

pub const HEADER: &str = "iat_us,demand_us,memory_mb";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadEntry {
    /// Time since the previous arrival; the first entry counts from zero.
    pub iat: SimTime,
    pub demand: SimTime,
    pub memory_mb: u32,
}

impl WorkloadEntry {
    pub fn new(iat: SimTime, demand: SimTime, memory_mb: u32) -> Self {
        WorkloadEntry { iat, demand, memory_mb }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadMeta {
    pub source: Option<String>,
    pub scale: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub entries: Vec<WorkloadEntry>,
    pub meta: WorkloadMeta,
}

impl WorkloadSpec {
    pub fn new(entries: Vec<WorkloadEntry>) -> Self {
        WorkloadSpec {
            entries,
            meta: WorkloadMeta::default(),
        }
    }

    /// Builds a spec from absolute arrival times, which must be sorted.
    pub fn from_arrivals(arrivals: impl IntoIterator<Item = (SimTime, SimTime, u32)>) -> Self {
        let mut prev = SimTime::ZERO;
        let entries = arrivals
            .into_iter()
            .map(|(at, demand, memory_mb)| {
                let iat = at.checked_sub(prev).expect("arrivals must be sorted");
                prev = at;
                WorkloadEntry::new(iat, demand, memory_mb)
            })
            .collect();
        WorkloadSpec::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Absolute arrival times.
    pub fn arrivals(&self) -> Vec<SimTime> {
        let mut at = SimTime::ZERO;
        self.entries
            .iter()
            .map(|e| {
                at += e.iat;
                at
            })
            .collect()
    }

    pub fn iats(&self) -> Vec<SimTime> {
        self.entries.iter().map(|e| e.iat).collect()
    }

    /// Fresh, unscheduled tasks with ids in arrival order.
    pub fn to_tasks(&self) -> Vec<Task> {
        self.arrivals()
            .into_iter()
            .zip(&self.entries)
            .enumerate()
            .map(|(i, (at, e))| Task::new(TaskId(i as u32), at, e.demand, e.memory_mb))
            .collect()
    }

    pub fn total_demand(&self) -> SimTime {
        self.entries.iter().map(|e| e.demand).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() > u32::MAX as usize {
            return Err(Error::InvalidParams("too many tasks".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.demand == SimTime::ZERO {
                return Err(Error::InvalidParams(format!("entry {i}: demand must be positive")));
            }
            if e.memory_mb == 0 {
                return Err(Error::InvalidParams(format!("entry {i}: memory must be positive")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the entries in file form; metadata does not contribute.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(HEADER.as_bytes());
        h.update(b"\n");
        for e in &self.entries {
            h.update(format!("{},{},{}\n", e.iat.as_micros(), e.demand.as_micros(), e.memory_mb).as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * (self.entries.len() + 1));
        if let Some(source) = &self.meta.source {
            writeln!(out, "# source: {source}").unwrap();
        }
        if let Some(scale) = self.meta.scale {
            writeln!(out, "# scale: {scale}").unwrap();
        }
        if let Some(seed) = self.meta.seed {
            writeln!(out, "# seed: {seed}").unwrap();
        }
        out.push_str(HEADER);
        out.push('\n');
        for e in &self.entries {
            writeln!(out, "{},{},{}", e.iat.as_micros(), e.demand.as_micros(), e.memory_mb).unwrap();
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut meta = WorkloadMeta::default();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let header = loop {
            match lines.next() {
                None => return Err(Error::parse(source_name, 1, "missing header line")),
                Some((_, "")) => continue,
                Some((n, line)) if line.starts_with('#') => parse_meta(&mut meta, line, source_name, n)?,
                Some((n, line)) => break (n, line),
            }
        };
        let columns: Vec<&str> = header.1.split(',').map(str::trim).collect();
        if columns != HEADER.split(',').collect::<Vec<_>>() {
            return Err(Error::parse(source_name, header.0, format!("expected header `{HEADER}`")));
        }

        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(source_name, n, format!("expected 3 fields, found {}", fields.len())));
            }
            let num = |idx: usize, name: &str| {
                fields[idx]
                    .parse::<u64>()
                    .map_err(|_| Error::parse(source_name, n, format!("{name} `{}` is not a non-negative integer", fields[idx])))
            };
            let iat = num(0, "iat_us")?;
            let demand = num(1, "demand_us")?;
            let memory = num(2, "memory_mb")?;
            if demand == 0 {
                return Err(Error::parse(source_name, n, "demand_us must be positive"));
            }
            let memory_mb = u32::try_from(memory)
                .ok()
                .filter(|&m| m > 0)
                .ok_or_else(|| Error::parse(source_name, n, "memory_mb must be a positive 32-bit integer"))?;
            entries.push(WorkloadEntry::new(SimTime::from_micros(iat), SimTime::from_micros(demand), memory_mb));
        }
        Ok(WorkloadSpec { entries, meta })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_meta(meta: &mut WorkloadMeta, line: &str, source_name: &str, n: usize) -> Result<()> {
    let Some((key, value)) = line.trim_start_matches('#').split_once(':') else {
        return Ok(());
    };
    let value = value.trim();
    let bad = |what: &str| Error::parse(source_name, n, format!("invalid {what} `{value}`"));
    match key.trim() {
        "source" => meta.source = Some(value.to_string()),
        "scale" => meta.scale = Some(value.parse().map_err(|_| bad("scale"))?),
        "seed" => meta.seed = Some(value.parse().map_err(|_| bad("seed"))?),
        _ => {}
    }
    Ok(())
}

/// Discrete distribution of function memory sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDist {
    pub buckets: Vec<(u32, f64)>,
}

impl Default for MemoryDist {
    fn default() -> Self {
        MemoryDist {
            buckets: vec![(128, 0.4), (256, 0.3), (512, 0.2), (1024, 0.1)],
        }
    }
}

impl MemoryDist {
    pub fn constant(memory_mb: u32) -> Self {
        MemoryDist {
            buckets: vec![(memory_mb, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets.is_empty() {
            return Err(Error::InvalidParams("memory distribution has no buckets".into()));
        }
        if self.buckets.iter().any(|&(mb, w)| mb == 0 || !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParams("memory buckets need positive sizes and finite non-negative weights".into()));
        }
        if self.buckets.iter().all(|&(_, w)| w == 0.0) {
            return Err(Error::InvalidParams("memory weights sum to zero".into()));
        }
        Ok(())
    }

    pub(crate) fn sampler(&self) -> Result<impl Fn(&mut ChaCha8Rng) -> u32 + '_> {
        self.validate()?;
        let index = WeightedIndex::new(self.buckets.iter().map(|&(_, w)| w))
            .map_err(|e| Error::InvalidParams(format!("memory distribution: {e}")))?;
        Ok(move |rng: &mut ChaCha8Rng| self.buckets[index.sample(rng)].0)
    }
}

/// Redraws every entry's memory size from `dist`, deterministically in `seed`.
pub fn assign_memory(spec: &mut WorkloadSpec, dist: &MemoryDist, seed: u64) -> Result<()> {
    let sample = dist.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_6d6f_7279);
    for e in &mut spec.entries {
        e.memory_mb = sample(&mut rng);
    }
    Ok(())
}

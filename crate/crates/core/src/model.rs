//! Domain types shared across the simulator: tasks, metric triples and
//! nearest-rank percentiles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::Usd;
use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreId(pub u32);

impl CoreId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "core{}", self.0)
    }
}

/// Which core group owns a task or a core.
///
/// Single-policy runs put everything in [`GroupTag::Main`]; the hybrid
/// scheduler splits the enclave into a FIFO and a CFS group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupTag {
    #[default]
    Main,
    Fifo,
    Cfs,
}

impl GroupTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupTag::Main => "main",
            GroupTag::Fifo => "fifo",
            GroupTag::Cfs => "cfs",
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "main" => Ok(GroupTag::Main),
            "fifo" => Ok(GroupTag::Fifo),
            "cfs" => Ok(GroupTag::Cfs),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

/// One function invocation and its lifecycle timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub arrival: SimTime,
    /// Total CPU service required.
    pub demand: SimTime,
    pub remaining: SimTime,
    pub memory_mb: u32,
    pub first_run: Option<SimTime>,
    pub completion: Option<SimTime>,
    /// Involuntary preemptions, including a hand-off from the FIFO group.
    pub preemptions: u32,
    pub vruntime: SimTime,
    pub group_tag: GroupTag,
}

impl Task {
    pub fn new(id: TaskId, arrival: SimTime, demand: SimTime, memory_mb: u32) -> Self {
        Task {
            id,
            arrival,
            demand,
            remaining: demand,
            memory_mb,
            first_run: None,
            completion: None,
            preemptions: 0,
            vruntime: SimTime::ZERO,
            group_tag: GroupTag::Main,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.completion.is_some()
    }

    /// CPU time received so far.
    pub fn served(&self) -> SimTime {
        self.demand - self.remaining
    }
}

/// Execution, response and turnaround time of one completed task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task_id: TaskId,
    pub execution: SimTime,
    pub response: SimTime,
    pub turnaround: SimTime,
    pub cost_usd: Usd,
}

/// Derives the metric triple of a completed task. Cost is left at zero;
/// see [`crate::cost::invocation_cost`].
pub fn task_metrics(task: &Task) -> Result<MetricsRecord> {
    let (Some(first_run), Some(completion)) = (task.first_run, task.completion) else {
        return Err(Error::IncompleteTask(task.id));
    };
    Ok(MetricsRecord {
        task_id: task.id,
        execution: completion - first_run,
        response: first_run - task.arrival,
        turnaround: completion - task.arrival,
        cost_usd: Usd::ZERO,
    })
}

/// A percentage in (0, 100], held in basis points so that rank arithmetic
/// stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Percent(u32);

impl Percent {
    pub const P50: Percent = Percent(5_000);
    pub const P90: Percent = Percent(9_000);
    pub const P95: Percent = Percent(9_500);
    pub const P99: Percent = Percent(9_900);
    pub const MAX: Percent = Percent(10_000);

    pub fn new(percent: f64) -> Result<Self> {
        let bp = (percent * 100.0).round();
        if !(1.0..=10_000.0).contains(&bp) {
            return Err(Error::InvalidParams(format!("percentile {percent} outside (0, 100]")));
        }
        Ok(Percent(bp as u32))
    }

    pub const fn from_basis_points(bp: u32) -> Self {
        assert!(bp >= 1 && bp <= 10_000);
        Percent(bp)
    }

    pub fn basis_points(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Zero-based index of the nearest-rank element in a sorted list of `n`.
    pub fn rank_index(self, n: usize) -> usize {
        debug_assert!(n > 0);
        let rank = (self.0 as u128 * n as u128).div_ceil(10_000) as usize;
        rank.max(1) - 1
    }
}

impl TryFrom<f64> for Percent {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Percent::new(value)
    }
}

impl From<Percent> for f64 {
    fn from(p: Percent) -> f64 {
        p.as_f64()
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(100) {
            write!(f, "p{}", self.0 / 100)
        } else {
            write!(f, "p{}", self.as_f64())
        }
    }
}

impl FromStr for Percent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(['p', 'P']);
        let value: f64 = digits
            .parse()
            .map_err(|_| Error::InvalidParams(format!("cannot parse percentile `{s}`")))?;
        Percent::new(value)
    }
}

/// Nearest-rank percentile: sort ascending, take element `ceil(p/100 * n) - 1`.
pub fn percentile(samples: &[SimTime], p: Percent) -> Result<SimTime> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(sorted[p.rank_index(sorted.len())])
}

/// [`percentile`] over an already sorted slice.
pub fn percentile_sorted(sorted: &[SimTime], p: Percent) -> Result<SimTime> {
    if sorted.is_empty() {
        return Err(Error::EmptySamples);
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    Ok(sorted[p.rank_index(sorted.len())])
}

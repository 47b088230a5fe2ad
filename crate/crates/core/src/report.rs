//! Run reports: per-task metrics with costs, percentile aggregates, per-core
//! counters and utilization, plus the file formats consumed by plotting.
//!
//! A report directory holds `tasks.csv`, `util.csv` and `summary.json`.
//! Column order is fixed; see [`TASKS_HEADER`] and [`UTIL_HEADER`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{invocation_cost, CostModel, Usd};
use crate::engine::{MigrationRecord, SimulationResult};
use crate::error::{Error, Result};
use crate::model::{percentile_sorted, task_metrics, CoreId, GroupTag, Percent, TaskId};
use crate::time::SimTime;

pub const TASKS_HEADER: &str =
    "task_id,arrival_us,first_run_us,completion_us,demand_us,memory_mb,preemptions,exec_us,resp_us,turn_us,cost_usd";
pub const UTIL_HEADER: &str = "window_start_us,core_id,busy_fraction,group";

pub const TASKS_FILE: &str = "tasks.csv";
pub const UTIL_FILE: &str = "util.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One completed task; a row of `tasks.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u32,
    pub arrival_us: u64,
    pub first_run_us: u64,
    pub completion_us: u64,
    pub demand_us: u64,
    pub memory_mb: u32,
    pub preemptions: u32,
    pub exec_us: u64,
    pub resp_us: u64,
    pub turn_us: u64,
    pub cost_usd: Usd,
}

impl TaskRecord {
    pub fn execution(&self) -> SimTime {
        SimTime::from_micros(self.exec_us)
    }

    pub fn response(&self) -> SimTime {
        SimTime::from_micros(self.resp_us)
    }

    pub fn turnaround(&self) -> SimTime {
        SimTime::from_micros(self.turn_us)
    }
}

/// One core over one monitoring window; a row of `util.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilRecord {
    pub window_start_us: u64,
    pub core_id: u32,
    pub busy_fraction: f64,
    pub group: GroupTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl Quantiles {
    fn of(mut values: Vec<SimTime>) -> Result<Self> {
        values.sort_unstable();
        let at = |p| percentile_sorted(&values, p).map(SimTime::as_micros);
        Ok(Quantiles {
            p50_us: at(Percent::P50)?,
            p90_us: at(Percent::P90)?,
            p99_us: at(Percent::P99)?,
            max_us: at(Percent::MAX)?,
        })
    }

    pub fn p50(&self) -> SimTime {
        SimTime::from_micros(self.p50_us)
    }

    pub fn p90(&self) -> SimTime {
        SimTime::from_micros(self.p90_us)
    }

    pub fn p99(&self) -> SimTime {
        SimTime::from_micros(self.p99_us)
    }

    pub fn max(&self) -> SimTime {
        SimTime::from_micros(self.max_us)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregates {
    pub completed: usize,
    pub execution: Quantiles,
    pub response: Quantiles,
    pub turnaround: Quantiles,
    pub total_cost_usd: Usd,
}

impl Aggregates {
    /// Recomputes every aggregate from the per-task list.
    pub fn from_records(tasks: &[TaskRecord]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::NoCompletedTasks);
        }
        let column = |f: fn(&TaskRecord) -> SimTime| tasks.iter().map(f).collect::<Vec<_>>();
        Ok(Aggregates {
            completed: tasks.len(),
            execution: Quantiles::of(column(TaskRecord::execution))?,
            response: Quantiles::of(column(TaskRecord::response))?,
            turnaround: Quantiles::of(column(TaskRecord::turnaround))?,
            total_cost_usd: tasks.iter().map(|t| t.cost_usd).sum(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreRecord {
    pub core_id: u32,
    /// Group at the end of the run.
    pub group: GroupTag,
    pub busy_us: u64,
    pub switch_overhead_us: u64,
    /// Quantum expiries and other involuntary stops.
    pub preemptions: u64,
    /// FIFO-limit hand-offs, counted apart from preemptions.
    pub limit_migrations: u64,
}

/// The contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub policy: String,
    pub config_hash: String,
    pub workload_hash: String,
    pub end_time_us: u64,
    pub censored: usize,
    pub aggregates: Aggregates,
    pub cores: Vec<CoreRecord>,
    /// `(tick_us, limit_us)` pairs; empty for policies without a limit.
    #[serde(default)]
    pub limit_series: Vec<(u64, u64)>,
    #[serde(default)]
    pub migrations: Vec<MigrationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub summary: RunSummary,
    pub tasks: Vec<TaskRecord>,
    pub util: Vec<UtilRecord>,
}

/// Builds the report of a finished run. Unfinished tasks are left out of
/// every aggregate and only counted. The run id defaults to the policy name
/// and the config hash to empty; callers that know better overwrite them.
pub fn aggregate(result: &SimulationResult, model: &CostModel) -> Result<RunReport> {
    let mut tasks = Vec::with_capacity(result.tasks.len());
    for task in result.completed() {
        let m = task_metrics(task)?;
        debug_assert_eq!(m.turnaround, m.execution + m.response);
        tasks.push(TaskRecord {
            task_id: task.id.0,
            arrival_us: task.arrival.as_micros(),
            first_run_us: task.first_run.expect("completed").as_micros(),
            completion_us: task.completion.expect("completed").as_micros(),
            demand_us: task.demand.as_micros(),
            memory_mb: task.memory_mb,
            preemptions: task.preemptions,
            exec_us: m.execution.as_micros(),
            resp_us: m.response.as_micros(),
            turn_us: m.turnaround.as_micros(),
            cost_usd: invocation_cost(m.execution, task.memory_mb, model)?,
        });
    }
    let aggregates = Aggregates::from_records(&tasks)?;
    let cores = result
        .cores
        .iter()
        .map(|c| CoreRecord {
            core_id: c.id.0,
            group: c.group,
            busy_us: c.busy.as_micros(),
            switch_overhead_us: c.switch_overhead.as_micros(),
            preemptions: c.preemptions,
            limit_migrations: c.limit_migrations,
        })
        .collect();
    let util = result
        .util
        .iter()
        .flat_map(|s| {
            s.per_core.iter().map(move |c| UtilRecord {
                window_start_us: s.window_start.as_micros(),
                core_id: c.core.0,
                busy_fraction: c.busy_fraction,
                group: c.group,
            })
        })
        .collect();
    let summary = RunSummary {
        run_id: result.policy.clone(),
        policy: result.policy.clone(),
        config_hash: String::new(),
        workload_hash: result.workload_hash.clone(),
        end_time_us: result.end_time.as_micros(),
        censored: result.censored.len(),
        aggregates,
        cores,
        limit_series: result
            .trace
            .limit_series
            .iter()
            .map(|(at, l)| (at.as_micros(), l.as_micros()))
            .collect(),
        migrations: result.trace.migrations.clone(),
    };
    Ok(RunReport { summary, tasks, util })
}

impl RunReport {
    pub fn aggregates(&self) -> &Aggregates {
        &self.summary.aggregates
    }

    pub fn total_cost(&self) -> Usd {
        self.summary.aggregates.total_cost_usd
    }

    pub fn core_preemptions(&self) -> impl Iterator<Item = (CoreId, u64)> + '_ {
        self.summary.cores.iter().map(|c| (CoreId(c.core_id), c.preemptions))
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task_id == id.0)
    }

    /// Writes `tasks.csv`, `util.csv` and `summary.json` into `dir`,
    /// creating it if needed.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join(TASKS_FILE), TASKS_HEADER, &self.tasks)?;
        write_csv(&dir.join(UTIL_FILE), UTIL_HEADER, &self.util)?;
        let path = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`RunReport::export`].
    pub fn import(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let summary: RunSummary =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        Ok(RunReport {
            summary,
            tasks: read_csv(&dir.join(TASKS_FILE), TASKS_HEADER)?,
            util: read_csv(&dir.join(UTIL_FILE), UTIL_HEADER)?,
        })
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(path.display().to_string(), 0, format!("{other:?}")),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(io)?;
    w.write_record(header.split(',')).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &str) -> Result<Vec<T>> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(&name, 0, format!("{other:?}")),
    })?;
    let found = r.headers().map_err(|e| Error::parse(&name, 1, e.to_string()))?;
    if found.iter().ne(header.split(',')) {
        return Err(Error::parse(&name, 1, format!("expected header `{header}`")));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(&name, i + 2, e.to_string())))
        .collect()
}

/// One line of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run_id: String,
    pub policy: String,
    pub total_cost_usd: Usd,
    pub p99_response_us: u64,
    pub p99_execution_us: u64,
    pub p99_turnaround_us: u64,
    /// Total cost over the cheapest run's total cost.
    pub cost_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub workload_hash: String,
    pub rows: Vec<ComparisonRow>,
}

/// Lines up runs over the same workload. At least `min_reports` are needed
/// (two for a policy comparison, one for a single-point sweep).
pub fn compare_at_least(reports: &[RunReport], min_reports: usize) -> Result<Comparison> {
    if reports.len() < min_reports.max(1) {
        return Err(Error::TooFewReports {
            need: min_reports.max(1),
            got: reports.len(),
        });
    }
    let hash = &reports[0].summary.workload_hash;
    if let Some(other) = reports.iter().find(|r| &r.summary.workload_hash != hash) {
        return Err(Error::WorkloadMismatch(hash.clone(), other.summary.workload_hash.clone()));
    }
    let cheapest = reports.iter().map(RunReport::total_cost).min().expect("non-empty");
    let rows = reports
        .iter()
        .map(|r| {
            let a = r.aggregates();
            let cost = r.total_cost();
            ComparisonRow {
                run_id: r.summary.run_id.clone(),
                policy: r.summary.policy.clone(),
                total_cost_usd: cost,
                p99_response_us: a.response.p99_us,
                p99_execution_us: a.execution.p99_us,
                p99_turnaround_us: a.turnaround.p99_us,
                cost_ratio: if cost == cheapest { 1.0 } else { cost.ratio(cheapest) },
            }
        })
        .collect();
    Ok(Comparison {
        workload_hash: hash.clone(),
        rows,
    })
}

/// Compares two or more runs over the same workload.
pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    compare_at_least(reports, 2)
}

impl Comparison {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<14} {:>16} {:>10} {:>14} {:>14} {:>14}\n",
            "run", "policy", "cost_usd", "ratio", "p99_resp_ms", "p99_exec_ms", "p99_turn_ms"
        );
        for r in &self.rows {
            let ms = |us: u64| us as f64 / 1_000.0;
            let _ = writeln!(
                out,
                "{:<24} {:<14} {:>16.6} {:>10.3} {:>14.1} {:>14.1} {:>14.1}",
                r.run_id,
                r.policy,
                r.total_cost_usd.as_f64(),
                r.cost_ratio,
                ms(r.p99_response_us),
                ms(r.p99_execution_us),
                ms(r.p99_turnaround_us)
            );
        }
        out
    }

    /// The row minimizing `key`, first on ties.
    pub fn best_by<K: PartialOrd>(&self, key: impl Fn(&ComparisonRow) -> K) -> Option<&ComparisonRow> {
        self.rows.iter().fold(None, |best: Option<&ComparisonRow>, r| match best {
            Some(b) if key(b) <= key(r) => Some(b),
            _ => Some(r),
        })
    }
}

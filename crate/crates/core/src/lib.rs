//! Discrete-event simulation of OS-level CPU scheduling for serverless
//! workloads.
//!
//! The [`engine`] drives a set of simulated cores under a pluggable
//! [`Scheduler`]. Baseline policies live in [`policy`]; the two-group
//! FIFO+CFS scheduler with an adaptive preemption limit and core-group
//! rightsizing lives in [`hybrid`] and [`adapt`]. Workloads come from
//! [`workload`], and [`report`] turns finished runs into metrics, costs and
//! files.

pub mod adapt;
pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod hybrid;
pub mod model;
pub mod policy;
pub mod report;
pub mod time;
pub mod workload;

pub use config::ExperimentConfig;
pub use cost::{invocation_cost, CostModel, Usd};
pub use engine::{run, RunOptions, Scheduler, SimulationResult};
pub use error::{Error, Result};
pub use hybrid::{AdaptConfig, HybridConfig, HybridScheduler};
pub use model::{percentile, task_metrics, CoreId, GroupTag, MetricsRecord, Percent, Task, TaskId};
pub use policy::{PolicyConfig, PolicyKind};
pub use report::{aggregate, compare, Comparison, RunReport};
pub use time::SimTime;
pub use workload::{WorkloadEntry, WorkloadSpec};

use std::path::PathBuf;

use thiserror::Error;

use crate::model::{CoreId, TaskId};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum Error {
    #[error("task {0} has not completed")]
    IncompleteTask(TaskId),

    #[error("percentile of an empty sample set")]
    EmptySamples,

    #[error("memory size {memory_mb} MB is below the smallest priced size ({smallest_mb} MB)")]
    MemoryBelowTable { memory_mb: u32, smallest_mb: u32 },

    #[error("event at {at} scheduled in the past (clock is {clock})")]
    PastTimestamp { at: SimTime, clock: SimTime },

    #[error("utilization window has zero length")]
    ZeroWindow,

    #[error("cannot migrate core {core}: {reason}")]
    MigrationRefused { core: CoreId, reason: &'static str },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("trace is empty after cleaning")]
    EmptyTrace,

    #[error("run has no completed tasks")]
    NoCompletedTasks,

    #[error("reports cover different workloads ({0} vs {1})")]
    WorkloadMismatch(String, String),

    #[error("need at least {need} reports, got {got}")]
    TooFewReports { need: usize, got: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

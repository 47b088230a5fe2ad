//! Baseline scheduling policies and their shared configuration.

mod cfs;
mod edf;
mod global;

pub use cfs::{CfsGroup, CfsRunqueue, CfsScheduler};
pub use edf::EdfScheduler;
pub use global::GlobalQueueScheduler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Scheduler;
use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fifo,
    FifoPreempt,
    Cfs,
    Rr,
    Edf,
    Hybrid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Fifo,
        PolicyKind::FifoPreempt,
        PolicyKind::Cfs,
        PolicyKind::Rr,
        PolicyKind::Edf,
        PolicyKind::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Fifo => "fifo",
            PolicyKind::FifoPreempt => "fifo_preempt",
            PolicyKind::Cfs => "cfs",
            PolicyKind::Rr => "rr",
            PolicyKind::Edf => "edf",
            PolicyKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::config("policy.kind", format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// RR time slice; CFS target latency.
    pub slice: SimTime,
    /// Lower bound on a CFS quantum.
    pub min_granularity: SimTime,
    /// Continuous-runtime limit for FIFO_PREEMPT and the hybrid FIFO group.
    pub preempt_limit: SimTime,
    /// Charged to the core on every involuntary switch between two tasks.
    pub ctx_switch_overhead: SimTime,
    /// EDF deadline = arrival + offset.
    pub deadline_offset: SimTime,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Fifo,
            slice: SimTime::from_millis(6),
            min_granularity: SimTime::from_micros(750),
            preempt_limit: SimTime::from_millis(1_633),
            ctx_switch_overhead: SimTime::from_micros(5),
            deadline_offset: SimTime::from_secs(1),
        }
    }
}

impl PolicyConfig {
    pub fn with_kind(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("policy.slice_ms", self.slice),
            ("policy.min_granularity_ms", self.min_granularity),
            ("policy.preempt_limit_ms", self.preempt_limit),
        ];
        for (field, value) in positive {
            if value == SimTime::ZERO {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }

    /// Builds one of the single-group policies. The hybrid scheduler needs a
    /// core split and is built from [`crate::hybrid::HybridConfig`].
    pub fn build_baseline(&self) -> Result<Box<dyn Scheduler + Send>> {
        self.validate()?;
        Ok(match self.kind {
            PolicyKind::Fifo => Box::new(GlobalQueueScheduler::fifo()),
            PolicyKind::FifoPreempt => Box::new(GlobalQueueScheduler::fifo_preempt(self.preempt_limit)),
            PolicyKind::Rr => Box::new(GlobalQueueScheduler::round_robin(self.slice)),
            PolicyKind::Cfs => Box::new(CfsScheduler::new(self.slice, self.min_granularity)),
            PolicyKind::Edf => Box::new(EdfScheduler::new(self.deadline_offset)),
            PolicyKind::Hybrid => {
                return Err(Error::config("policy.kind", "hybrid needs a core split; use HybridConfig"))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing() {
        assert_eq!("FIFO-preempt".parse::<PolicyKind>().unwrap(), PolicyKind::FifoPreempt);
        assert_eq!("hybrid".parse::<PolicyKind>().unwrap(), PolicyKind::Hybrid);
        assert!("sjf".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn validation_names_fields() {
        let cfg = PolicyConfig {
            slice: SimTime::ZERO,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("policy.slice_ms"), "{err}");
    }
}

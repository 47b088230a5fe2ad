//! Preemption-limit adaptation and core-group rightsizing inputs.
//!
//! The migration procedures themselves live with the hybrid scheduler, which
//! owns the group state they rearrange.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{percentile, CoreId, GroupTag, Percent};
use crate::time::SimTime;

/// Initial time limit before any duration has been observed.
pub const DEFAULT_INITIAL_LIMIT: SimTime = SimTime::from_millis(1_633);

/// The last `capacity` execution durations of completed tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationWindow {
    capacity: usize,
    ring: VecDeque<SimTime>,
    percentile: Percent,
    initial_limit: SimTime,
}

impl DurationWindow {
    pub fn new(capacity: usize, percentile: Percent, initial_limit: SimTime) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParams("duration window capacity must be at least 1".into()));
        }
        Ok(DurationWindow {
            capacity,
            ring: VecDeque::with_capacity(capacity),
            percentile,
            initial_limit,
        })
    }

    pub fn push(&mut self, duration: SimTime) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(duration);
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn percentile(&self) -> Percent {
        self.percentile
    }

    pub fn iter(&self) -> impl Iterator<Item = SimTime> + '_ {
        self.ring.iter().copied()
    }
}

/// The preemption time limit implied by the window: its configured
/// percentile, or the initial limit while it is still empty.
pub fn update_limit(window: &DurationWindow) -> SimTime {
    if window.ring.is_empty() {
        return window.initial_limit;
    }
    let (a, b) = window.ring.as_slices();
    let samples = [a, b].concat();
    percentile(&samples, window.percentile).expect("non-empty window")
}

/// Busy fraction of every core over one monitoring window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSample {
    pub window_start: SimTime,
    pub window_len: SimTime,
    pub per_core: Vec<CoreUtilization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreUtilization {
    pub core: CoreId,
    pub group: GroupTag,
    pub busy_fraction: f64,
}

impl UtilizationSample {
    /// Mean busy fraction over the cores of `group`, if it has any.
    pub fn group_mean(&self, group: GroupTag) -> Option<f64> {
        let (sum, n) = self
            .per_core
            .iter()
            .filter(|c| c.group == group)
            .fold((0.0, 0usize), |(s, n), c| (s + c.busy_fraction, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn mean(&self) -> f64 {
        if self.per_core.is_empty() {
            return 0.0;
        }
        self.per_core.iter().map(|c| c.busy_fraction).sum::<f64>() / self.per_core.len() as f64
    }
}

/// Builds a sample from the busy time each core accumulated inside the window.
pub fn sample_utilization(
    busy_in_window: impl IntoIterator<Item = (CoreId, GroupTag, SimTime)>,
    window_start: SimTime,
    window_len: SimTime,
) -> Result<UtilizationSample> {
    if window_len == SimTime::ZERO {
        return Err(Error::ZeroWindow);
    }
    let len = window_len.as_micros() as f64;
    let per_core = busy_in_window
        .into_iter()
        .map(|(core, group, busy)| CoreUtilization {
            core,
            group,
            busy_fraction: (busy.as_micros() as f64 / len).clamp(0.0, 1.0),
        })
        .collect();
    Ok(UtilizationSample {
        window_start,
        window_len,
        per_core,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RightsizeConfig {
    /// Minimum gap between the two groups' mean utilization that triggers a
    /// migration.
    pub util_threshold: f64,
    pub check_period: SimTime,
    pub min_group_size: usize,
    pub cooldown: SimTime,
}

impl Default for RightsizeConfig {
    fn default() -> Self {
        RightsizeConfig {
            util_threshold: 0.20,
            check_period: SimTime::from_secs(1),
            min_group_size: 1,
            cooldown: SimTime::from_secs(2),
        }
    }
}

impl RightsizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.util_threshold > 0.0 && self.util_threshold < 1.0) {
            return Err(Error::config("rightsizing.util_threshold", "must lie in (0, 1)"));
        }
        if self.min_group_size == 0 {
            return Err(Error::config("rightsizing.min_group_size", "must be at least 1"));
        }
        if self.check_period == SimTime::ZERO {
            return Err(Error::config("rightsizing.check_period_ms", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSizes {
    pub fifo: usize,
    pub cfs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RightsizeDecision {
    /// A CFS core joins the FIFO group.
    MoveToFifo,
    /// A FIFO core joins the CFS group.
    MoveToCfs,
    NoOp,
}

/// Moves capacity toward the busier group: one core leaves the less utilized
/// group when the gap reaches the threshold, the donor stays above its
/// minimum size, and the cooldown since the last migration has elapsed.
pub fn rightsize_decision(
    fifo_avg: f64,
    cfs_avg: f64,
    cfg: &RightsizeConfig,
    sizes: GroupSizes,
    cooldown_elapsed: bool,
) -> RightsizeDecision {
    if !cooldown_elapsed || (fifo_avg - cfs_avg).abs() < cfg.util_threshold {
        return RightsizeDecision::NoOp;
    }
    if fifo_avg > cfs_avg {
        if sizes.cfs > cfg.min_group_size {
            return RightsizeDecision::MoveToFifo;
        }
    } else if sizes.fifo > cfg.min_group_size {
        return RightsizeDecision::MoveToCfs;
    }
    RightsizeDecision::NoOp
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    #[test]
    fn empty_window_yields_initial_limit() {
        let w = DurationWindow::new(100, Percent::P95, DEFAULT_INITIAL_LIMIT).unwrap();
        assert_eq!(update_limit(&w), ms(1_633));
    }

    #[test]
    fn ladder_window_p95() {
        let mut w = DurationWindow::new(100, Percent::P95, DEFAULT_INITIAL_LIMIT).unwrap();
        (1..=100).for_each(|i| w.push(ms(i)));
        assert_eq!(update_limit(&w), ms(95));
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = DurationWindow::new(100, Percent::MAX, DEFAULT_INITIAL_LIMIT).unwrap();
        // Oldest entry is the largest so its eviction is visible in the max.
        w.push(ms(10_000));
        (2..=101).for_each(|i| w.push(ms(i)));
        assert_eq!(w.len(), 100);
        assert_eq!(w.iter().next(), Some(ms(2)));
        assert_eq!(update_limit(&w), ms(101));
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(DurationWindow::new(0, Percent::P50, ms(1)).is_err());
    }

    #[test]
    fn utilization_fractions() {
        let s = sample_utilization(
            [
                (CoreId(0), GroupTag::Fifo, ms(1_000)),
                (CoreId(1), GroupTag::Fifo, ms(0)),
                (CoreId(2), GroupTag::Cfs, ms(250)),
            ],
            ms(0),
            ms(1_000),
        )
        .unwrap();
        let fr: Vec<f64> = s.per_core.iter().map(|c| c.busy_fraction).collect();
        assert_eq!(fr, vec![1.0, 0.0, 0.25]);
        assert_eq!(s.group_mean(GroupTag::Fifo), Some(0.5));
        assert_eq!(s.group_mean(GroupTag::Main), None);
        assert!(matches!(sample_utilization([], ms(0), ms(0)), Err(Error::ZeroWindow)));
    }

    #[test]
    fn decisions() {
        let cfg = RightsizeConfig::default();
        let sizes = GroupSizes { fifo: 25, cfs: 25 };
        assert_eq!(rightsize_decision(0.95, 0.40, &cfg, sizes, true), RightsizeDecision::MoveToFifo);
        assert_eq!(rightsize_decision(0.40, 0.95, &cfg, sizes, true), RightsizeDecision::MoveToCfs);
        assert_eq!(rightsize_decision(0.55, 0.50, &cfg, sizes, true), RightsizeDecision::NoOp);
        assert_eq!(rightsize_decision(0.95, 0.40, &cfg, sizes, false), RightsizeDecision::NoOp);
        let floor = GroupSizes { fifo: 49, cfs: 1 };
        assert_eq!(rightsize_decision(1.0, 0.0, &cfg, floor, true), RightsizeDecision::NoOp);
    }

    proptest! {
        #[test]
        fn limit_within_window_range(
            durations in prop::collection::vec(1u64..10_000_000, 1..300),
            bp in 1u32..=10_000,
        ) {
            let mut w = DurationWindow::new(100, Percent::from_basis_points(bp), DEFAULT_INITIAL_LIMIT).unwrap();
            for d in durations {
                w.push(SimTime::from_micros(d));
            }
            let limit = update_limit(&w);
            prop_assert!(w.iter().min().unwrap() <= limit && limit <= w.iter().max().unwrap());
        }
    }
}

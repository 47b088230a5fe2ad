//! Two-group scheduler: a FIFO core group with a continuous-runtime limit
//! feeding a CFS core group.
//!
//! Every task enters the FIFO group's global queue and runs to completion
//! unless it exceeds the limit, in which case it is handed to the CFS group
//! once and for all. CFS cores receive hand-offs round robin and never take
//! fresh arrivals. Optionally the limit tracks a percentile of recent
//! execution times, and cores move between groups to follow load.

mod migrate;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::adapt::{update_limit, DurationWindow, RightsizeConfig, DEFAULT_INITIAL_LIMIT};
use crate::engine::{Budget, Machine, MigrationRecord, PolicyTrace, Scheduler};
use crate::error::{Error, Result};
use crate::model::{CoreId, GroupTag, Percent, TaskId};
use crate::policy::CfsGroup;
use crate::time::SimTime;

/// Sliding-window percentile adaptation of the FIFO limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub window: usize,
    pub percentile: Percent,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            window: 100,
            percentile: Percent::P95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub fifo_cores: usize,
    pub cfs_cores: usize,
    /// Fixed limit, or the starting limit when adaptation is on.
    pub limit: SimTime,
    pub adapt: Option<AdaptConfig>,
    pub rightsize: Option<RightsizeConfig>,
    /// CFS target latency and minimum granularity.
    pub slice: SimTime,
    pub min_granularity: SimTime,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            fifo_cores: 25,
            cfs_cores: 25,
            limit: DEFAULT_INITIAL_LIMIT,
            adapt: None,
            rightsize: None,
            slice: SimTime::from_millis(6),
            min_granularity: SimTime::from_micros(750),
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fifo_cores == 0 {
            return Err(Error::config("hybrid.fifo_cores", "must be at least 1"));
        }
        if self.cfs_cores == 0 {
            return Err(Error::config("hybrid.cfs_cores", "must be at least 1"));
        }
        if self.limit == SimTime::ZERO {
            return Err(Error::config("policy.preempt_limit_ms", "must be positive"));
        }
        if self.slice == SimTime::ZERO {
            return Err(Error::config("policy.slice_ms", "must be positive"));
        }
        if self.min_granularity == SimTime::ZERO {
            return Err(Error::config("policy.min_granularity_ms", "must be positive"));
        }
        if let Some(a) = &self.adapt {
            if a.window == 0 {
                return Err(Error::config("adaptation.window", "must be at least 1"));
            }
        }
        if let Some(r) = &self.rightsize {
            r.validate()?;
            if self.fifo_cores < r.min_group_size || self.cfs_cores < r.min_group_size {
                return Err(Error::config("rightsizing.min_group_size", "exceeds an initial group size"));
            }
        }
        Ok(())
    }

    pub fn total_cores(&self) -> usize {
        self.fifo_cores + self.cfs_cores
    }
}

#[derive(Debug, Clone)]
struct RightsizeState {
    cfg: RightsizeConfig,
    last_check: SimTime,
    occupancy_at_check: Vec<SimTime>,
    last_migration: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct HybridScheduler {
    cfg: HybridConfig,
    fifo_members: BTreeSet<CoreId>,
    fifo_queue: VecDeque<TaskId>,
    cfs: CfsGroup,
    rr_cursor: usize,
    handoffs: Vec<u64>,
    limit: SimTime,
    window: Option<DurationWindow>,
    rightsize: Option<RightsizeState>,
    trace: PolicyTrace,
}

impl HybridScheduler {
    pub fn new(cfg: HybridConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.total_cores();
        let window = cfg
            .adapt
            .map(|a| DurationWindow::new(a.window, a.percentile, cfg.limit))
            .transpose()?;
        let rightsize = cfg.rightsize.map(|r| RightsizeState {
            cfg: r,
            last_check: SimTime::ZERO,
            occupancy_at_check: vec![SimTime::ZERO; n],
            last_migration: None,
        });
        Ok(HybridScheduler {
            fifo_members: BTreeSet::new(),
            fifo_queue: VecDeque::new(),
            cfs: CfsGroup::new(cfg.slice, cfg.min_granularity, n),
            rr_cursor: 0,
            handoffs: vec![0; n],
            limit: cfg.limit,
            window,
            rightsize,
            trace: PolicyTrace::default(),
            cfg,
        })
    }

    /// The limit currently applied to FIFO-group runs.
    pub fn limit(&self) -> SimTime {
        self.limit
    }

    pub fn fifo_cores(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.fifo_members.iter().copied()
    }

    pub fn cfs_group(&self) -> &CfsGroup {
        &self.cfs
    }

    pub fn fifo_queue(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.fifo_queue.iter().copied()
    }

    /// Hand-offs received by each core, indexed by core id.
    pub fn handoffs(&self) -> &[u64] {
        &self.handoffs
    }

    pub fn group_of(&self, core: CoreId) -> GroupTag {
        if self.fifo_members.contains(&core) {
            GroupTag::Fifo
        } else {
            GroupTag::Cfs
        }
    }

    fn fifo_budget(&self) -> Budget {
        Budget::Limit(self.limit)
    }

    /// Runs queued FIFO work on every idle, unlocked FIFO core.
    fn fill_fifo(&mut self, m: &mut Machine) {
        if self.fifo_queue.is_empty() {
            return;
        }
        let budget = self.fifo_budget();
        for &core in &self.fifo_members {
            if m.is_idle(core) && !m.core(core).locked {
                match self.fifo_queue.pop_front() {
                    Some(task) => m.dispatch(core, task, budget),
                    None => break,
                }
            }
        }
    }

    fn run_next_fifo(&mut self, m: &mut Machine, core: CoreId) {
        if m.core(core).locked || !m.is_idle(core) {
            return;
        }
        if let Some(task) = self.fifo_queue.pop_front() {
            m.dispatch(core, task, self.fifo_budget());
        }
    }

    /// The next unlocked CFS core in round-robin order.
    fn next_rr_target(&mut self, m: &Machine) -> CoreId {
        let targets: Vec<CoreId> = self.cfs.members().filter(|&c| !m.core(c).locked).collect();
        assert!(!targets.is_empty(), "CFS group has no unlocked core");
        let core = targets[self.rr_cursor % targets.len()];
        self.rr_cursor = (self.rr_cursor + 1) % targets.len();
        core
    }

    /// Queues a CFS-phase task on `core` and gets the core working: an idle
    /// core starts its queue, and a core still finishing a FIFO-phase task
    /// (left over from a group change) returns that task to the FIFO queue.
    fn place_cfs(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        m.task_mut(task).group_tag = GroupTag::Cfs;
        self.cfs.enqueue(m, core, task);
        self.settle_cfs_core(m, core);
    }

    fn settle_cfs_core(&mut self, m: &mut Machine, core: CoreId) {
        if m.core(core).locked || !self.cfs.contains(core) {
            return;
        }
        if let Some(running) = m.running(core) {
            let queued = self.cfs.runqueue(core).is_some_and(|rq| !rq.is_empty());
            if m.task(running).group_tag == GroupTag::Fifo && queued && !m.finishing_now(core) {
                m.stop(core);
                m.count_preemption(core, running);
                self.fifo_queue.push_front(running);
                self.fill_fifo(m);
            }
        }
        self.cfs.kick(m, core);
    }

    fn hand_off(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        m.stop(core);
        m.count_limit_migration(core, task);
        let target = self.next_rr_target(m);
        self.handoffs[target.idx()] += 1;
        self.place_cfs(m, target, task);
    }

    fn record_completion(&mut self, m: &mut Machine, task: TaskId) {
        let Some(window) = &mut self.window else {
            return;
        };
        let t = m.task(task);
        let execution = t.completion.expect("completed") - t.first_run.expect("ran");
        window.push(execution);
        let limit = update_limit(window);
        if limit != self.limit {
            self.limit = limit;
            for c in 0..m.num_cores() as u32 {
                let core = CoreId(c);
                if m.running(core).is_some_and(|t| m.task(t).group_tag == GroupTag::Fifo) {
                    m.rebudget(core, Budget::Limit(limit));
                }
            }
        }
    }

    fn maybe_rightsize(&mut self, m: &mut Machine) {
        let Some(state) = &mut self.rightsize else {
            return;
        };
        let now = m.now();
        let elapsed = now - state.last_check;
        if elapsed < state.cfg.check_period {
            return;
        }
        let (mut fifo_sum, mut cfs_sum) = (0.0, 0.0);
        for c in 0..m.num_cores() {
            let core = CoreId(c as u32);
            let occ = m.occupancy(core);
            let busy = (occ - state.occupancy_at_check[c]).as_micros() as f64 / elapsed.as_micros() as f64;
            state.occupancy_at_check[c] = occ;
            if self.fifo_members.contains(&core) {
                fifo_sum += busy;
            } else {
                cfs_sum += busy;
            }
        }
        state.last_check = now;
        let sizes = crate::adapt::GroupSizes {
            fifo: self.fifo_members.len(),
            cfs: self.cfs.len(),
        };
        let fifo_avg = fifo_sum / sizes.fifo as f64;
        let cfs_avg = cfs_sum / sizes.cfs as f64;
        let cooldown_elapsed = state.last_migration.is_none_or(|t| now - t >= state.cfg.cooldown);
        let cfg = state.cfg;
        let decision = crate::adapt::rightsize_decision(fifo_avg, cfs_avg, &cfg, sizes, cooldown_elapsed);
        let moved = match decision {
            crate::adapt::RightsizeDecision::MoveToFifo => {
                let core = self.cfs_donor(m);
                self.migrate_core_cfs_to_fifo(m, core).map(|()| core)
            }
            crate::adapt::RightsizeDecision::MoveToCfs => {
                let core = self.fifo_donor(m);
                self.migrate_core_fifo_to_cfs(m, core).map(|()| core)
            }
            crate::adapt::RightsizeDecision::NoOp => return,
        };
        if moved.is_ok() {
            if let Some(state) = &mut self.rightsize {
                state.last_migration = Some(now);
            }
        }
    }

    /// CFS core to give up: the one with the least work, highest id on ties.
    fn cfs_donor(&self, m: &Machine) -> CoreId {
        self.cfs
            .members()
            .min_by_key(|&c| (self.cfs.load(m, c), std::cmp::Reverse(c)))
            .expect("CFS group is never empty")
    }

    /// FIFO core to give up: an idle one if possible, highest id on ties.
    fn fifo_donor(&self, m: &Machine) -> CoreId {
        *self
            .fifo_members
            .iter()
            .max_by_key(|&&c| (m.is_idle(c), c))
            .expect("FIFO group is never empty")
    }

    fn record_migration(&mut self, m: &Machine, core: CoreId, to: GroupTag) {
        self.trace.migrations.push(MigrationRecord {
            at: m.now(),
            core,
            to,
            fifo_cores: self.fifo_members.len(),
            cfs_cores: self.cfs.len(),
        });
    }
}

impl Scheduler for HybridScheduler {
    fn name(&self) -> String {
        "hybrid".to_string()
    }

    fn init(&mut self, m: &mut Machine) {
        assert_eq!(
            m.num_cores(),
            self.cfg.total_cores(),
            "hybrid split must cover every core"
        );
        for i in 0..m.num_cores() {
            let core = CoreId(i as u32);
            if i < self.cfg.fifo_cores {
                self.fifo_members.insert(core);
                m.set_group(core, GroupTag::Fifo);
            } else {
                self.cfs.add_core(core);
                m.set_group(core, GroupTag::Cfs);
            }
        }
    }

    fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
        m.task_mut(task).group_tag = GroupTag::Fifo;
        self.fifo_queue.push_back(task);
        self.fill_fifo(m);
    }

    fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.cfs.expire(m, core, task);
    }

    fn on_limit_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.hand_off(m, core, task);
        if self.fifo_members.contains(&core) {
            self.run_next_fifo(m, core);
        } else {
            self.settle_cfs_core(m, core);
        }
    }

    fn on_completion(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.record_completion(m, task);
        if self.fifo_members.contains(&core) {
            self.run_next_fifo(m, core);
        } else {
            self.cfs.kick(m, core);
        }
    }

    fn on_tick(&mut self, m: &mut Machine) {
        self.trace.limit_series.push((m.now(), self.limit));
        self.maybe_rightsize(m);
    }

    fn trace(&self) -> PolicyTrace {
        self.trace.clone()
    }
}

#[cfg(test)]
mod tests;

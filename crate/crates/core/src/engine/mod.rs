//! Deterministic discrete-event loop.
//!
//! The engine owns the clock, the cores and the task table. Policies plug in
//! through [`Scheduler`] and act on the [`Machine`] handed to every callback:
//! they dispatch tasks onto idle cores, stop running ones, and keep their own
//! run queues. Every dispatch arms exactly one event for its core
//! (completion, slice expiry or limit expiry); a per-core epoch invalidates
//! events armed by earlier dispatches.

mod event;

pub use event::{Event, EventKind, EventQueue};

use serde::{Deserialize, Serialize};

use crate::adapt::{sample_utilization, UtilizationSample};
use crate::model::{CoreId, GroupTag, Task, TaskId};
use crate::time::SimTime;
use crate::workload::WorkloadSpec;

/// How long a dispatch may run before its core gets an expiry event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Run to completion.
    Unbounded,
    /// Time slice; expiry is delivered as [`Scheduler::on_slice_expiry`].
    Slice(SimTime),
    /// Continuous-runtime limit; expiry is delivered as
    /// [`Scheduler::on_limit_expiry`].
    Limit(SimTime),
}

impl Budget {
    fn length(self) -> Option<SimTime> {
        match self {
            Budget::Unbounded => None,
            Budget::Slice(d) | Budget::Limit(d) if d.is_infinite() => None,
            Budget::Slice(d) | Budget::Limit(d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    task: TaskId,
    dispatched_at: SimTime,
    /// Later than `dispatched_at` by the context-switch overhead, if any.
    service_start: SimTime,
    remaining_at_start: SimTime,
    budget: Budget,
}

#[derive(Debug, Clone)]
pub struct Core {
    pub id: CoreId,
    pub group: GroupTag,
    pub running: Option<TaskId>,
    /// Task service delivered by this core (excludes switch overhead).
    pub busy_accumulator: SimTime,
    /// Involuntary switches away from a running task (slice or policy
    /// preemptions). FIFO-limit hand-offs are counted in `limit_migrations`.
    pub preemption_count: u64,
    pub limit_migrations: u64,
    pub switch_overhead: SimTime,
    pub locked: bool,
    epoch: u64,
    run: Option<Run>,
    occupied_total: SimTime,
    last_stop: Option<(TaskId, SimTime)>,
}

impl Core {
    fn new(id: CoreId) -> Self {
        Core {
            id,
            group: GroupTag::Main,
            running: None,
            busy_accumulator: SimTime::ZERO,
            preemption_count: 0,
            limit_migrations: 0,
            switch_overhead: SimTime::ZERO,
            locked: false,
            epoch: 0,
            run: None,
            occupied_total: SimTime::ZERO,
            last_stop: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_none()
    }
}

/// A task taken off a core before it finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stopped {
    pub task: TaskId,
    /// Service received during the run that was just cut short.
    pub ran: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchRecord {
    pub at: SimTime,
    pub core: CoreId,
    pub task: TaskId,
}

/// Simulation state visible to a scheduling policy.
pub struct Machine {
    queue: EventQueue,
    tasks: Vec<Task>,
    cores: Vec<Core>,
    ctx_switch_overhead: SimTime,
    dispatch_log: Option<Vec<DispatchRecord>>,
}

impl Machine {
    pub(crate) fn new(tasks: Vec<Task>, cores: usize, ctx_switch_overhead: SimTime, record_dispatches: bool) -> Self {
        Machine {
            queue: EventQueue::new(),
            tasks,
            cores: (0..cores as u32).map(|i| Core::new(CoreId(i))).collect(),
            ctx_switch_overhead,
            dispatch_log: record_dispatches.then(Vec::new),
        }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.idx()]
    }

    pub fn task_mut(&mut self, id: TaskId) -> &mut Task {
        &mut self.tasks[id.idx()]
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn core(&self, id: CoreId) -> &Core {
        &self.cores[id.idx()]
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn is_idle(&self, core: CoreId) -> bool {
        self.cores[core.idx()].running.is_none()
    }

    /// True when the task on `core` finishes at the current instant; its
    /// completion is still pending and it must not be stopped.
    pub fn finishing_now(&self, core: CoreId) -> bool {
        self.cores[core.idx()]
            .run
            .as_ref()
            .is_some_and(|r| r.service_start + r.remaining_at_start <= self.now())
    }

    pub fn running(&self, core: CoreId) -> Option<TaskId> {
        self.cores[core.idx()].running
    }

    pub fn set_group(&mut self, core: CoreId, group: GroupTag) {
        self.cores[core.idx()].group = group;
    }

    pub fn set_locked(&mut self, core: CoreId, locked: bool) {
        self.cores[core.idx()].locked = locked;
    }

    /// Time the core has been occupied (running a task or paying switch
    /// overhead) since the start of the simulation, up to now.
    pub fn occupancy(&self, core: CoreId) -> SimTime {
        let c = &self.cores[core.idx()];
        match c.run {
            Some(run) => c.occupied_total + (self.now() - run.dispatched_at),
            None => c.occupied_total,
        }
    }

    /// Service the running task had received before its current run began.
    pub fn served_before_run(&self, core: CoreId) -> Option<SimTime> {
        let run = self.cores[core.idx()].run?;
        Some(self.tasks[run.task.idx()].demand - run.remaining_at_start)
    }

    /// Puts `task` on an idle, unlocked core. A context-switch overhead is
    /// charged to the core when this dispatch replaces a different task that
    /// was stopped on the same core at this same instant.
    pub fn dispatch(&mut self, core: CoreId, task: TaskId, budget: Budget) {
        let now = self.now();
        let c = &mut self.cores[core.idx()];
        assert!(c.running.is_none(), "dispatch of {task} onto busy {core}");
        assert!(!c.locked, "dispatch of {task} onto locked {core}");
        let t = &mut self.tasks[task.idx()];
        assert!(t.completion.is_none() && t.remaining > SimTime::ZERO, "dispatch of finished {task}");
        assert!(t.arrival <= now, "dispatch of {task} before its arrival");

        let overhead = match c.last_stop.take() {
            Some((prev, at)) if at == now && prev != task => {
                c.switch_overhead += self.ctx_switch_overhead;
                self.ctx_switch_overhead
            }
            _ => SimTime::ZERO,
        };
        let service_start = now + overhead;
        t.first_run.get_or_insert(service_start);

        c.epoch += 1;
        c.running = Some(task);
        c.run = Some(Run {
            task,
            dispatched_at: now,
            service_start,
            remaining_at_start: t.remaining,
            budget,
        });
        if let Some(log) = &mut self.dispatch_log {
            log.push(DispatchRecord {
                at: service_start,
                core,
                task,
            });
        }
        self.arm(core);
    }

    /// Replaces the budget of the run in progress on `core`; the new budget is
    /// measured from the start of that run. An already exhausted budget
    /// expires immediately.
    pub fn rebudget(&mut self, core: CoreId, budget: Budget) {
        let c = &mut self.cores[core.idx()];
        let run = c.run.as_mut().expect("rebudget of an idle core");
        run.budget = budget;
        c.epoch += 1;
        self.arm(core);
    }

    fn arm(&mut self, core: CoreId) {
        let now = self.now();
        let c = &self.cores[core.idx()];
        let run = c.run.expect("arm of an idle core");
        let epoch = c.epoch;
        let task = run.task;
        let (at, kind) = match run.budget.length() {
            Some(len) if run.remaining_at_start > len => {
                let expiry = match run.budget {
                    Budget::Limit(_) => EventKind::LimitExpiry { core, task, epoch },
                    _ => EventKind::SliceExpiry { core, task, epoch },
                };
                ((run.service_start + len).max(now), expiry)
            }
            _ => (
                run.service_start + run.remaining_at_start,
                EventKind::Completion { core, task, epoch },
            ),
        };
        self.queue.push(at, kind).expect("armed event lies in the future");
    }

    /// Takes the running task off `core`, charging the service it received.
    pub fn stop(&mut self, core: CoreId) -> Stopped {
        let now = self.now();
        let c = &mut self.cores[core.idx()];
        let run = c.run.take().expect("stop of an idle core");
        let ran = now.saturating_sub(run.service_start);
        c.running = None;
        c.epoch += 1;
        c.busy_accumulator += ran;
        c.occupied_total += now - run.dispatched_at;
        c.last_stop = Some((run.task, now));
        let t = &mut self.tasks[run.task.idx()];
        t.remaining = run.remaining_at_start - ran;
        debug_assert!(t.remaining > SimTime::ZERO);
        Stopped { task: run.task, ran }
    }

    /// Records an involuntary preemption of `task` on `core`.
    pub fn count_preemption(&mut self, core: CoreId, task: TaskId) {
        self.cores[core.idx()].preemption_count += 1;
        self.tasks[task.idx()].preemptions += 1;
    }

    /// Records a FIFO-limit hand-off of `task` away from `core`.
    pub fn count_limit_migration(&mut self, core: CoreId, task: TaskId) {
        self.cores[core.idx()].limit_migrations += 1;
        self.tasks[task.idx()].preemptions += 1;
    }

    fn finish(&mut self, core: CoreId) -> TaskId {
        let now = self.now();
        let c = &mut self.cores[core.idx()];
        let run = c.run.take().expect("completion on an idle core");
        let ran = now - run.service_start;
        debug_assert_eq!(ran, run.remaining_at_start);
        c.running = None;
        c.epoch += 1;
        c.busy_accumulator += ran;
        c.occupied_total += now - run.dispatched_at;
        c.last_stop = None;
        let t = &mut self.tasks[run.task.idx()];
        t.remaining = SimTime::ZERO;
        t.completion = Some(now);
        run.task
    }

    fn is_current(&self, core: CoreId, task: TaskId, epoch: u64) -> bool {
        let c = &self.cores[core.idx()];
        c.epoch == epoch && c.running == Some(task)
    }
}

/// A scheduling policy driven by the engine.
pub trait Scheduler {
    fn name(&self) -> String;

    /// Called once before the first event, e.g. to assign core groups.
    fn init(&mut self, _m: &mut Machine) {}

    fn on_arrival(&mut self, m: &mut Machine, task: TaskId);

    fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId);

    fn on_limit_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.on_slice_expiry(m, core, task);
    }

    /// `task` has just finished on `core`, which is now idle.
    fn on_completion(&mut self, m: &mut Machine, core: CoreId, task: TaskId);

    fn on_tick(&mut self, _m: &mut Machine) {}

    /// Policy-specific series collected during the run.
    fn trace(&self) -> PolicyTrace {
        PolicyTrace::default()
    }
}

macro_rules! forward_scheduler {
    ($($ty:ty),*) => {$(
        impl<S: Scheduler + ?Sized> Scheduler for $ty {
            fn name(&self) -> String {
                (**self).name()
            }
            fn init(&mut self, m: &mut Machine) {
                (**self).init(m)
            }
            fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
                (**self).on_arrival(m, task)
            }
            fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
                (**self).on_slice_expiry(m, core, task)
            }
            fn on_limit_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
                (**self).on_limit_expiry(m, core, task)
            }
            fn on_completion(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
                (**self).on_completion(m, core, task)
            }
            fn on_tick(&mut self, m: &mut Machine) {
                (**self).on_tick(m)
            }
            fn trace(&self) -> PolicyTrace {
                (**self).trace()
            }
        }
    )*};
}

forward_scheduler!(Box<S>, &mut S);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub at: SimTime,
    pub core: CoreId,
    pub to: GroupTag,
    pub fifo_cores: usize,
    pub cfs_cores: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTrace {
    /// Preemption time limit in force, sampled on every monitor tick.
    pub limit_series: Vec<(SimTime, SimTime)>,
    pub migrations: Vec<MigrationRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cores: usize,
    pub ctx_switch_overhead: SimTime,
    /// Utilization sampling period; `None` disables monitor ticks.
    pub monitor_period: Option<SimTime>,
    /// Stop processing events after this instant; unfinished tasks are
    /// reported as censored.
    pub horizon: Option<SimTime>,
    pub record_dispatches: bool,
    /// Verify conservation and exclusivity invariants after every event.
    /// Linear in the task count per event, meant for tests.
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            cores: 50,
            ctx_switch_overhead: SimTime::ZERO,
            monitor_period: Some(SimTime::from_millis(100)),
            horizon: None,
            record_dispatches: false,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreSummary {
    pub id: CoreId,
    pub group: GroupTag,
    pub busy: SimTime,
    pub switch_overhead: SimTime,
    pub preemptions: u64,
    pub limit_migrations: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub policy: String,
    pub workload_hash: String,
    pub tasks: Vec<Task>,
    pub cores: Vec<CoreSummary>,
    pub util: Vec<UtilizationSample>,
    pub end_time: SimTime,
    /// Tasks unfinished when the horizon was reached (or the queue drained).
    pub censored: Vec<TaskId>,
    pub dispatches: Vec<DispatchRecord>,
    pub trace: PolicyTrace,
    pub invariant_violations: Vec<String>,
}

impl SimulationResult {
    pub fn completed(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| t.is_complete())
    }
}

/// Runs `workload` under `scheduler` until every task finishes or the horizon
/// is reached. The outcome is a pure function of the inputs.
pub fn run<S: Scheduler>(workload: &WorkloadSpec, mut scheduler: S, opts: &RunOptions) -> SimulationResult {
    assert!(opts.cores > 0, "simulation needs at least one core");
    let tasks = workload.to_tasks();
    let total = tasks.len();
    let mut m = Machine::new(tasks, opts.cores, opts.ctx_switch_overhead, opts.record_dispatches);
    scheduler.init(&mut m);

    let mut checker = opts.check_invariants.then(|| InvariantChecker::new(&m));
    let mut util = Vec::new();
    let mut completed = 0usize;
    let mut next_arrival = 0usize;
    if total > 0 {
        let at = m.tasks[0].arrival;
        m.queue.push(at, EventKind::Arrival(TaskId(0))).expect("first arrival");
        next_arrival = 1;
    }
    let mut last_tick = SimTime::ZERO;
    let mut last_occupancy = vec![SimTime::ZERO; opts.cores];
    if let (Some(period), true) = (opts.monitor_period, total > 0) {
        assert!(period > SimTime::ZERO, "monitor period must be positive");
        m.queue.push(period, EventKind::MonitorTick).expect("first tick");
    }

    while let Some(ev) = m.queue.peek().copied() {
        if opts.horizon.is_some_and(|h| ev.at > h) {
            break;
        }
        m.queue.pop();
        match ev.kind {
            EventKind::Arrival(id) => {
                if next_arrival < total {
                    let at = m.tasks[next_arrival].arrival;
                    m.queue
                        .push(at, EventKind::Arrival(TaskId(next_arrival as u32)))
                        .expect("arrivals are sorted");
                    next_arrival += 1;
                }
                scheduler.on_arrival(&mut m, id);
            }
            EventKind::Completion { core, task, epoch } => {
                if !m.is_current(core, task, epoch) {
                    continue;
                }
                m.finish(core);
                completed += 1;
                scheduler.on_completion(&mut m, core, task);
            }
            EventKind::SliceExpiry { core, task, epoch } => {
                if m.is_current(core, task, epoch) {
                    scheduler.on_slice_expiry(&mut m, core, task);
                }
            }
            EventKind::LimitExpiry { core, task, epoch } => {
                if m.is_current(core, task, epoch) {
                    scheduler.on_limit_expiry(&mut m, core, task);
                }
            }
            EventKind::MonitorTick => {
                let now = m.now();
                let busy: Vec<_> = m
                    .cores
                    .iter()
                    .map(|c| {
                        let occ = m.occupancy(c.id);
                        let delta = occ - last_occupancy[c.id.idx()];
                        last_occupancy[c.id.idx()] = occ;
                        (c.id, c.group, delta)
                    })
                    .collect();
                util.push(sample_utilization(busy, last_tick, now - last_tick).expect("positive tick period"));
                last_tick = now;
                scheduler.on_tick(&mut m);
                let period = opts.monitor_period.expect("ticks imply a period");
                if completed < total && !m.queue.is_empty() {
                    m.queue.push(now + period, EventKind::MonitorTick).expect("tick in the future");
                }
            }
        }
        if let Some(checker) = &mut checker {
            checker.check(&m);
        }
    }

    let end_time = m.now();
    let trace = scheduler.trace();
    let censored = m.tasks.iter().filter(|t| !t.is_complete()).map(|t| t.id).collect();
    let cores = m
        .cores
        .iter()
        .map(|c| CoreSummary {
            id: c.id,
            group: c.group,
            busy: c.busy_accumulator,
            switch_overhead: c.switch_overhead,
            preemptions: c.preemption_count,
            limit_migrations: c.limit_migrations,
        })
        .collect();
    SimulationResult {
        policy: scheduler.name(),
        workload_hash: workload.hash(),
        tasks: m.tasks,
        cores,
        util,
        end_time,
        censored,
        dispatches: m.dispatch_log.unwrap_or_default(),
        trace,
        invariant_violations: checker.map(|c| c.violations).unwrap_or_default(),
    }
}

struct InvariantChecker {
    last_clock: SimTime,
    vruntimes: Vec<SimTime>,
    violations: Vec<String>,
}

impl InvariantChecker {
    fn new(m: &Machine) -> Self {
        InvariantChecker {
            last_clock: SimTime::ZERO,
            vruntimes: m.tasks.iter().map(|t| t.vruntime).collect(),
            violations: Vec::new(),
        }
    }

    fn fail(&mut self, now: SimTime, msg: String) {
        if self.violations.len() < 32 {
            self.violations.push(format!("at {now}: {msg}"));
        }
    }

    fn check(&mut self, m: &Machine) {
        let now = m.now();
        if now < self.last_clock {
            self.fail(now, format!("clock went back from {}", self.last_clock));
        }
        self.last_clock = now;

        let busy: SimTime = m.cores.iter().map(|c| c.busy_accumulator).sum();
        let served: SimTime = m.tasks.iter().map(Task::served).sum();
        if busy != served {
            self.fail(now, format!("busy time {busy} != served time {served}"));
        }

        let mut on_core = vec![false; m.tasks.len()];
        for c in &m.cores {
            if let Some(t) = c.running {
                if std::mem::replace(&mut on_core[t.idx()], true) {
                    self.fail(now, format!("{t} runs on two cores"));
                }
                if m.tasks[t.idx()].is_complete() {
                    self.fail(now, format!("{t} is complete but still on {}", c.id));
                }
            }
            if c.occupied_total > now {
                self.fail(now, format!("{} occupied longer than elapsed time", c.id));
            }
        }

        for i in 0..m.tasks.len() {
            let t = &m.tasks[i];
            let (id, remaining, demand, vr) = (t.id, t.remaining, t.demand, t.vruntime);
            let (first_run, completion, arrival) = (t.first_run, t.completion, t.arrival);
            if remaining > demand {
                self.fail(now, format!("{id} remaining exceeds demand"));
            }
            if completion.is_some() != (remaining == SimTime::ZERO) {
                self.fail(now, format!("{id} completion/remaining mismatch"));
            }
            if first_run.is_some_and(|f| f < arrival) || completion.is_some_and(|c| Some(c) < first_run) {
                self.fail(now, format!("{id} timestamps out of order"));
            }
            if vr < self.vruntimes[i] {
                self.fail(now, format!("{id} vruntime decreased"));
            }
            self.vruntimes[i] = vr;
        }
    }
}

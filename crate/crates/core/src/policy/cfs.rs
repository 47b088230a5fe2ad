use std::collections::BTreeSet;

use crate::engine::{Budget, Machine, Scheduler};
use crate::model::{CoreId, TaskId};
use crate::time::SimTime;

/// Per-core run queue ordered by virtual runtime, ties broken by enqueue order.
#[derive(Debug, Clone, Default)]
pub struct CfsRunqueue {
    tree: BTreeSet<(SimTime, u64, TaskId)>,
    min_vruntime: SimTime,
}

impl CfsRunqueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// Never decreases over the life of the queue.
    pub fn min_vruntime(&self) -> SimTime {
        self.min_vruntime
    }

    /// Inserts a task, lifting its vruntime to the queue minimum so that a
    /// newcomer cannot monopolise the core. Returns the vruntime used.
    pub fn enqueue(&mut self, task: TaskId, vruntime: SimTime, seq: u64) -> SimTime {
        let vr = vruntime.max(self.min_vruntime);
        self.tree.insert((vr, seq, task));
        vr
    }

    /// Removes the task with the smallest vruntime.
    pub fn pick(&mut self) -> Option<TaskId> {
        let (vr, _, task) = self.tree.pop_first()?;
        self.min_vruntime = self.min_vruntime.max(vr);
        Some(task)
    }

    /// Removes the task with the largest vruntime, the cheapest one to move.
    pub fn pop_last(&mut self) -> Option<TaskId> {
        self.tree.pop_last().map(|(_, _, t)| t)
    }

    /// Empties the queue, smallest vruntime first.
    pub fn drain(&mut self) -> Vec<TaskId> {
        std::mem::take(&mut self.tree).into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tree.iter().map(|&(_, _, t)| t)
    }
}

/// A set of cores each running its own CFS run queue.
///
/// Arrivals go to the least loaded member (fewest runnable tasks, lowest id
/// on ties). Tasks never move between queues on their own; only core
/// migrations redistribute them.
#[derive(Debug, Clone)]
pub struct CfsGroup {
    slice: SimTime,
    min_granularity: SimTime,
    rqs: Vec<Option<CfsRunqueue>>,
    seq: u64,
}

impl CfsGroup {
    pub fn new(slice: SimTime, min_granularity: SimTime, num_cores: usize) -> Self {
        CfsGroup {
            slice,
            min_granularity,
            rqs: vec![None; num_cores],
            seq: 0,
        }
    }

    /// `max(slice / nr_running, min_granularity)`.
    pub fn quantum(&self, nr_running: usize) -> SimTime {
        let n = nr_running.max(1) as u64;
        SimTime::from_micros(self.slice.as_micros() / n).max(self.min_granularity)
    }

    pub fn contains(&self, core: CoreId) -> bool {
        self.rqs[core.idx()].is_some()
    }

    pub fn members(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.rqs
            .iter()
            .enumerate()
            .filter(|(_, rq)| rq.is_some())
            .map(|(i, _)| CoreId(i as u32))
    }

    pub fn len(&self) -> usize {
        self.rqs.iter().filter(|rq| rq.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn runqueue(&self, core: CoreId) -> Option<&CfsRunqueue> {
        self.rqs[core.idx()].as_ref()
    }

    pub fn add_core(&mut self, core: CoreId) {
        let slot = &mut self.rqs[core.idx()];
        assert!(slot.is_none(), "{core} already in the group");
        *slot = Some(CfsRunqueue::new());
    }

    /// Takes `core` out of the group and returns the tasks that were waiting
    /// on it, smallest vruntime first.
    pub fn remove_core(&mut self, core: CoreId) -> Vec<TaskId> {
        self.rqs[core.idx()]
            .take()
            .map(|mut rq| rq.drain())
            .unwrap_or_default()
    }

    /// Waiting tasks plus the running one.
    pub fn load(&self, m: &Machine, core: CoreId) -> usize {
        self.rq(core).len() + usize::from(m.running(core).is_some())
    }

    /// Total queued (not running) tasks across the group.
    pub fn queued(&self) -> usize {
        self.rqs.iter().flatten().map(CfsRunqueue::len).sum()
    }

    pub fn least_loaded(&self, m: &Machine) -> Option<CoreId> {
        self.members()
            .filter(|&c| !m.core(c).locked)
            .min_by_key(|&c| (self.load(m, c), c))
    }

    /// Queues `task` on `core` and starts it if the core is idle.
    pub fn place(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.enqueue(m, core, task);
        self.kick(m, core);
    }

    /// Queues `task` on `core` without starting anything.
    pub fn enqueue(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.seq += 1;
        let seq = self.seq;
        let vr = m.task(task).vruntime;
        let rq = self.rqs[core.idx()].as_mut().expect("enqueue on a non-member core");
        m.task_mut(task).vruntime = rq.enqueue(task, vr, seq);
    }

    /// Queues `task` on the unlocked member with the shortest queue (lowest
    /// id on ties) and returns that core. Nothing is started.
    pub fn enqueue_shortest(&mut self, m: &mut Machine, task: TaskId) -> CoreId {
        let core = self
            .members()
            .filter(|&c| !m.core(c).locked)
            .min_by_key(|&c| (self.rq(c).len(), c))
            .expect("an unlocked member");
        self.enqueue(m, core, task);
        core
    }

    /// Moves waiting tasks from the longest to the shortest queue among
    /// unlocked members until their lengths differ by at most one. The
    /// highest-vruntime task moves each time. Returns the cores that
    /// received tasks, nothing is started.
    pub fn rebalance(&mut self, m: &mut Machine) -> Vec<CoreId> {
        let mut received = Vec::new();
        loop {
            let unlocked = || self.members().filter(|&c| !m.core(c).locked);
            let Some(long) = unlocked().max_by_key(|&c| (self.rq(c).len(), std::cmp::Reverse(c))) else {
                break;
            };
            let short = unlocked().min_by_key(|&c| (self.rq(c).len(), c)).expect("non-empty");
            if self.rq(long).len() <= self.rq(short).len() + 1 {
                break;
            }
            let task = self.rqs[long.idx()].as_mut().expect("member core").pop_last().expect("non-empty");
            self.enqueue(m, short, task);
            if !received.contains(&short) {
                received.push(short);
            }
        }
        received
    }

    /// Starts the next task on `core` if it is an idle, unlocked member.
    pub fn kick(&mut self, m: &mut Machine, core: CoreId) {
        if self.contains(core) && m.is_idle(core) && !m.core(core).locked {
            self.dispatch_next(m, core);
        }
    }

    /// The running task on `core` used up its quantum.
    pub fn expire(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        let stopped = m.stop(core);
        m.task_mut(task).vruntime += stopped.ran;
        self.enqueue(m, core, task);
        let next = self.rqs[core.idx()].as_mut().expect("member core").pick().expect("just enqueued");
        if next != task {
            m.count_preemption(core, task);
        }
        let quantum = self.quantum(self.rq(core).len() + 1);
        m.dispatch(core, next, Budget::Slice(quantum));
    }

    fn rq(&self, core: CoreId) -> &CfsRunqueue {
        self.rqs[core.idx()].as_ref().expect("member core")
    }

    fn dispatch_next(&mut self, m: &mut Machine, core: CoreId) {
        let rq = self.rqs[core.idx()].as_mut().expect("member core");
        if let Some(next) = rq.pick() {
            let quantum = self.quantum(self.rq(core).len() + 1);
            m.dispatch(core, next, Budget::Slice(quantum));
        }
    }
}

/// Every core runs CFS.
#[derive(Debug, Clone)]
pub struct CfsScheduler {
    group: Option<CfsGroup>,
    slice: SimTime,
    min_granularity: SimTime,
}

impl CfsScheduler {
    pub fn new(slice: SimTime, min_granularity: SimTime) -> Self {
        CfsScheduler {
            group: None,
            slice,
            min_granularity,
        }
    }

    fn group(&mut self) -> &mut CfsGroup {
        self.group.as_mut().expect("init runs first")
    }
}

impl Scheduler for CfsScheduler {
    fn name(&self) -> String {
        "cfs".to_string()
    }

    fn init(&mut self, m: &mut Machine) {
        let mut g = CfsGroup::new(self.slice, self.min_granularity, m.num_cores());
        (0..m.num_cores() as u32).for_each(|i| g.add_core(CoreId(i)));
        self.group = Some(g);
    }

    fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
        let g = self.group();
        let core = g.least_loaded(m).expect("at least one core");
        g.place(m, core, task);
    }

    fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.group().expire(m, core, task);
    }

    fn on_completion(&mut self, m: &mut Machine, core: CoreId, _task: TaskId) {
        self.group().kick(m, core);
    }
}

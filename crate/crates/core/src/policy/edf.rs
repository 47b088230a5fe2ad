use std::collections::BTreeSet;

use crate::engine::{Budget, Machine, Scheduler};
use crate::model::{CoreId, TaskId};
use crate::time::SimTime;

/// Preemptive earliest-deadline-first over one global queue, with
/// `deadline = arrival + offset`.
///
/// An arrival whose deadline is strictly earlier than that of some running
/// task, with no idle core available, preempts the running task holding the
/// latest deadline.
#[derive(Debug, Clone)]
pub struct EdfScheduler {
    offset: SimTime,
    queue: BTreeSet<(SimTime, TaskId)>,
    /// Deadline of every task seen so far, indexed by task id.
    deadlines: Vec<SimTime>,
}

impl EdfScheduler {
    pub fn new(deadline_offset: SimTime) -> Self {
        EdfScheduler {
            offset: deadline_offset,
            queue: BTreeSet::new(),
            deadlines: Vec::new(),
        }
    }

    fn deadline(&self, task: TaskId) -> SimTime {
        self.deadlines[task.idx()]
    }

    fn run_next(&mut self, m: &mut Machine, core: CoreId) {
        if let Some((_, next)) = self.queue.pop_first() {
            m.dispatch(core, next, Budget::Unbounded);
        }
    }
}

impl Scheduler for EdfScheduler {
    fn name(&self) -> String {
        "edf".to_string()
    }

    fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
        let deadline = m.task(task).arrival.saturating_add(self.offset);
        if self.deadlines.len() <= task.idx() {
            self.deadlines.resize(task.idx() + 1, SimTime::INFINITY);
        }
        self.deadlines[task.idx()] = deadline;
        self.queue.insert((deadline, task));
        let idle = (0..m.num_cores() as u32)
            .map(CoreId)
            .find(|&c| m.is_idle(c) && !m.core(c).locked);
        if let Some(core) = idle {
            self.run_next(m, core);
            return;
        }
        let victim = (0..m.num_cores() as u32)
            .map(CoreId)
            .filter_map(|c| m.running(c).map(|t| (self.deadline(t), t, c)))
            .max();
        if let Some((victim_deadline, victim, core)) = victim {
            if deadline < victim_deadline {
                m.stop(core);
                m.count_preemption(core, victim);
                self.queue.insert((victim_deadline, victim));
                self.run_next(m, core);
            }
        }
    }

    fn on_slice_expiry(&mut self, _m: &mut Machine, _core: CoreId, _task: TaskId) {
        unreachable!("EDF dispatches without a slice")
    }

    fn on_completion(&mut self, m: &mut Machine, core: CoreId, _task: TaskId) {
        self.run_next(m, core);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, RunOptions, Scheduler};
    use crate::workload::{WorkloadEntry, WorkloadSpec};

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    /// EDF whose offset changes between arrivals, to exercise the preemption
    /// path that a uniform offset never triggers.
    struct Explicit {
        inner: EdfScheduler,
    }

    impl Scheduler for Explicit {
        fn name(&self) -> String {
            "edf-explicit".into()
        }
        fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
            // Shrink the offset for the second task: deadline 40 ms vs 100 ms.
            self.inner.offset = if task == TaskId(0) { ms(100) } else { ms(30) };
            self.inner.on_arrival(m, task);
        }
        fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
            self.inner.on_slice_expiry(m, core, task)
        }
        fn on_completion(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
            self.inner.on_completion(m, core, task)
        }
    }

    #[test]
    fn closer_deadline_preempts() {
        let spec = WorkloadSpec::new(vec![
            WorkloadEntry::new(ms(0), ms(50), 128),
            WorkloadEntry::new(ms(10), ms(5), 128),
        ]);
        let opts = RunOptions {
            cores: 1,
            record_dispatches: true,
            check_invariants: true,
            ..Default::default()
        };
        let r = run(&spec, Explicit { inner: EdfScheduler::new(ms(100)) }, &opts);
        let order: Vec<_> = r.dispatches.iter().map(|d| (d.task.0, d.at)).collect();
        assert_eq!(order, vec![(0, ms(0)), (1, ms(10)), (0, ms(15))]);
        assert_eq!(r.tasks[0].preemptions, 1);
        assert_eq!(r.tasks[0].completion, Some(ms(55)));
        assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    }

    #[test]
    fn uniform_offset_keeps_arrival_order() {
        let spec = WorkloadSpec::new(vec![
            WorkloadEntry::new(ms(0), ms(50), 128),
            WorkloadEntry::new(ms(1), ms(5), 128),
            WorkloadEntry::new(ms(1), ms(5), 128),
        ]);
        let opts = RunOptions {
            cores: 1,
            record_dispatches: true,
            ..Default::default()
        };
        let r = run(&spec, EdfScheduler::new(ms(1_000)), &opts);
        let order: Vec<_> = r.dispatches.iter().map(|d| d.task.0).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(r.tasks.iter().all(|t| t.preemptions == 0));
    }
}

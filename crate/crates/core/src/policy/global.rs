use std::collections::VecDeque;

use crate::engine::{Budget, Machine, Scheduler};
use crate::model::{CoreId, TaskId};
use crate::time::SimTime;

/// One arrival-ordered queue shared by every core.
///
/// Covers plain FIFO (run to completion), FIFO with a preemption limit, and
/// round robin. The last two differ only in their quantum: whenever a task
/// uses up its quantum it goes to the back of the queue and counts one
/// preemption, even if it is the only task waiting.
#[derive(Debug, Clone)]
pub struct GlobalQueueScheduler {
    label: &'static str,
    quantum: Option<SimTime>,
    queue: VecDeque<TaskId>,
}

impl GlobalQueueScheduler {
    pub fn fifo() -> Self {
        GlobalQueueScheduler {
            label: "fifo",
            quantum: None,
            queue: VecDeque::new(),
        }
    }

    pub fn fifo_preempt(limit: SimTime) -> Self {
        GlobalQueueScheduler {
            label: "fifo_preempt",
            quantum: (!limit.is_infinite()).then_some(limit),
            queue: VecDeque::new(),
        }
    }

    pub fn round_robin(slice: SimTime) -> Self {
        GlobalQueueScheduler {
            label: "rr",
            quantum: (!slice.is_infinite()).then_some(slice),
            queue: VecDeque::new(),
        }
    }

    pub fn queued(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.queue.iter().copied()
    }

    fn budget(&self) -> Budget {
        self.quantum.map_or(Budget::Unbounded, Budget::Slice)
    }

    fn run_next(&mut self, m: &mut Machine, core: CoreId) {
        if let Some(next) = self.queue.pop_front() {
            m.dispatch(core, next, self.budget());
        }
    }
}

impl Scheduler for GlobalQueueScheduler {
    fn name(&self) -> String {
        self.label.to_string()
    }

    fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
        self.queue.push_back(task);
        for i in 0..m.num_cores() {
            let core = CoreId(i as u32);
            if self.queue.is_empty() {
                break;
            }
            if m.is_idle(core) && !m.core(core).locked {
                self.run_next(m, core);
            }
        }
    }

    fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        m.stop(core);
        m.count_preemption(core, task);
        self.queue.push_back(task);
        self.run_next(m, core);
    }

    fn on_completion(&mut self, m: &mut Machine, core: CoreId, _task: TaskId) {
        self.run_next(m, core);
    }
}

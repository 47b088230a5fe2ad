//! Timestamped events and the (time, sequence)-ordered queue that drives the
//! simulation clock.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::model::{CoreId, TaskId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival(TaskId),
    /// A time slice ran out. `epoch` identifies the dispatch that armed it.
    SliceExpiry { core: CoreId, task: TaskId, epoch: u64 },
    /// A task used up its continuous-runtime budget on a FIFO core.
    LimitExpiry { core: CoreId, task: TaskId, epoch: u64 },
    Completion { core: CoreId, task: TaskId, epoch: u64 },
    MonitorTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-heap of events keyed by `(at, seq)`. Popping advances the clock.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    clock: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `kind` at `at`, returning its sequence number. Scheduling into
    /// the past means a scheduler bug, so it is reported as an error.
    pub fn push(&mut self, at: SimTime, kind: EventKind) -> Result<u64> {
        if at < self.clock {
            return Err(Error::PastTimestamp { at, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { at, seq, kind }));
        Ok(seq)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|r| &r.0)
    }

    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.at >= self.clock);
        self.clock = ev.at;
        Some(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.push(ms(5), EventKind::MonitorTick).unwrap();
        q.push(ms(3), EventKind::Arrival(TaskId(0))).unwrap();
        assert_eq!(q.pop().unwrap().at, ms(3));
        assert_eq!(q.now(), ms(3));
        assert_eq!(q.pop().unwrap().at, ms(5));
        assert!(q.pop().is_none());
    }

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..10 {
            q.push(ms(7), EventKind::Arrival(TaskId(i))).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        let expected: Vec<_> = (0..10).map(|i| EventKind::Arrival(TaskId(i))).collect();
        assert_eq!(order, expected);
    }

    #[test]
    fn rejects_past_timestamps() {
        let mut q = EventQueue::new();
        q.push(ms(10), EventKind::MonitorTick).unwrap();
        q.pop();
        let err = q.push(ms(9), EventKind::MonitorTick).unwrap_err();
        assert!(matches!(err, Error::PastTimestamp { .. }));
        // Same instant is fine.
        q.push(ms(10), EventKind::MonitorTick).unwrap();
    }
}

//! Moving a core between the FIFO and CFS groups.

use super::HybridScheduler;
use crate::engine::Machine;
use crate::error::{Error, Result};
use crate::model::{CoreId, GroupTag};

impl HybridScheduler {
    fn min_group_size(&self) -> usize {
        self.rightsize.as_ref().map_or(1, |r| r.cfg.min_group_size)
    }

    /// Turns a CFS core into a FIFO core.
    ///
    /// The core is locked, its running task moves to the least loaded other
    /// CFS core, its queue is spread over the remaining CFS cores (leaving
    /// queue lengths within one of each other), and it joins the FIFO group
    /// before being unlocked to pull from the global queue.
    pub fn migrate_core_cfs_to_fifo(&mut self, m: &mut Machine, core: CoreId) -> Result<()> {
        if !self.cfs.contains(core) {
            return Err(Error::MigrationRefused { core, reason: "not in the CFS group" });
        }
        if self.cfs.len() <= self.min_group_size() {
            return Err(Error::MigrationRefused { core, reason: "CFS group at its minimum size" });
        }

        m.set_locked(core, true);

        // A task finishing right now completes where it is.
        if let Some(task) = m.running(core).filter(|_| !m.finishing_now(core)) {
            let stopped = m.stop(core);
            m.count_preemption(core, task);
            if m.task(task).group_tag == GroupTag::Fifo {
                // Left over from an earlier group change; it still belongs to
                // the FIFO group.
                self.fifo_queue.push_front(task);
            } else {
                m.task_mut(task).vruntime += stopped.ran;
                let target = self.cfs.least_loaded(m).expect("another CFS core");
                self.cfs.enqueue(m, target, task);
            }
        }

        let drained = self.cfs.remove_core(core);
        for task in drained {
            self.cfs.enqueue_shortest(m, task);
        }
        self.cfs.rebalance(m);

        self.fifo_members.insert(core);
        m.set_group(core, GroupTag::Fifo);
        self.record_migration(m, core, GroupTag::Fifo);

        m.set_locked(core, false);
        let members: Vec<CoreId> = self.cfs.members().collect();
        for c in members {
            self.settle_cfs_core(m, c);
        }
        self.fill_fifo(m);
        Ok(())
    }

    /// Turns a FIFO core into a CFS core.
    ///
    /// The core leaves the FIFO group, gets an empty run queue and receives
    /// waiting tasks from the other CFS queues until all queue lengths are
    /// within one of each other. A FIFO task still running there keeps the
    /// core until CFS work is queued on it, then returns to the head of the
    /// global queue.
    pub fn migrate_core_fifo_to_cfs(&mut self, m: &mut Machine, core: CoreId) -> Result<()> {
        if !self.fifo_members.contains(&core) {
            return Err(Error::MigrationRefused { core, reason: "not in the FIFO group" });
        }
        if self.fifo_members.len() <= self.min_group_size() {
            return Err(Error::MigrationRefused { core, reason: "FIFO group at its minimum size" });
        }

        m.set_locked(core, true);
        self.fifo_members.remove(&core);
        self.cfs.add_core(core);
        m.set_group(core, GroupTag::Cfs);
        m.set_locked(core, false);

        self.cfs.rebalance(m);
        self.record_migration(m, core, GroupTag::Cfs);
        let members: Vec<CoreId> = self.cfs.members().collect();
        for c in members {
            self.settle_cfs_core(m, c);
        }
        Ok(())
    }

    /// Locks or unlocks a core; locked cores receive no arrivals or
    /// hand-offs and start nothing new.
    pub fn set_core_locked(&mut self, m: &mut Machine, core: CoreId, locked: bool) {
        m.set_locked(core, locked);
        if !locked {
            if self.fifo_members.contains(&core) {
                self.run_next_fifo(m, core);
            } else {
                self.settle_cfs_core(m, core);
            }
        }
    }
}

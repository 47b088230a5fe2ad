use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapt::RightsizeConfig;
use crate::engine::{run, RunOptions, SimulationResult};
use crate::model::Task;
use crate::policy::GlobalQueueScheduler;
use crate::workload::{WorkloadEntry, WorkloadSpec};

fn ms(v: u64) -> SimTime {
    SimTime::from_millis(v)
}

fn cfg(fifo: usize, cfs: usize, limit: SimTime) -> HybridConfig {
    HybridConfig {
        fifo_cores: fifo,
        cfs_cores: cfs,
        limit,
        ..Default::default()
    }
}

fn opts(cores: usize) -> RunOptions {
    RunOptions {
        cores,
        record_dispatches: true,
        check_invariants: true,
        ..Default::default()
    }
}

fn spec(entries: &[(u64, u64)]) -> WorkloadSpec {
    WorkloadSpec::new(entries.iter().map(|&(i, d)| WorkloadEntry::new(ms(i), ms(d), 128)).collect())
}

fn run_hybrid(w: &WorkloadSpec, c: HybridConfig) -> SimulationResult {
    let cores = c.total_cores();
    let r = run(w, HybridScheduler::new(c).unwrap(), &opts(cores));
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    r
}

#[test]
fn short_task_finishes_in_fifo_untouched() {
    let r = run_hybrid(&spec(&[(3, 50)]), cfg(1, 1, ms(100)));
    let t = &r.tasks[0];
    assert_eq!((t.first_run, t.completion, t.preemptions), (Some(ms(3)), Some(ms(53)), 0));
    assert_eq!(r.dispatches[0].core, CoreId(0));
}

#[test]
fn arrivals_never_go_to_cfs_cores() {
    // One FIFO core busy for 100 ms; the second task waits although the CFS
    // core sits idle.
    let r = run_hybrid(&spec(&[(0, 100), (1, 10)]), cfg(1, 1, ms(1_000)));
    assert_eq!(r.tasks[1].first_run, Some(ms(100)));
    assert_eq!(r.cores[1].busy, SimTime::ZERO);
}

#[test]
fn limit_hands_task_to_cfs() {
    let r = run_hybrid(&spec(&[(0, 300)]), cfg(1, 1, ms(100)));
    let t = &r.tasks[0];
    assert_eq!(t.completion, Some(ms(300)));
    assert_eq!(t.preemptions, 1);
    assert_eq!(r.cores[0].limit_migrations, 1);
    assert_eq!(r.cores[0].preemptions, 0);
    assert_eq!((r.cores[0].busy, r.cores[1].busy), (ms(100), ms(200)));
    assert_eq!(r.dispatches[1].core, CoreId(1));
    assert_eq!(r.dispatches[1].at, ms(100));
}

#[test]
fn completion_wins_tie_with_limit() {
    let r = run_hybrid(&spec(&[(0, 100)]), cfg(1, 1, ms(100)));
    assert_eq!(r.tasks[0].preemptions, 0);
    assert_eq!(r.cores[0].limit_migrations, 0);
    assert_eq!(r.cores[1].busy, SimTime::ZERO);
}

#[test]
fn handoffs_round_robin_over_cfs_cores() {
    let w = spec(&[(0, 500); 5]);
    let r = run_hybrid(&w, cfg(1, 3, ms(100)));
    let first_cfs_core: Vec<u32> = (0..5)
        .map(|i| {
            r.dispatches
                .iter()
                .find(|d| d.task == TaskId(i) && d.core != CoreId(0))
                .unwrap()
                .core
                .0
        })
        .collect();
    assert_eq!(first_cfs_core, vec![1, 2, 3, 1, 2]);
    assert!(r.tasks.iter().all(|t| t.preemptions >= 1));
}

#[test]
fn handoff_counts_stay_balanced() {
    // Drive the scheduler by hand to read its counters afterwards.
    let c = cfg(2, 3, ms(10));
    let mut s = HybridScheduler::new(c).unwrap();
    let tasks: Vec<Task> = (0..40).map(|i| Task::new(TaskId(i), SimTime::ZERO, ms(50), 128)).collect();
    let mut m = Machine::new(tasks, 5, SimTime::ZERO, false);
    s.init(&mut m);
    for i in 0..40 {
        s.on_arrival(&mut m, TaskId(i));
    }
    for i in 0..40 {
        // Each arrival sits in the FIFO queue or runs on a FIFO core; expire
        // whichever FIFO core holds it.
        let holder = s.fifo_cores().find(|&c| m.running(c) == Some(TaskId(i)));
        if let Some(core) = holder {
            s.on_limit_expiry(&mut m, core, TaskId(i));
        }
    }
    let counts: Vec<u64> = s.cfs_group().members().map(|c| s.handoffs()[c.idx()]).collect();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "{counts:?}");
    assert!(counts.iter().sum::<u64>() > 0);
}

#[test]
fn infinite_limit_is_fifo_on_fifo_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.random_range(1..25);
        let w = WorkloadSpec::new(
            (0..n)
                .map(|_| WorkloadEntry::new(ms(rng.random_range(0..30)), ms(rng.random_range(1..200)), 128))
                .collect(),
        );
        let h = run_hybrid(&w, cfg(3, 2, SimTime::INFINITY));
        let f = run(&w, GlobalQueueScheduler::fifo(), &opts(3));
        let key = |r: &SimulationResult| r.tasks.iter().map(|t| (t.first_run, t.completion)).collect::<Vec<_>>();
        assert_eq!(key(&h), key(&f));
        assert!(h.cores[3..].iter().all(|c| c.busy == SimTime::ZERO));
    }
}

#[test]
fn fifo_cores_record_no_slice_preemptions() {
    let w = spec(&[(0, 250), (0, 40), (5, 300), (0, 80), (10, 500), (0, 20), (3, 120)]);
    let r = run_hybrid(&w, cfg(2, 2, ms(100)));
    assert!(r.cores[..2].iter().all(|c| c.preemptions == 0));
    assert!(r.cores[..2].iter().map(|c| c.limit_migrations).sum::<u64>() > 0);
}

#[test]
fn adaptive_limit_follows_window() {
    // Sequential 10..40 ms tasks on one FIFO core; p50 of [10,20,30,40] is 20.
    let c = HybridConfig {
        adapt: Some(AdaptConfig {
            window: 4,
            percentile: Percent::P50,
        }),
        ..cfg(1, 1, ms(1_633))
    };
    let w = spec(&[(0, 10), (10, 20), (20, 30), (30, 40), (100, 35)]);
    let mut o = opts(2);
    o.monitor_period = Some(ms(50));
    let r = run(&w, HybridScheduler::new(c).unwrap(), &o);
    let at = |t: u64| r.trace.limit_series.iter().find(|(at, _)| *at == ms(t)).map(|x| x.1);
    assert_eq!(at(50), Some(ms(10)));
    assert_eq!(at(150), Some(ms(20)));
    // The last task (35 ms) exceeds the 20 ms limit and is handed off.
    assert_eq!(r.tasks[4].preemptions, 1);
}

#[test]
fn lowering_the_limit_rebudgets_running_fifo_task() {
    // t0 (5 ms) completes at 5 and drops the p100 limit to 5 ms; t1 has
    // already run 5 ms on the other FIFO core and expires immediately.
    let c = HybridConfig {
        adapt: Some(AdaptConfig {
            window: 10,
            percentile: Percent::MAX,
        }),
        ..cfg(2, 1, ms(1_633))
    };
    let r = run_hybrid(&spec(&[(0, 5), (0, 50)]), c);
    assert_eq!(r.tasks[1].preemptions, 1);
    assert_eq!(r.cores[1].limit_migrations, 1);
    assert_eq!(r.cores[1].busy, ms(5));
}

fn machine(n_tasks: u32, cores: usize) -> Machine {
    let tasks = (0..n_tasks).map(|i| Task::new(TaskId(i), SimTime::ZERO, ms(100), 128)).collect();
    Machine::new(tasks, cores, SimTime::ZERO, false)
}

fn loads(s: &HybridScheduler, m: &Machine) -> Vec<usize> {
    s.cfs.members().map(|c| s.cfs.load(m, c)).collect()
}

fn tag_cfs(m: &mut Machine, ids: impl IntoIterator<Item = u32>) {
    for i in ids {
        m.task_mut(TaskId(i)).group_tag = GroupTag::Cfs;
    }
}

#[test]
fn fifo_to_cfs_rebalances_queues() {
    // Cores 0,1 FIFO; 2,3 CFS with 4 and 2 queued tasks.
    let mut s = HybridScheduler::new(cfg(2, 2, ms(100))).unwrap();
    let mut m = machine(6, 4);
    s.init(&mut m);
    tag_cfs(&mut m, 0..6);
    (0..4).for_each(|i| s.cfs.enqueue(&mut m, CoreId(2), TaskId(i)));
    (4..6).for_each(|i| s.cfs.enqueue(&mut m, CoreId(3), TaskId(i)));
    s.migrate_core_fifo_to_cfs(&mut m, CoreId(1)).unwrap();
    assert_eq!(s.cfs.members().collect::<Vec<_>>(), vec![CoreId(1), CoreId(2), CoreId(3)]);
    assert_eq!(loads(&s, &m), vec![2, 2, 2]);
    assert_eq!(m.core(CoreId(1)).group, GroupTag::Cfs);
    // Every core started one task.
    assert!(s.cfs.members().all(|c| m.running(c).is_some()));
}

#[test]
fn fifo_to_cfs_with_nothing_queued() {
    let mut s = HybridScheduler::new(cfg(2, 1, ms(100))).unwrap();
    let mut m = machine(0, 3);
    s.init(&mut m);
    s.migrate_core_fifo_to_cfs(&mut m, CoreId(1)).unwrap();
    assert_eq!(loads(&s, &m), vec![0, 0]);
    assert!(matches!(
        s.migrate_core_fifo_to_cfs(&mut m, CoreId(0)),
        Err(Error::MigrationRefused { .. })
    ));
}

#[test]
fn fifo_task_on_new_cfs_core_yields_when_cfs_work_arrives() {
    let mut s = HybridScheduler::new(cfg(2, 1, ms(1_000))).unwrap();
    let mut m = machine(2, 3);
    s.init(&mut m);
    s.on_arrival(&mut m, TaskId(0));
    s.on_arrival(&mut m, TaskId(1));
    assert_eq!(m.running(CoreId(1)), Some(TaskId(1)));
    s.migrate_core_fifo_to_cfs(&mut m, CoreId(1)).unwrap();
    // Nothing queued for CFS yet: the FIFO task keeps the core.
    assert_eq!(m.running(CoreId(1)), Some(TaskId(1)));
    // t0 is handed off and lands on core 1 (round robin over {1, 2}).
    s.on_limit_expiry(&mut m, CoreId(0), TaskId(0));
    assert_eq!(m.running(CoreId(1)), Some(TaskId(0)));
    // The evicted FIFO task went back to the FIFO group's only core.
    assert_eq!(m.running(CoreId(0)), Some(TaskId(1)));
}

#[test]
fn cfs_to_fifo_redistributes_running_and_queued() {
    // Core 0 FIFO; cores 1..=3 CFS. Core 1 runs t0 with t1, t2 queued.
    let mut s = HybridScheduler::new(cfg(1, 3, ms(100))).unwrap();
    let mut m = machine(3, 4);
    s.init(&mut m);
    tag_cfs(&mut m, 0..3);
    s.cfs.place(&mut m, CoreId(1), TaskId(0));
    s.cfs.enqueue(&mut m, CoreId(1), TaskId(1));
    s.cfs.enqueue(&mut m, CoreId(1), TaskId(2));
    s.migrate_core_cfs_to_fifo(&mut m, CoreId(1)).unwrap();

    assert_eq!(s.fifo_cores().collect::<Vec<_>>(), vec![CoreId(0), CoreId(1)]);
    assert_eq!(m.core(CoreId(1)).group, GroupTag::Fifo);
    assert!(m.running(CoreId(1)).is_none());
    assert_eq!(m.task(TaskId(0)).preemptions, 1);
    let l = loads(&s, &m);
    assert_eq!(l.iter().sum::<usize>(), 3);
    assert!(l.iter().max().unwrap() - l.iter().min().unwrap() <= 1, "{l:?}");
    let queued: Vec<usize> = s.cfs.members().map(|c| s.cfs.runqueue(c).unwrap().len()).collect();
    assert!(queued.iter().max().unwrap() - queued.iter().min().unwrap() <= 1, "{queued:?}");
}

#[test]
fn cfs_to_fifo_idle_core_just_flips() {
    let mut s = HybridScheduler::new(cfg(1, 2, ms(100))).unwrap();
    let mut m = machine(0, 3);
    s.init(&mut m);
    s.migrate_core_cfs_to_fifo(&mut m, CoreId(2)).unwrap();
    assert_eq!(s.fifo_cores().count(), 2);
    assert_eq!(s.cfs.len(), 1);
    assert!(matches!(
        s.migrate_core_cfs_to_fifo(&mut m, CoreId(1)),
        Err(Error::MigrationRefused { .. })
    ));
    assert!(s.migrate_core_cfs_to_fifo(&mut m, CoreId(0)).is_err());
}

#[test]
fn locked_cores_receive_nothing() {
    let mut s = HybridScheduler::new(cfg(2, 2, ms(10))).unwrap();
    let mut m = machine(4, 4);
    s.init(&mut m);
    s.set_core_locked(&mut m, CoreId(0), true);
    s.set_core_locked(&mut m, CoreId(2), true);
    s.on_arrival(&mut m, TaskId(0));
    s.on_arrival(&mut m, TaskId(1));
    assert_eq!(m.running(CoreId(1)), Some(TaskId(0)));
    assert!(m.running(CoreId(0)).is_none());
    s.on_limit_expiry(&mut m, CoreId(1), TaskId(0));
    s.on_limit_expiry(&mut m, CoreId(1), TaskId(1));
    assert!(m.running(CoreId(2)).is_none());
    assert_eq!(s.cfs.load(&m, CoreId(2)), 0);
    assert_eq!(s.cfs.load(&m, CoreId(3)), 2);
    // Unlocking lets the FIFO core pull again.
    s.on_arrival(&mut m, TaskId(2));
    s.on_arrival(&mut m, TaskId(3));
    s.set_core_locked(&mut m, CoreId(0), false);
    assert_eq!(m.running(CoreId(0)), Some(TaskId(3)));
}

/// Wraps the hybrid scheduler, migrating a random core on every tick and
/// checking after every callback that each arrived, unfinished task is held
/// exactly once: running on a core, in the FIFO queue, or in a CFS queue.
struct Injector {
    inner: HybridScheduler,
    rng: ChaCha8Rng,
    arrived: usize,
    migrations: usize,
    violations: Vec<String>,
}

impl Injector {
    fn check(&mut self, m: &Machine, when: &str) {
        let mut seen = vec![0u32; m.tasks().len()];
        for c in m.cores() {
            if let Some(t) = c.running {
                seen[t.idx()] += 1;
            }
        }
        for t in self.inner.fifo_queue() {
            seen[t.idx()] += 1;
        }
        for c in self.inner.cfs.members() {
            for t in self.inner.cfs.runqueue(c).unwrap().iter() {
                seen[t.idx()] += 1;
            }
        }
        for (i, t) in m.tasks().iter().enumerate().take(self.arrived) {
            let expected = u32::from(!t.is_complete());
            if seen[i] != expected && self.violations.len() < 10 {
                self.violations.push(format!("{when} at {}: {} held {} times", m.now(), t.id, seen[i]));
            }
        }
        let sizes = (self.inner.fifo_members.len(), self.inner.cfs.len());
        if sizes.0 < 1 || sizes.1 < 1 || sizes.0 + sizes.1 != m.num_cores() {
            self.violations.push(format!("bad group sizes {sizes:?}"));
        }
    }
}

impl Scheduler for Injector {
    fn name(&self) -> String {
        "injector".into()
    }
    fn init(&mut self, m: &mut Machine) {
        self.inner.init(m)
    }
    fn on_arrival(&mut self, m: &mut Machine, task: TaskId) {
        self.arrived = self.arrived.max(task.idx() + 1);
        self.inner.on_arrival(m, task);
        self.check(m, "arrival");
    }
    fn on_slice_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.inner.on_slice_expiry(m, core, task);
        self.check(m, "slice");
    }
    fn on_limit_expiry(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.inner.on_limit_expiry(m, core, task);
        self.check(m, "limit");
    }
    fn on_completion(&mut self, m: &mut Machine, core: CoreId, task: TaskId) {
        self.inner.on_completion(m, core, task);
        self.check(m, "completion");
    }
    fn on_tick(&mut self, m: &mut Machine) {
        self.inner.on_tick(m);
        let core = CoreId(self.rng.random_range(0..m.num_cores() as u32));
        let moved = if self.inner.group_of(core) == GroupTag::Fifo {
            self.inner.migrate_core_fifo_to_cfs(m, core)
        } else {
            self.inner.migrate_core_cfs_to_fifo(m, core)
        };
        self.migrations += usize::from(moved.is_ok());
        self.check(m, "migration");
    }
}

#[test]
fn migrations_conserve_tasks() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..80);
        let w = WorkloadSpec::new(
            (0..n)
                .map(|_| WorkloadEntry::new(ms(rng.random_range(0..20)), ms(rng.random_range(1..400)), 128))
                .collect(),
        );
        let fifo = rng.random_range(1..4);
        let cfs = rng.random_range(1..4);
        let mut injector = Injector {
            inner: HybridScheduler::new(cfg(fifo, cfs, ms(rng.random_range(5..150)))).unwrap(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xabc),
            arrived: 0,
            migrations: 0,
            violations: Vec::new(),
        };
        let mut o = opts(fifo + cfs);
        o.monitor_period = Some(ms(7));
        let r = run(&w, &mut injector, &o);
        assert!(injector.violations.is_empty(), "seed {seed}: {:?}", injector.violations);
        assert!(r.invariant_violations.is_empty(), "seed {seed}: {:?}", r.invariant_violations);
        assert!(r.censored.is_empty(), "seed {seed}: unfinished {:?}", r.censored);
        assert_eq!(r.cores.iter().map(|c| c.busy).sum::<SimTime>(), w.total_demand());
        assert!(injector.migrations > 0 || fifo + cfs == 2, "seed {seed}");
    }
}

#[test]
fn rightsizing_moves_cores_toward_load() {
    // Only short tasks: the FIFO group is saturated and the CFS group idle,
    // so CFS cores migrate until the CFS group hits its minimum.
    let w = WorkloadSpec::new((0..4_000).map(|_| WorkloadEntry::new(ms(1), ms(20), 128)).collect());
    let c = HybridConfig {
        rightsize: Some(RightsizeConfig::default()),
        ..cfg(4, 4, ms(1_000))
    };
    let r = run_hybrid(&w, c);
    let moves = &r.trace.migrations;
    assert!(!moves.is_empty());
    assert!(moves.iter().all(|mv| mv.to == GroupTag::Fifo));
    assert_eq!(moves.last().unwrap().cfs_cores, 1);
    // Cooldown: at least two seconds between migrations.
    assert!(moves.windows(2).all(|p| p[1].at - p[0].at >= SimTime::from_secs(2)));
}

#[test]
fn without_rightsizing_groups_never_change() {
    let w = WorkloadSpec::new((0..2_000).map(|_| WorkloadEntry::new(ms(1), ms(20), 128)).collect());
    let r = run_hybrid(&w, cfg(4, 4, ms(1_000)));
    assert!(r.trace.migrations.is_empty());
    assert!(r.cores[..4].iter().all(|c| c.group == GroupTag::Fifo));
    assert!(r.cores[4..].iter().all(|c| c.group == GroupTag::Cfs));
}

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use faas_sched::hybrid::{AdaptConfig, HybridConfig, HybridScheduler};
use faas_sched::policy::{PolicyConfig, PolicyKind};
use faas_sched::{run, RunOptions, Scheduler, SimTime};
use faas_sched_bench::scaled_workload;

const CORES: usize = 50;

fn scheduler(kind: PolicyKind) -> Box<dyn Scheduler + Send> {
    match kind {
        PolicyKind::Hybrid => Box::new(
            HybridScheduler::new(HybridConfig {
                fifo_cores: 25,
                cfs_cores: 25,
                limit: SimTime::from_millis(1_000),
                adapt: Some(AdaptConfig::default()),
                ..HybridConfig::default()
            })
            .expect("valid split"),
        ),
        k => PolicyConfig::with_kind(k).build_baseline().expect("valid policy"),
    }
}

fn policies(c: &mut Criterion) {
    let w = scaled_workload(2_000, 7);
    let opts = RunOptions {
        cores: CORES,
        ctx_switch_overhead: SimTime::from_micros(5),
        ..RunOptions::default()
    };
    let mut g = c.benchmark_group("policy");
    g.sample_size(10);
    g.throughput(Throughput::Elements(w.len() as u64));
    for kind in PolicyKind::ALL {
        g.bench_with_input(BenchmarkId::from_parameter(kind.as_str()), &kind, |b, &k| {
            b.iter(|| run(&w, scheduler(k), &opts))
        });
    }
    g.finish();
}

fn scaling(c: &mut Criterion) {
    let opts = RunOptions {
        cores: CORES,
        ..RunOptions::default()
    };
    let mut g = c.benchmark_group("hybrid_tasks");
    g.sample_size(10);
    for n in [500, 2_000, 8_000] {
        let w = scaled_workload(n, 7);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| {
            b.iter(|| run(w, scheduler(PolicyKind::Hybrid), &opts))
        });
    }
    g.finish();
}

criterion_group!(benches, policies, scaling);
criterion_main!(benches);

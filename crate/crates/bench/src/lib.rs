//! Shared fixtures for the engine benchmarks.

use faas_sched::workload::{synthesize, SynthParams};
use faas_sched::WorkloadSpec;

/// The default synthetic mix cut down to `n` tasks over a proportionally
/// shorter span, so that load stays comparable across sizes.
pub fn scaled_workload(n: usize, seed: u64) -> WorkloadSpec {
    let full = SynthParams::default();
    let span_us = full.span.as_micros() * n as u64 / full.n_tasks as u64;
    let params = SynthParams {
        n_tasks: n,
        span: faas_sched::SimTime::from_micros(span_us.max(1_000_000)),
        burst: faas_sched::workload::BurstParams {
            episode_len: full.burst.episode_len.min(faas_sched::SimTime::from_micros(span_us.max(1_000_000))),
            ..full.burst
        },
        seed,
        ..full
    };
    synthesize(&params).expect("default parameters are valid")
}

//! Synthetic FaaS workloads: mostly sub-second functions with a heavy tail,
//! arriving as a steady background stream overlaid with spikes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;
use crate::workload::{MemoryDist, WorkloadMeta, WorkloadSpec};

const ONE_SECOND: SimTime = SimTime::from_secs(1);

/// Spike episodes layered on the background arrival stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    /// Share of all tasks that arrive inside spikes.
    pub fraction: f64,
    pub episodes: usize,
    pub episode_len: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_tasks: usize,
    /// Arrivals fall in `[0, span)`.
    pub span: SimTime,
    /// Exact share of demands drawn below one second.
    pub short_fraction: f64,
    /// Log-uniform range for short demands; must end at or below one second.
    pub short_range: (SimTime, SimTime),
    /// Truncated-Pareto range for the tail; must start at or above one second.
    pub tail_range: (SimTime, SimTime),
    /// Pareto shape of the tail; smaller is heavier.
    pub tail_alpha: f64,
    pub burst: BurstParams,
    pub memory: MemoryDist,
    pub seed: u64,
}

impl Default for SynthParams {
    /// 12,442 invocations over two minutes: 80% finish within a second, the
    /// 90th percentile sits near 1.6 s and the longest run about two minutes.
    fn default() -> Self {
        SynthParams {
            n_tasks: 12_442,
            span: SimTime::from_secs(120),
            short_fraction: 0.8,
            short_range: (SimTime::from_millis(50), ONE_SECOND),
            tail_range: (ONE_SECOND, SimTime::from_secs(120)),
            tail_alpha: 1.47,
            burst: BurstParams {
                fraction: 0.5,
                episodes: 6,
                episode_len: SimTime::from_secs(2),
            },
            memory: MemoryDist::default(),
            seed: 7,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if !(0.0..=1.0).contains(&self.short_fraction) {
            return bad("short_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.burst.fraction) {
            return bad("burst fraction must lie in [0, 1]");
        }
        let (slo, shi) = self.short_range;
        if slo == SimTime::ZERO || slo >= shi || shi > ONE_SECOND {
            return bad("short range must satisfy 0 < lo < hi <= 1 s");
        }
        let (tlo, thi) = self.tail_range;
        if tlo < ONE_SECOND || tlo >= thi || thi.is_infinite() {
            return bad("tail range must satisfy 1 s <= lo < hi < inf");
        }
        if !(self.tail_alpha > 0.0 && self.tail_alpha.is_finite()) {
            return bad("tail_alpha must be positive");
        }
        if self.span == SimTime::ZERO || self.span.is_infinite() {
            return bad("span must be positive and finite");
        }
        if self.burst.fraction > 0.0 && self.n_tasks > 0 {
            if self.burst.episodes == 0 {
                return bad("bursty arrivals need at least one episode");
            }
            if self.burst.episode_len == SimTime::ZERO || self.burst.episode_len > self.span {
                return bad("episode length must lie in (0, span]");
            }
        }
        self.memory.validate()
    }
}

/// Generates a workload; a pure function of `params`.
pub fn synthesize(params: &SynthParams) -> Result<WorkloadSpec> {
    params.validate()?;
    let n = params.n_tasks;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let n_burst = (n as f64 * params.burst.fraction).round() as usize;
    let span = params.span.as_micros();
    let mut arrivals: Vec<u64> = (0..n - n_burst).map(|_| rng.random_range(0..span)).collect();
    if n_burst > 0 {
        let len = params.burst.episode_len.as_micros();
        let episodes = params.burst.episodes;
        let starts: Vec<u64> = (0..episodes).map(|_| rng.random_range(0..=span - len)).collect();
        for i in 0..n_burst {
            let start = starts[i % episodes];
            arrivals.push(start + rng.random_range(0..len));
        }
    }
    arrivals.sort_unstable();

    let n_short = (n as f64 * params.short_fraction).round() as usize;
    let mut is_short: Vec<bool> = (0..n).map(|i| i < n_short).collect();
    is_short.shuffle(&mut rng);

    let (slo, shi) = (params.short_range.0.as_secs_f64(), params.short_range.1.as_secs_f64());
    let (tlo, thi) = (params.tail_range.0.as_secs_f64(), params.tail_range.1.as_secs_f64());
    let a = params.tail_alpha;
    let tail_mass = 1.0 - (tlo / thi).powf(a);
    let sample_memory = params.memory.sampler()?;

    let entries = arrivals.into_iter().zip(is_short).map(|(at, short)| {
        let u: f64 = rng.random();
        let demand = if short {
            let d = SimTime::from_secs_f64(slo * (shi / slo).powf(u));
            d.clamp(params.short_range.0, params.short_range.1 - SimTime::from_micros(1))
        } else {
            let d = SimTime::from_secs_f64(tlo * (1.0 - u * tail_mass).powf(-1.0 / a));
            d.clamp(params.tail_range.0.max(ONE_SECOND), params.tail_range.1)
        };
        (SimTime::from_micros(at), demand, sample_memory(&mut rng))
    });
    let mut spec = WorkloadSpec::from_arrivals(entries.collect::<Vec<_>>());
    spec.meta = WorkloadMeta {
        source: Some("synthetic".to_string()),
        scale: None,
        seed: Some(params.seed),
    };
    Ok(spec)
}

/// Share of demands strictly below one second.
pub fn short_fraction(spec: &WorkloadSpec) -> f64 {
    if spec.is_empty() {
        return 0.0;
    }
    let short = spec.entries.iter().filter(|e| e.demand < ONE_SECOND).count();
    short as f64 / spec.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{percentile, Percent};

    fn small(n: usize) -> SynthParams {
        SynthParams {
            n_tasks: n,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synthesize(&small(2_000)).unwrap();
        let b = synthesize(&small(2_000)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = synthesize(&SynthParams { seed: 8, ..small(2_000) }).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn short_fraction_hits_target() {
        let spec = synthesize(&small(10_000)).unwrap();
        let f = short_fraction(&spec);
        assert!((0.78..=0.82).contains(&f), "{f}");
    }

    #[test]
    fn all_short() {
        let spec = synthesize(&SynthParams {
            short_fraction: 1.0,
            ..small(3_000)
        })
        .unwrap();
        assert!(spec.entries.iter().all(|e| e.demand < ONE_SECOND));
    }

    #[test]
    fn shape_of_default_mix() {
        let spec = synthesize(&SynthParams::default()).unwrap();
        assert_eq!(spec.len(), 12_442);
        let demands: Vec<_> = spec.entries.iter().map(|e| e.demand).collect();
        let p90 = percentile(&demands, Percent::P90).unwrap();
        assert!(p90 > SimTime::from_millis(1_300) && p90 < SimTime::from_millis(2_000), "{p90}");
        let max = *demands.iter().max().unwrap();
        assert!(max > SimTime::from_secs(60) && max <= SimTime::from_secs(120), "{max}");
        assert!(*spec.arrivals().last().unwrap() < SimTime::from_secs(120));
    }

    #[test]
    fn arrivals_are_bursty() {
        let spec = synthesize(&small(12_442)).unwrap();
        let mut per_second = vec![0usize; 120];
        for at in spec.arrivals() {
            per_second[(at.as_micros() / 1_000_000) as usize] += 1;
        }
        let mean = 12_442.0 / 120.0;
        let peak = *per_second.iter().max().unwrap() as f64;
        assert!(peak > 4.0 * mean, "peak {peak} vs mean {mean}");
    }

    #[test]
    fn infeasible_params_rejected() {
        let bad = [
            SynthParams { short_fraction: 1.5, ..small(10) },
            SynthParams { short_range: (SimTime::from_millis(10), SimTime::from_secs(2)), ..small(10) },
            SynthParams { tail_range: (SimTime::from_millis(500), SimTime::from_secs(2)), ..small(10) },
            SynthParams { tail_alpha: 0.0, ..small(10) },
        ];
        for p in bad {
            assert!(synthesize(&p).is_err(), "{p:?}");
        }
    }
}

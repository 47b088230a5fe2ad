//! Experiment configuration: a TOML file with sections, every key optional.
//!
//! ```toml
//! seed = 7
//! enclave_cores = 50
//! output_dir = "out"
//!
//! [workload]
//! source = "synthetic"     # or "file" (path = ...) or "trace"
//! n_tasks = 12442
//!
//! [policy]
//! kind = "hybrid"
//! preempt_limit_ms = 1633
//!
//! [hybrid]
//! fifo_cores = 25
//! cfs_cores = 25
//!
//! [adaptation]
//! enabled = true
//! percentile = 95
//! window = 100
//!
//! [rightsizing]
//! enabled = false
//! ```
//!
//! Durations are given in milliseconds (`*_ms`) or microseconds (`*_us`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::RightsizeConfig;
use crate::cost::CostModel;
use crate::engine::{RunOptions, Scheduler};
use crate::error::{Error, Result};
use crate::hybrid::{AdaptConfig, HybridConfig, HybridScheduler};
use crate::model::Percent;
use crate::policy::{PolicyConfig, PolicyKind};
use crate::time::SimTime;
use crate::workload::{assign_memory, read_trace, synthesize, BurstParams, MemoryDist, SynthParams, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub enclave_cores: usize,
    pub output_dir: PathBuf,
    /// Price table; the built-in table when absent.
    pub cost_model: Option<PathBuf>,
    pub horizon_ms: Option<f64>,
    pub monitor_period_ms: f64,
    pub workload: WorkloadSource,
    pub policy: PolicySection,
    pub hybrid: SplitSection,
    pub adaptation: AdaptSection,
    pub rightsizing: RightsizeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            enclave_cores: 50,
            output_dir: PathBuf::from("out"),
            cost_model: None,
            horizon_ms: None,
            monitor_period_ms: 100.0,
            workload: WorkloadSource::default(),
            policy: PolicySection::default(),
            hybrid: SplitSection::default(),
            adaptation: AdaptSection::default(),
            rightsizing: RightsizeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    File {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "defaults::n_tasks")]
        n_tasks: usize,
        #[serde(default = "defaults::span_s")]
        span_s: f64,
        #[serde(default = "defaults::short_fraction")]
        short_fraction: f64,
        #[serde(default = "defaults::burst_fraction")]
        burst_fraction: f64,
        #[serde(default = "defaults::burst_episodes")]
        burst_episodes: usize,
        #[serde(default = "defaults::burst_len_ms")]
        burst_len_ms: f64,
        #[serde(default = "defaults::tail_alpha")]
        tail_alpha: f64,
        /// `[[size_mb, weight], ...]`; the built-in mix when absent.
        #[serde(default)]
        memory: Option<Vec<(u32, f64)>>,
    },
    Trace {
        durations: PathBuf,
        invocations: PathBuf,
        #[serde(default)]
        buckets: Option<PathBuf>,
        #[serde(default = "defaults::scale")]
        scale: u32,
        #[serde(default)]
        minute_start: usize,
        #[serde(default = "defaults::minute_end")]
        minute_end: usize,
        #[serde(default = "defaults::max_duration_ms")]
        max_duration_ms: f64,
        #[serde(default)]
        memory: Option<Vec<(u32, f64)>>,
    },
}

mod defaults {
    use crate::workload::SynthParams;

    pub fn n_tasks() -> usize {
        SynthParams::default().n_tasks
    }
    pub fn span_s() -> f64 {
        SynthParams::default().span.as_secs_f64()
    }
    pub fn short_fraction() -> f64 {
        SynthParams::default().short_fraction
    }
    pub fn burst_fraction() -> f64 {
        SynthParams::default().burst.fraction
    }
    pub fn burst_episodes() -> usize {
        SynthParams::default().burst.episodes
    }
    pub fn burst_len_ms() -> f64 {
        SynthParams::default().burst.episode_len.as_millis_f64()
    }
    pub fn tail_alpha() -> f64 {
        SynthParams::default().tail_alpha
    }
    pub fn scale() -> u32 {
        100
    }
    pub fn minute_end() -> usize {
        2
    }
    pub fn max_duration_ms() -> f64 {
        600_000.0
    }
}

impl Default for WorkloadSource {
    fn default() -> Self {
        WorkloadSource::Synthetic {
            n_tasks: defaults::n_tasks(),
            span_s: defaults::span_s(),
            short_fraction: defaults::short_fraction(),
            burst_fraction: defaults::burst_fraction(),
            burst_episodes: defaults::burst_episodes(),
            burst_len_ms: defaults::burst_len_ms(),
            tail_alpha: defaults::tail_alpha(),
            memory: None,
        }
    }
}

impl WorkloadSource {
    /// Synthetic generator parameters, if this is a synthetic source.
    pub fn synth_params(&self, seed: u64) -> Option<Result<SynthParams>> {
        let WorkloadSource::Synthetic {
            n_tasks,
            span_s,
            short_fraction,
            burst_fraction,
            burst_episodes,
            burst_len_ms,
            tail_alpha,
            memory,
        } = self
        else {
            return None;
        };
        Some((|| {
            let params = SynthParams {
                n_tasks: *n_tasks,
                span: seconds("workload.span_s", *span_s)?,
                short_fraction: *short_fraction,
                burst: BurstParams {
                    fraction: *burst_fraction,
                    episodes: *burst_episodes,
                    episode_len: millis("workload.burst_len_ms", *burst_len_ms)?,
                },
                tail_alpha: *tail_alpha,
                memory: memory_dist(memory)?,
                seed,
                ..SynthParams::default()
            };
            params.validate().map_err(|e| Error::config("workload", e.to_string()))?;
            Ok(params)
        })())
    }

    /// Resolves relative paths against `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            WorkloadSource::File { path } => fix(path),
            WorkloadSource::Trace {
                durations,
                invocations,
                buckets,
                ..
            } => {
                fix(durations);
                fix(invocations);
                if let Some(b) = buckets {
                    fix(b);
                }
            }
            WorkloadSource::Synthetic { .. } => {}
        }
    }
}

fn memory_dist(memory: &Option<Vec<(u32, f64)>>) -> Result<MemoryDist> {
    let dist = match memory {
        Some(buckets) => MemoryDist {
            buckets: buckets.clone(),
        },
        None => MemoryDist::default(),
    };
    dist.validate().map_err(|e| Error::config("workload.memory", e.to_string()))?;
    Ok(dist)
}

fn millis(field: &str, v: f64) -> Result<SimTime> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::config(field, "must be a finite, non-negative number of milliseconds"));
    }
    Ok(SimTime::from_millis_f64(v))
}

fn seconds(field: &str, v: f64) -> Result<SimTime> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(field, "must be a positive number of seconds"));
    }
    Ok(SimTime::from_secs_f64(v))
}

fn positive_millis(field: &str, v: f64) -> Result<SimTime> {
    let t = millis(field, v)?;
    if t == SimTime::ZERO {
        return Err(Error::config(field, "must be positive"));
    }
    Ok(t)
}

fn limit_millis(v: f64) -> Result<SimTime> {
    if v == f64::INFINITY {
        return Ok(SimTime::INFINITY);
    }
    positive_millis("policy.preempt_limit_ms", v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub slice_ms: f64,
    pub min_granularity_ms: f64,
    /// `inf` disables the limit.
    pub preempt_limit_ms: f64,
    pub ctx_switch_overhead_us: f64,
    pub deadline_offset_ms: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        PolicySection {
            kind: PolicyKind::Hybrid,
            slice_ms: p.slice.as_millis_f64(),
            min_granularity_ms: p.min_granularity.as_millis_f64(),
            preempt_limit_ms: p.preempt_limit.as_millis_f64(),
            ctx_switch_overhead_us: p.ctx_switch_overhead.as_micros() as f64,
            deadline_offset_ms: p.deadline_offset.as_millis_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub fifo_cores: usize,
    pub cfs_cores: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            fifo_cores: 25,
            cfs_cores: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub enabled: bool,
    pub window: usize,
    /// In (0, 100].
    pub percentile: f64,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let a = AdaptConfig::default();
        AdaptSection {
            enabled: false,
            window: a.window,
            percentile: a.percentile.as_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RightsizeSection {
    pub enabled: bool,
    pub util_threshold: f64,
    pub check_period_ms: f64,
    pub min_group_size: usize,
    pub cooldown_ms: f64,
}

impl Default for RightsizeSection {
    fn default() -> Self {
        let r = RightsizeConfig::default();
        RightsizeSection {
            enabled: false,
            util_threshold: r.util_threshold,
            check_period_ms: r.check_period.as_millis_f64(),
            min_group_size: r.min_group_size,
            cooldown_ms: r.cooldown.as_millis_f64(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::parse(source_name, line, e.message().to_string())
        })
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.workload.rebase(base);
        if let Some(c) = &mut cfg.cost_model {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.enclave_cores == 0 {
            return Err(Error::config("enclave_cores", "must be at least 1"));
        }
        positive_millis("monitor_period_ms", self.monitor_period_ms)?;
        if let Some(h) = self.horizon_ms {
            positive_millis("horizon_ms", h)?;
        }
        self.policy_config()?;
        if self.policy.kind == PolicyKind::Hybrid {
            let h = &self.hybrid;
            if h.fifo_cores + h.cfs_cores != self.enclave_cores {
                return Err(Error::config(
                    "hybrid.fifo_cores",
                    format!(
                        "fifo_cores ({}) + cfs_cores ({}) must equal enclave_cores ({})",
                        h.fifo_cores, h.cfs_cores, self.enclave_cores
                    ),
                ));
            }
            let hybrid = self.hybrid_config()?;
            if let Some(r) = &hybrid.rightsize {
                if r.check_period < self.monitor_period() {
                    return Err(Error::config(
                        "rightsizing.check_period_ms",
                        "must not be shorter than monitor_period_ms",
                    ));
                }
            }
        }
        if let Some(p) = self.workload.synth_params(self.seed) {
            p?;
        }
        if let WorkloadSource::Trace {
            scale,
            minute_start,
            minute_end,
            max_duration_ms,
            memory,
            ..
        } = &self.workload
        {
            if *scale == 0 {
                return Err(Error::config("workload.scale", "must be at least 1"));
            }
            if minute_start >= minute_end {
                return Err(Error::config("workload.minute_end", "must exceed minute_start"));
            }
            positive_millis("workload.max_duration_ms", *max_duration_ms)?;
            memory_dist(memory)?;
        }
        Ok(())
    }

    fn monitor_period(&self) -> SimTime {
        SimTime::from_millis_f64(self.monitor_period_ms)
    }

    pub fn policy_config(&self) -> Result<PolicyConfig> {
        let p = &self.policy;
        let cfg = PolicyConfig {
            kind: p.kind,
            slice: positive_millis("policy.slice_ms", p.slice_ms)?,
            min_granularity: positive_millis("policy.min_granularity_ms", p.min_granularity_ms)?,
            preempt_limit: limit_millis(p.preempt_limit_ms)?,
            ctx_switch_overhead: millis("policy.ctx_switch_overhead_us", p.ctx_switch_overhead_us / 1_000.0)?,
            deadline_offset: millis("policy.deadline_offset_ms", p.deadline_offset_ms)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hybrid_config(&self) -> Result<HybridConfig> {
        let p = self.policy_config()?;
        let adapt = if self.adaptation.enabled {
            let percentile = Percent::new(self.adaptation.percentile)
                .map_err(|e| Error::config("adaptation.percentile", e.to_string()))?;
            Some(AdaptConfig {
                window: self.adaptation.window,
                percentile,
            })
        } else {
            None
        };
        let r = &self.rightsizing;
        let rightsize = if r.enabled {
            Some(RightsizeConfig {
                util_threshold: r.util_threshold,
                check_period: positive_millis("rightsizing.check_period_ms", r.check_period_ms)?,
                min_group_size: r.min_group_size,
                cooldown: millis("rightsizing.cooldown_ms", r.cooldown_ms)?,
            })
        } else {
            None
        };
        let cfg = HybridConfig {
            fifo_cores: self.hybrid.fifo_cores,
            cfs_cores: self.hybrid.cfs_cores,
            limit: p.preempt_limit,
            adapt,
            rightsize,
            slice: p.slice,
            min_granularity: p.min_granularity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build_scheduler(&self) -> Result<Box<dyn Scheduler + Send>> {
        self.validate()?;
        match self.policy.kind {
            PolicyKind::Hybrid => Ok(Box::new(HybridScheduler::new(self.hybrid_config()?)?)),
            _ => self.policy_config()?.build_baseline(),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            cores: self.enclave_cores,
            ctx_switch_overhead: SimTime::from_micros(self.policy.ctx_switch_overhead_us.max(0.0).round() as u64),
            monitor_period: Some(self.monitor_period()),
            horizon: self.horizon_ms.map(SimTime::from_millis_f64),
            record_dispatches: false,
            check_invariants: false,
        }
    }

    /// Loads, generates or derives the workload this config names.
    pub fn workload(&self) -> Result<WorkloadSpec> {
        match &self.workload {
            WorkloadSource::File { path } => WorkloadSpec::read(path),
            WorkloadSource::Synthetic { .. } => {
                let params = self.workload.synth_params(self.seed).expect("synthetic")?;
                synthesize(&params)
            }
            WorkloadSource::Trace {
                durations,
                invocations,
                buckets,
                scale,
                minute_start,
                minute_end,
                max_duration_ms,
                memory,
            } => {
                let max = positive_millis("workload.max_duration_ms", *max_duration_ms)?;
                let trace = read_trace(durations, invocations, buckets.as_deref(), max)?;
                let mut spec = crate::workload::derive_iat(&trace, *scale, *minute_start..*minute_end)?;
                assign_memory(&mut spec, &memory_dist(memory)?, self.seed)?;
                spec.meta.seed = Some(self.seed);
                Ok(spec)
            }
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        match &self.cost_model {
            Some(path) => CostModel::load(path),
            None => Ok(CostModel::aws_default()),
        }
    }

    /// SHA-256 over everything that determines a run's outcome (the output
    /// directory is excluded).
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// First 12 hex digits of [`ExperimentConfig::config_hash`].
    pub fn short_hash(&self) -> String {
        self.config_hash()[..12].to_string()
    }
}

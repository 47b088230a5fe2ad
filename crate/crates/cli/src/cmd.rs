use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use faas_sched::config::WorkloadSource;
use faas_sched::model::percentile;
use faas_sched::report::compare_at_least;
use faas_sched::workload::short_fraction;
use faas_sched::{
    aggregate, run, Comparison, Error, ExperimentConfig, Percent, PolicyKind, RunReport, SimTime, WorkloadSpec,
};
use rayon::prelude::*;
use serde_json::json;

use crate::{GenArgs, SimArgs, SimOverrides, SweepArgs, OUTPUT_ROOT_ENV};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CENSORED: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Cost,
    P99Exec,
    P99Resp,
    P99Turn,
}

/// Marks a run that stopped with tasks still unfinished.
#[derive(Debug)]
struct Censored;

impl std::fmt::Display for Censored {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("no task finished before the horizon")
    }
}

impl std::error::Error for Censored {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Censored>().is_some() {
        return EXIT_CENSORED;
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_IO;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => EXIT_IO,
        Some(Error::NoCompletedTasks) => EXIT_CENSORED,
        _ => EXIT_CONFIG,
    }
}

/// Places relative output paths under the output-root override, if set.
fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Command-line paths are relative to the working directory, while paths in
/// a config file are relative to that file; the resolved config keeps both
/// working by storing flag paths absolute.
fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })?)
}

fn parse_minutes(s: &str) -> Result<std::ops::Range<usize>> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Error::Config {
            field: "minutes".into(),
            message: format!("`{s}` is not a range like 0..2"),
        })?;
    let num = |v: &str| {
        v.trim().parse::<usize>().map_err(|_| Error::Config {
            field: "minutes".into(),
            message: format!("`{v}` is not a minute index"),
        })
    };
    Ok(num(a)?..num(b)?)
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig {
        seed: a.seed,
        ..Default::default()
    };
    cfg.workload = match (&a.trace_durations, &a.trace_invocations) {
        (Some(durations), Some(invocations)) => {
            let minutes = parse_minutes(&a.minutes)?;
            WorkloadSource::Trace {
                durations: durations.clone(),
                invocations: invocations.clone(),
                buckets: a.buckets.clone(),
                scale: a.scale,
                minute_start: minutes.start,
                minute_end: minutes.end,
                max_duration_ms: 600_000.0,
                memory: None,
            }
        }
        _ => {
            let WorkloadSource::Synthetic {
                burst_len_ms,
                tail_alpha,
                ..
            } = WorkloadSource::default()
            else {
                unreachable!("default source is synthetic")
            };
            WorkloadSource::Synthetic {
                n_tasks: a.n,
                span_s: a.span_s,
                short_fraction: a.short_fraction,
                burst_fraction: a.burst_fraction,
                burst_episodes: a.burst_episodes,
                burst_len_ms,
                tail_alpha,
                memory: None,
            }
        }
    };
    cfg.validate()?;
    let spec = cfg.workload()?;
    let out = output_path(&a.out);
    write(&out, spec.to_text())?;
    let stats_path = PathBuf::from(format!("{}.stats.json", out.display()));
    let stats = serde_json::to_string_pretty(&workload_stats(&spec))?;
    write(&stats_path, stats + "\n")?;
    println!("{} tasks -> {} (hash {})", spec.len(), out.display(), &spec.hash()[..12]);
    Ok(ExitCode::SUCCESS)
}

/// Duration CDF summary used to compare a sample with its source.
fn workload_stats(spec: &WorkloadSpec) -> serde_json::Value {
    let demands: Vec<SimTime> = spec.entries.iter().map(|e| e.demand).collect();
    let cdf: Vec<_> = [10.0, 25.0, 50.0, 75.0, 80.0, 90.0, 95.0, 99.0, 100.0]
        .iter()
        .filter_map(|&p| {
            let v = percentile(&demands, Percent::new(p).ok()?).ok()?;
            Some(json!({ "percentile": p, "demand_us": v.as_micros() }))
        })
        .collect();
    json!({
        "entries": spec.len(),
        "workload_hash": spec.hash(),
        "span_us": spec.arrivals().last().map_or(0, |t| t.as_micros()),
        "total_demand_us": spec.total_demand().as_micros(),
        "short_fraction": short_fraction(spec),
        "duration_cdf": cdf,
    })
}

fn parse_percentile(s: &str) -> Result<f64> {
    let digits = s.trim().trim_start_matches(['p', 'P']);
    digits.parse::<f64>().map_err(|_| {
        Error::Config {
            field: "adaptation.percentile".into(),
            message: format!("`{s}` is not a percentile like p95"),
        }
        .into()
    })
}

/// Config file (if any) with command-line overrides applied.
fn build_config(o: &SimOverrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = &o.workload {
        cfg.workload = WorkloadSource::File { path: absolute(w)? };
    }
    if let Some(p) = o.policy {
        cfg.policy.kind = p;
    }
    if let Some(n) = o.cores {
        cfg.enclave_cores = n;
    }
    match (o.fifo_cores, o.cfs_cores) {
        (Some(f), Some(c)) => {
            cfg.hybrid.fifo_cores = f;
            cfg.hybrid.cfs_cores = c;
            if o.cores.is_none() {
                cfg.enclave_cores = f + c;
            }
        }
        (Some(f), None) => {
            cfg.hybrid.fifo_cores = f;
            cfg.hybrid.cfs_cores = cfg.enclave_cores.saturating_sub(f);
        }
        (None, Some(c)) => {
            cfg.hybrid.cfs_cores = c;
            cfg.hybrid.fifo_cores = cfg.enclave_cores.saturating_sub(c);
        }
        (None, None) => {
            if o.cores.is_some() && cfg.hybrid.fifo_cores + cfg.hybrid.cfs_cores != cfg.enclave_cores {
                cfg.hybrid.fifo_cores = cfg.enclave_cores.div_ceil(2);
                cfg.hybrid.cfs_cores = cfg.enclave_cores / 2;
            }
        }
    }
    if let Some(v) = o.limit_ms {
        cfg.policy.preempt_limit_ms = v;
    }
    if let Some(v) = o.slice_ms {
        cfg.policy.slice_ms = v;
    }
    if let Some(p) = &o.adapt_limit {
        cfg.adaptation.enabled = true;
        cfg.adaptation.percentile = parse_percentile(p)?;
    }
    if let Some(w) = o.window {
        cfg.adaptation.window = w;
    }
    if o.rightsize {
        cfg.rightsizing.enabled = true;
    }
    if let Some(c) = &o.cost_table {
        cfg.cost_model = Some(absolute(c)?);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(h) = o.horizon_ms {
        cfg.horizon_ms = Some(h);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one configuration and writes its report directory.
fn simulate(cfg: &ExperimentConfig, workload: &WorkloadSpec, run_id: &str, out: &Path) -> Result<RunReport> {
    let scheduler = cfg.build_scheduler()?;
    let model = cfg.cost_model()?;
    let result = run(workload, scheduler, &cfg.run_options());
    let mut report = aggregate(&result, &model).map_err(|e| match e {
        Error::NoCompletedTasks => anyhow!(Censored),
        other => other.into(),
    })?;
    report.summary.run_id = run_id.to_string();
    report.summary.config_hash = cfg.config_hash();
    report.export(out)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = out.to_path_buf();
    write(&out.join("config.toml"), resolved.to_toml())?;
    Ok(report)
}

fn print_summary(r: &RunReport) {
    let a = r.aggregates();
    let ms = |t: SimTime| t.as_millis_f64();
    println!(
        "{}: {} tasks ({} censored); exec p50/p99 {:.1}/{:.1} ms; resp p99 {:.1} ms; turn p99 {:.1} ms; cost ${}",
        r.summary.run_id,
        a.completed,
        r.summary.censored,
        ms(a.execution.p50()),
        ms(a.execution.p99()),
        ms(a.response.p99()),
        ms(a.turnaround.p99()),
        a.total_cost_usd
    );
}

pub fn sim(a: SimArgs) -> Result<ExitCode> {
    let mut cfg = build_config(&a.base)?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    let out = output_path(&cfg.output_dir);
    println!("config hash {}", cfg.config_hash());
    let workload = cfg.workload()?;
    let report = simulate(&cfg, &workload, cfg.policy.kind.as_str(), &out)?;
    print_summary(&report);
    println!("wrote {}", out.display());
    if report.summary.censored > 0 {
        eprintln!("{} tasks unfinished at the horizon", report.summary.censored);
        return Ok(ExitCode::from(EXIT_CENSORED));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut base = build_config(&a.base)?;
    if let Some(out) = &a.out {
        base.output_dir = out.clone();
    }
    let out = output_path(&base.output_dir);
    let mut points: Vec<(String, ExperimentConfig)> = Vec::new();
    for &f in &a.fifo_cores_grid {
        let mut c = base.clone();
        c.policy.kind = PolicyKind::Hybrid;
        c.hybrid.fifo_cores = f;
        c.hybrid.cfs_cores = c.enclave_cores.saturating_sub(f);
        points.push((format!("split-{f}-{}", c.hybrid.cfs_cores), c));
    }
    for &p in &a.percentile_grid {
        let mut c = base.clone();
        c.policy.kind = PolicyKind::Hybrid;
        c.adaptation.enabled = true;
        c.adaptation.percentile = p;
        points.push((format!("p{p}"), c));
    }
    for &k in &a.policies {
        let mut c = base.clone();
        c.policy.kind = k;
        points.push((k.as_str().to_string(), c));
    }
    if points.is_empty() {
        bail!(Error::Config {
            field: "grid".into(),
            message: "sweep needs --fifo-cores-grid, --percentile-grid or --policies".into(),
        });
    }
    for (name, c) in &points {
        c.validate().with_context(|| format!("grid point {name}"))?;
    }
    println!("sweep of {} points, base config hash {}", points.len(), base.config_hash());
    let workload = base.workload()?;
    let reports: Vec<RunReport> = points
        .par_iter()
        .map(|(name, c)| simulate(c, &workload, name, &out.join(name)))
        .collect::<Result<_>>()?;
    for r in &reports {
        print_summary(r);
    }
    let table = compare_at_least(&reports, 1)?;
    print!("{}", table.to_table());
    let best = best(&table, a.objective).expect("non-empty");
    println!("best by {:?}: {}", a.objective, best);
    write(&out.join("comparison.txt"), table.to_table())?;
    write(&out.join("comparison.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    let censored = reports.iter().any(|r| r.summary.censored > 0);
    Ok(if censored { ExitCode::from(EXIT_CENSORED) } else { ExitCode::SUCCESS })
}

fn best(table: &Comparison, objective: Objective) -> Option<String> {
    let row = match objective {
        Objective::Cost => table.best_by(|r| r.total_cost_usd),
        Objective::P99Exec => table.best_by(|r| r.p99_execution_us),
        Objective::P99Resp => table.best_by(|r| r.p99_response_us),
        Objective::P99Turn => table.best_by(|r| r.p99_turnaround_us),
    };
    row.map(|r| r.run_id.clone())
}

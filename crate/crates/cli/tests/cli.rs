use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use faas_sched::RunReport;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_faas-sched"));
    c.env_remove("FAAS_SCHED_OUTPUT_ROOT");
    c
}

fn exec(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
        eprintln!("stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn gen(dir: &Path, name: &str, n: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = exec(bin().args(["gen", "--n", &n.to_string(), "--span-s", "4", "-o"]).arg(&path));
    assert!(out.status.success());
    path
}

#[test]
fn gen_is_deterministic() {
    let d = TempDir::new().unwrap();
    let a = gen(d.path(), "a.csv", 300);
    let b = gen(d.path(), "b.csv", 300);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("a.csv.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["entries"], 300);
    assert_eq!(stats["duration_cdf"].as_array().unwrap().len(), 9);
}

#[test]
fn single_task_under_fifo_runs_for_its_demand() {
    let d = TempDir::new().unwrap();
    let w = d.path().join("one.csv");
    fs::write(&w, "iat_us,demand_us,memory_mb\n1000,250000,128\n").unwrap();
    let out = d.path().join("run");
    let o = exec(bin().args(["sim", "--policy", "fifo", "--cores", "2", "--workload"]).arg(&w).arg("-o").arg(&out));
    assert!(o.status.success());
    let r = RunReport::import(&out).unwrap();
    assert_eq!(r.tasks.len(), 1);
    assert_eq!(r.tasks[0].exec_us, 250_000);
    assert_eq!(r.tasks[0].resp_us, 0);
    for f in ["tasks.csv", "util.csv", "summary.json", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn hybrid_and_adaptive_flags_run() {
    let d = TempDir::new().unwrap();
    let w = gen(d.path(), "w.csv", 200);
    let out = d.path().join("h");
    let o = exec(
        bin()
            .args(["sim", "--cores", "6", "--fifo-cores", "3", "--limit-ms", "200", "--adapt-limit", "p75"])
            .args(["--window", "20", "--rightsize", "--workload"])
            .arg(&w)
            .arg("-o")
            .arg(&out),
    );
    assert!(o.status.success());
    let r = RunReport::import(&out).unwrap();
    assert_eq!(r.summary.policy, "hybrid");
    assert_eq!(r.tasks.len(), 200);
    assert!(!r.summary.limit_series.is_empty());
    let cfg = faas_sched::ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert!(cfg.adaptation.enabled && cfg.rightsizing.enabled);
    assert_eq!(cfg.adaptation.percentile, 75.0);
    // The saved config reruns from anywhere.
    assert_eq!(cfg.workload().unwrap().len(), 200);
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    let w = gen(d.path(), "w.csv", 50);
    let code = |c: &mut Command| exec(c).status.code().unwrap();

    assert_eq!(code(bin().args(["sim", "--cores", "4", "--fifo-cores", "9", "--workload"]).arg(&w)), 2);
    assert_eq!(code(bin().args(["sim", "--adapt-limit", "pxx", "--workload"]).arg(&w)), 2);
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nbogus = 2\n").unwrap();
    assert_eq!(code(bin().args(["sim", "--config"]).arg(&bad)), 2);
    assert_eq!(code(bin().args(["sim", "--workload"]).arg(d.path().join("missing.csv"))), 4);
    let out = d.path().join("short");
    assert_eq!(
        code(bin().args(["sim", "--cores", "2", "--horizon-ms", "1000", "--workload"]).arg(&w).arg("-o").arg(&out)),
        3
    );
}

#[test]
fn output_root_env_is_honoured() {
    let d = TempDir::new().unwrap();
    let w = gen(d.path(), "w.csv", 40);
    let root = d.path().join("root");
    let o = exec(
        bin()
            .env("FAAS_SCHED_OUTPUT_ROOT", &root)
            .args(["sim", "--cores", "4", "--policy", "cfs", "-o", "rel", "--workload"])
            .arg(&w),
    );
    assert!(o.status.success());
    assert!(root.join("rel/summary.json").is_file());
}

#[test]
fn single_point_sweep_matches_sim() {
    let d = TempDir::new().unwrap();
    let w = gen(d.path(), "w.csv", 120);
    let sim_out = d.path().join("sim");
    let sweep_out = d.path().join("sweep");
    assert!(exec(bin().args(["sim", "--cores", "4", "--policy", "rr", "--workload"]).arg(&w).arg("-o").arg(&sim_out))
        .status
        .success());
    assert!(exec(
        bin()
            .args(["sweep", "--cores", "4", "--policies", "rr", "--workload"])
            .arg(&w)
            .arg("-o")
            .arg(&sweep_out)
    )
    .status
    .success());
    assert_eq!(
        fs::read(sim_out.join("tasks.csv")).unwrap(),
        fs::read(sweep_out.join("rr/tasks.csv")).unwrap()
    );
    assert!(sweep_out.join("comparison.json").is_file());
}

#[test]
fn empty_sweep_is_a_config_error() {
    let d = TempDir::new().unwrap();
    let w = gen(d.path(), "w.csv", 10);
    assert_eq!(exec(bin().args(["sweep", "--workload"]).arg(&w)).status.code(), Some(2));
}

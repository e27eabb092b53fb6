//! End-to-end runs of the `sense-bandits` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sense_bandits::bandit::argmax_lowest;
use sense_bandits::clustering::{nearest_cluster, ClusterModel};
use sense_bandits::fingerprint::SensingFingerprint;
use sense_bandits::sim::metrics::{METRICS_HEADER, UPT_HEADER};
use sense_bandits::sim::{Policy, Scenario};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sense-bandits"))
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).env("SENSE_BANDITS_THREADS", "2").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_scenario(dir: &Path) -> PathBuf {
    let mut scn = Scenario::desk().with_policy(Policy::Random);
    scn.duration_epochs = 10;
    let p = dir.join("tiny.json");
    std::fs::write(&p, scn.to_json().unwrap()).unwrap();
    p
}

fn first_line(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_one_result_set_per_seed_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let scn = tiny_scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = exec(&["run", "--scenario", s(&scn), "--seeds", "1..3", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for seed in 1..=3 {
        for f in ["metrics.csv", "upt.csv", "summary.csv"] {
            let pa = a.join(format!("seed_{seed}")).join(f);
            let pb = b.join(format!("seed_{seed}")).join(f);
            assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{f} differs");
        }
    }
    let seed1 = a.join("seed_1");
    assert_eq!(first_line(&seed1.join("metrics.csv")), METRICS_HEADER.join(","));
    assert_eq!(first_line(&seed1.join("upt.csv")), UPT_HEADER.join(","));
    assert!(!a.join("seed_4").exists());

    let o = exec(&["report", "--results", s(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(a.join("report_throughput.csv").is_file());
    let upt = std::fs::read_to_string(a.join("report_upt.csv")).unwrap();
    assert!(upt.starts_with("technology,group,seeds,files,mean_p75,ci_lo,ci_hi"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"users_per_cell": 2, "adapting_per_cell": 5}"#).unwrap();
    let o = exec(&["run", "--scenario", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adapting_per_cell"));

    std::fs::write(&bad, r#"{"traffic": {"file_size": 3}}"#).unwrap();
    let o = exec(&["run", "--scenario", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("file_size"));

    let o = exec(&["run", "--scenario", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let scn = tiny_scenario(dir.path());
    let o = exec(&["run", "--scenario", s(&scn), "--policy", "cmab"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cluster_model"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(exec(&["report", "--results", s(&empty)]).status.code(), Some(2));
    assert_eq!(exec(&["run", "--nope"]).status.code(), Some(2));
    assert_eq!(exec(&["run", "--scenario", s(&scn), "--seeds", "9..2"]).status.code(), Some(2));
}

#[test]
fn help_enumerates_flags() {
    let o = exec(&["run", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--scenario", "--seeds", "--out", "--policy", "--cluster-model", "--debug-bandit", "--dump-traces"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn traces_train_and_drive_cmab() {
    let dir = tempfile::tempdir().unwrap();
    let scn = tiny_scenario(dir.path());
    let train = dir.path().join("train");
    let o = exec(&[
        "run", "--scenario", s(&scn), "--policy", "plain-ucb", "--seeds", "5,6", "--out", s(&train), "--dump-traces",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = dir.path().join("model.json");
    let o = exec(&[
        "train-clusters", "--traces", s(&train.join("traces.csv")), "--clusters", "1", "--out", s(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(ClusterModel::load(&model).unwrap().len(), 1);

    let out = dir.path().join("cmab");
    let o = exec(&[
        "run", "--scenario", s(&scn), "--policy", "cmab", "--cluster-model", s(&model), "--out", s(&out),
        "--debug-bandit",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("seed_1").join("agents.csv").is_file());
}

/// Three environments with distinct histograms and best arms must come back
/// as three clusters, each labelled with its environment's best arm.
#[test]
fn train_clusters_recovers_synthetic_environments() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    let envs: [([f64; 4], [f64; 3]); 3] = [
        ([0.85, 0.05, 0.05, 0.05], [9.0, 2.0, 1.0]),
        ([0.05, 0.85, 0.05, 0.05], [1.0, 8.0, 3.0]),
        ([0.05, 0.05, 0.05, 0.85], [0.0, 2.0, 7.0]),
    ];
    let mut csv = String::from("run,device,epoch,bin_-95_-93,bin_-93_-91,bin_-91_-89,bin_-89_-87,mu_-82,mu_-72,mu_-62\n");
    for i in 0..60 {
        let (h, u) = &envs[i % 3];
        let wobble = 0.01 * (i / 3) as f64 / 20.0;
        let mut p = h.to_vec();
        p[0] += wobble;
        p[3] -= wobble;
        csv += &format!(
            "0,{},{},{},{},{},{},{},{},{}\n",
            i % 3, i, p[0], p[1], p[2], p[3], u[0], u[1], u[2]
        );
    }
    std::fs::write(&traces, csv).unwrap();
    let model_path = dir.path().join("m.json");
    let o = exec(&[
        "train-clusters", "--traces", s(&traces), "--clusters", "3", "--seed", "4", "--out", s(&model_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = ClusterModel::load(&model_path).unwrap();
    assert_eq!(model.len(), 3);
    for (h, u) in &envs {
        let fp = SensingFingerprint::from_probabilities(h.to_vec(), 0, 0).unwrap();
        let k = nearest_cluster(&fp, &model).unwrap();
        let learned = argmax_lowest(model.clusters[k].avg_utility.iter().copied());
        assert_eq!(learned, argmax_lowest(u.iter().copied()));
    }
}

#[test]
fn bench_bandit_writes_regret_columns() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("env.json");
    std::fs::write(
        &env,
        r#"{"segments": [
            {"epochs": 50, "means": [1.0, 2.0, 3.0], "fingerprint": [0.8, 0.1, 0.1]},
            {"epochs": 50, "means": [3.0, 2.0, 1.0], "fingerprint": [0.1, 0.1, 0.8]},
            {"epochs": 50, "means": [2.0, 3.0, 1.0], "fingerprint": [0.1, 0.8, 0.1]}
        ], "noise_sd": 0.2, "training_fingerprints": 50}"#,
    )
    .unwrap();
    let out = dir.path().join("regret.csv");
    let o = exec(&["bench-bandit", "--env", s(&env), "--seeds", "1..2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for p in ["cmab", "cold-restart", "never-restart"] {
        for c in ["arm", "g", "G"] {
            assert!(header.split(',').any(|h| h == format!("{p}_{c}")), "{p}_{c}");
        }
    }
    assert_eq!(lines.count(), 2 * 150);
}

//! Command-line front end: `run`, `train-clusters`, `bench-bandit`, `report`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::clustering::{train_cluster_model, ClusterModel};
use crate::error::{Error, Result};
use crate::report::write_report_tables;
use crate::sim::metrics::write_report;
use crate::sim::{run_with_model, MetricsReport, Policy, RunOptions, Scenario};
use crate::synthetic::{run_bench, write_regret_csv, BanditEnv, BenchPolicy};
use crate::traces::{read_traces, write_traces};

pub const THREADS_ENV: &str = "SENSE_BANDITS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sense-bandits", version, about = "Wi-Fi / NR-U coexistence simulator with bandit sensing-threshold adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario for one or more seeds.
    Run(RunArgs),
    /// Train a cluster model from a trace CSV.
    TrainClusters(TrainArgs),
    /// Regret benchmark on a synthetic piecewise-stationary bandit.
    BenchBandit(BenchArgs),
    /// Aggregate the seed directories of a results folder.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Seeds: "N", "A..B" (inclusive) or a comma list.
    #[arg(long, default_value = "1", value_parser = parse_seeds)]
    pub seeds: SeedList,
    /// Output directory; each seed writes to <out>/seed_<seed>/.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Policy for the adapting devices, overriding the scenario.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<Policy>,
    /// Cluster model for the cmab policy, overriding the scenario.
    #[arg(long)]
    pub cluster_model: Option<PathBuf>,
    /// Write per-arm score decompositions to agents.csv.
    #[arg(long)]
    pub debug_bandit: bool,
    /// Write learners' labelled fingerprints to <out>/traces.csv.
    #[arg(long)]
    pub dump_traces: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trace CSV produced by `run --dump-traces`.
    #[arg(long)]
    pub traces: PathBuf,
    /// Number of clusters.
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Environment JSON: segments of arm means and fingerprint histograms.
    #[arg(long)]
    pub env: PathBuf,
    /// Seeds: "N", "A..B" (inclusive) or a comma list.
    #[arg(long, default_value = "1..20", value_parser = parse_seeds)]
    pub seeds: SeedList,
    /// Regret CSV to write.
    #[arg(long, default_value = "regret.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results directory holding seed_* subdirectories.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    seeds_from_str(s).map(SeedList).map_err(|e| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `"7"`, `"1..20"` (inclusive) or `"1,4,9"`.
pub fn seeds_from_str(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("invalid seed list '{s}'"));
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
/// Diagnostics go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(format!("thread pool: {e}")))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::TrainClusters(a) => cmd_train_clusters(&a).map(|_| ()),
        Command::BenchBandit(a) => cmd_bench_bandit(&a),
        Command::Report(a) => cmd_report(&a.results),
    }
}

pub fn cmd_run(a: &RunArgs) -> Result<()> {
    let mut scn = Scenario::load(&a.scenario)?;
    if let Some(p) = a.policy {
        scn.policy = p;
    }
    if let Some(m) = &a.cluster_model {
        scn.bandit.cluster_model = Some(m.clone());
    }
    scn.validate()?;
    let model = match (scn.policy, &scn.bandit.cluster_model) {
        (Policy::Cmab, Some(p)) => Some(Arc::new(ClusterModel::load(p)?)),
        (Policy::Cmab, None) => {
            return Err(Error::Scenario(
                "policy cmab needs bandit.cluster_model or --cluster-model".into(),
            ))
        }
        _ => None,
    };
    let opts = RunOptions {
        debug_bandit: a.debug_bandit,
        collect_traces: a.dump_traces,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let reports: Vec<MetricsReport> = thread_pool()?.install(|| {
        a.seeds
            .0
            .par_iter()
            .map(|&seed| {
                let s = Scenario { seed, ..scn.clone() };
                let rep = run_with_model(&s, model.clone(), opts)?;
                write_report(&rep, &a.out.join(format!("seed_{seed}")))?;
                Ok(rep)
            })
            .collect::<Result<_>>()
    })?;
    if a.dump_traces {
        let runs: Vec<(u64, &MetricsReport)> = reports.iter().map(|r| (r.seed, r)).collect();
        write_traces(&a.out.join("traces.csv"), &runs)?;
    }
    Ok(())
}

pub fn cmd_train_clusters(a: &TrainArgs) -> Result<ClusterModel> {
    let set = read_traces(&a.traces)?;
    let model = train_cluster_model(&set.states, set.bin_edges, set.actions, a.clusters, a.seed)?;
    model.save(&a.out)?;
    Ok(model)
}

pub fn cmd_bench_bandit(a: &BenchArgs) -> Result<()> {
    let env = BanditEnv::load(&a.env)?;
    let runs = thread_pool()?.install(|| run_bench(&env, &a.seeds.0))?;
    write_regret_csv(&a.out, &env, &runs)?;
    for p in BenchPolicy::ALL {
        let g: Vec<f64> = runs.iter().filter(|r| r.policy == p).map(|r| r.regret.total()).collect();
        eprintln!(
            "{:>14}: mean G(T) = {:.3} over {} seeds",
            p.as_str(),
            g.iter().sum::<f64>() / g.len() as f64,
            g.len()
        );
    }
    Ok(())
}

pub fn cmd_report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::config(format!("results directory {} does not exist", dir.display())));
    }
    write_report_tables(dir).map(|_| ())
}

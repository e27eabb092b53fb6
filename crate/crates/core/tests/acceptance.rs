//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! hard criterion fails. Run with `cargo test --test acceptance`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sense_bandits::bandit::{ActionSet, CmabAgent};
use sense_bandits::clustering::{
    kmeans_kl, nearest_cluster, train_cluster_model, Cluster, ClusterModel, LabeledState,
};
use sense_bandits::fingerprint::{build_fingerprint, kl_divergence_raw, BinEdges, PowerSample, SensingFingerprint};
use sense_bandits::mac::{cca_decision, draw_backoff, step_slot, BackoffState, Cca, LbtConfig, MacAction, Phase};
use sense_bandits::report::{paired_diff_ci, percentile, Interval};
use sense_bandits::sim::metrics::write_report;
use sense_bandits::sim::{run, run_with_model, MetricsReport, Policy, RunOptions, Scenario, Technology};
use sense_bandits::synthetic::{run_bench, BanditEnv, BenchPolicy};
use sense_bandits::traces::{read_traces, write_traces};

const RESAMPLES: usize = 4000;
const CI_SEED: u64 = 0xacce;

fn repo_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn fmt_ci(ci: &Interval) -> String {
    format!("{:.3} [{:.3}, {:.3}]", ci.mean, ci.lo, ci.hi)
}

// ── 1. Bandit core vs brute force ──────────────────────────────────────

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut select_mismatch = 0usize;
    let mut max_mu_err = 0.0f64;
    let instances = 10_000;
    for _ in 0..instances {
        let n = rng.random_range(2..=12usize);
        let actions = ActionSet::new((0..n).map(|i| -94.0 + 2.0 * i as f64).collect()).unwrap();
        let prior: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let alpha = rng.random_range(0.05..5.0);
        let model = ClusterModel::new(
            BinEdges::uniform(-95.0, 2.0, 4).unwrap(),
            actions,
            vec![Cluster {
                id: 0,
                centroid: vec![0.25; 4],
                radius: 1e9,
                avg_utility: prior.clone(),
            }],
        )
        .unwrap();
        let mut agent = CmabAgent::new(Arc::new(model), alpha, SensingFingerprint::uniform(4)).unwrap();
        let mut pulls = vec![0u64; n];
        let mut sums = vec![0.0f64; n];
        let steps = rng.random_range(0..60u64);
        for _ in 0..steps {
            let (arm, _) = agent.select_action();
            let r = rng.random_range(-50.0..50.0);
            agent.update(r, SensingFingerprint::uniform(4)).unwrap();
            pulls[arm] += 1;
            sums[arm] += r;
        }
        // independent scoring: prior + ridge mean + alpha*sqrt(ln(t+1)/(1+n_a))
        let t = steps as f64;
        let scores: Vec<f64> = (0..n)
            .map(|a| {
                let d = 1.0 + pulls[a] as f64;
                prior[a] + sums[a] / d + alpha * ((t + 1.0).ln() / d).sqrt()
            })
            .collect();
        let mut best = 0;
        for a in 1..n {
            if scores[a] > scores[best] {
                best = a;
            }
        }
        // near-ties can legitimately resolve differently under rounding
        let top = scores[best];
        let (chosen, _) = agent.select_action();
        if chosen != best && (scores[chosen] - top).abs() > 1e-9 * top.abs().max(1.0) {
            select_mismatch += 1;
        }
        for a in 0..n {
            let closed = sums[a] / (1.0 + pulls[a] as f64);
            max_mu_err = max_mu_err.max((agent.regression().mu_tilde()[a] - closed).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = select_mismatch == 0 && max_mu_err < 1e-9 && elapsed < Duration::from_secs(10);
    Outcome::new(
        pass,
        format!(
            "{instances} instances, select mismatches {select_mismatch}, max |mu~ - ridge| {max_mu_err:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ── 2. Stationary regret ───────────────────────────────────────────────

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let env = BanditEnv::load(repo_file("bench_stationary.json")).unwrap();
    let means = &env.segments[0].means;
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = means.iter().map(|m| best - m).filter(|&g| g > 0.0).collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let horizon = env.horizon() as usize;
    let seeds: Vec<u64> = (1..=20).collect();
    let runs = run_bench(&env, &seeds).unwrap();
    let plain: Vec<_> = runs.iter().filter(|r| r.policy == BenchPolicy::NeverRestart).collect();
    let tail: f64 = plain
        .iter()
        .map(|r| r.regret.per_epoch()[horizon - 1000..].iter().sum::<f64>() / 1000.0)
        .sum::<f64>()
        / plain.len() as f64;
    let g_t: f64 = plain.iter().map(|r| r.regret.total_at(horizon / 2)).sum();
    let g_2t: f64 = plain.iter().map(|r| r.regret.total_at(horizon)).sum();
    let ratio = g_2t / g_t;
    let elapsed = start.elapsed();
    let pass = tail < 0.1 * mean_gap && ratio < 1.8 && elapsed < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!(
            "final-1000 regret {tail:.4} vs bound {:.4}, G(2T)/G(T) {ratio:.3}, {:.1} s",
            0.1 * mean_gap,
            elapsed.as_secs_f64()
        ),
    )
}

// ── 3. Warm start ───────────────────────────────────────────────────────

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let env = BanditEnv::load(repo_file("bench_3seg.json")).unwrap();
    let seeds: Vec<u64> = (1..=20).collect();
    let runs = run_bench(&env, &seeds).unwrap();
    let totals = |p: BenchPolicy| -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| runs.iter().find(|r| r.seed == s && r.policy == p).unwrap().regret.total())
            .collect()
    };
    let cmab = totals(BenchPolicy::Cmab);
    let mut pass = true;
    let mut parts = vec![format!("G(T) cmab {:.1}", mean(&cmab))];
    for p in [BenchPolicy::ColdRestart, BenchPolicy::NeverRestart] {
        let other = totals(p);
        let ci = paired_diff_ci(&other, &cmab, RESAMPLES, CI_SEED).unwrap();
        pass &= ci.lo > 0.0;
        parts.push(format!("{} {:.1} (diff {})", p.as_str(), mean(&other), fmt_ci(&ci)));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    parts.push(format!("{:.1} s", elapsed.as_secs_f64()));
    Outcome::new(pass, parts.join(", "))
}

// ── 4-6. Desk scenario ──────────────────────────────────────────────────

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

struct Desk {
    elapsed: Duration,
    clusters: usize,
    reports: HashMap<Policy, Vec<MetricsReport>>,
}

fn desk_pipeline() -> Desk {
    let start = Instant::now();
    let scn = Scenario::load(repo_file("desk.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();

    // offline model from plain-UCB traces on seeds disjoint from evaluation
    let training: Vec<MetricsReport> = (101..=110u64)
        .into_par_iter()
        .map(|seed| {
            let s = Scenario { seed, ..scn.clone() }.with_policy(Policy::PlainUcb);
            run(&s, RunOptions { collect_traces: true, ..Default::default() }).unwrap()
        })
        .collect();
    let trace_path = dir.path().join("traces.csv");
    let runs: Vec<(u64, &MetricsReport)> = training.iter().map(|r| (r.seed, r)).collect();
    write_traces(&trace_path, &runs).unwrap();
    let set = read_traces(&trace_path).unwrap();
    let model = Arc::new(train_cluster_model(&set.states, set.bin_edges, set.actions, 8, 0).unwrap());

    let mut reports = HashMap::new();
    for policy in [Policy::Standard, Policy::Random, Policy::Cmab] {
        let m = (policy == Policy::Cmab).then(|| model.clone());
        let reps: Vec<MetricsReport> = (1..=10u64)
            .into_par_iter()
            .map(|seed| {
                let s = Scenario { seed, ..scn.clone() }.with_policy(policy);
                run_with_model(&s, m.clone(), RunOptions::default()).unwrap()
            })
            .collect();
        reports.insert(policy, reps);
    }
    Desk {
        elapsed: start.elapsed(),
        clusters: model.len(),
        reports,
    }
}

/// Per-seed mean effective throughput of a device group.
fn group_throughput(reps: &[MetricsReport], adapting: bool, tech: Option<Technology>) -> Vec<f64> {
    reps.iter()
        .map(|r| {
            let v: Vec<f64> = r
                .devices
                .iter()
                .filter(|d| d.adapting == adapting && tech.is_none_or(|t| d.technology == t))
                .map(|d| d.effective_throughput_mbps)
                .collect();
            mean(&v)
        })
        .collect()
}

fn upt_samples(r: &MetricsReport, adapting: bool, tech: Option<Technology>) -> Vec<f64> {
    let mut v: Vec<f64> = r
        .upt
        .iter()
        .filter(|u| u.adapting == adapting && tech.is_none_or(|t| u.technology == t))
        .map(|u| u.upt_mbps)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Per-seed statistic, pairing seeds and skipping any seed where either side
/// has no samples.
fn paired<F>(a: &[MetricsReport], b: &[MetricsReport], f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&MetricsReport) -> Option<f64>,
{
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some((f(x)?, f(y)?)))
        .unzip()
}

fn criterion_4(d: &Desk) -> Outcome {
    let cmab = group_throughput(&d.reports[&Policy::Cmab], true, None);
    let std = group_throughput(&d.reports[&Policy::Standard], true, None);
    let rnd = group_throughput(&d.reports[&Policy::Random], true, None);
    let vs_std = paired_diff_ci(&cmab, &std, RESAMPLES, CI_SEED).unwrap();
    let vs_rnd = paired_diff_ci(&cmab, &rnd, RESAMPLES, CI_SEED).unwrap();
    let pass = vs_std.lo > 0.0 && vs_rnd.mean >= 0.0 && d.elapsed < Duration::from_secs(600);
    let mut detail = format!(
        "adapting Mb/s cmab {:.2}, standard {:.2}, random {:.2}; cmab-standard {}, cmab-random {}",
        mean(&cmab),
        mean(&std),
        mean(&rnd),
        fmt_ci(&vs_std),
        fmt_ci(&vs_rnd)
    );
    for tech in [Technology::Nru, Technology::Wifi] {
        let c = group_throughput(&d.reports[&Policy::Cmab], true, Some(tech));
        let s = group_throughput(&d.reports[&Policy::Standard], true, Some(tech));
        let r = group_throughput(&d.reports[&Policy::Random], true, Some(tech));
        detail += &format!("; {}: {:.2}/{:.2}/{:.2}", tech.as_str(), mean(&c), mean(&s), mean(&r));
    }
    detail += &format!("; {} clusters, pipeline {:.1} s", d.clusters, d.elapsed.as_secs_f64());
    Outcome::new(pass, detail)
}

fn criterion_5(d: &Desk) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for tech in [Technology::Nru, Technology::Wifi] {
        let (c, s) = paired(&d.reports[&Policy::Cmab], &d.reports[&Policy::Standard], |r| {
            percentile(&upt_samples(r, false, Some(tech)), 75.0)
        });
        if c.is_empty() {
            pass = false;
            parts.push(format!("{}: no standard-node files", tech.as_str()));
            continue;
        }
        let ci = paired_diff_ci(&c, &s, RESAMPLES, CI_SEED).unwrap();
        pass &= ci.hi >= 0.0;
        parts.push(format!(
            "{} standard p75 UPT cmab-neighbours {:.2} vs all-standard {:.2}, diff {} over {} seeds",
            tech.as_str(),
            mean(&c),
            mean(&s),
            fmt_ci(&ci),
            c.len()
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Directional only: reported, never fatal.
fn criterion_6(d: &Desk) -> Outcome {
    let mut parts = Vec::new();
    let mut all_ok = true;
    for tech in [None, Some(Technology::Nru), Some(Technology::Wifi)] {
        let (r, s) = paired(&d.reports[&Policy::Random], &d.reports[&Policy::Standard], |rep| {
            let v = upt_samples(rep, true, tech);
            (!v.is_empty()).then(|| mean(&v))
        });
        let ci = paired_diff_ci(&r, &s, RESAMPLES, CI_SEED).unwrap();
        let label = tech.map_or("pooled", Technology::as_str);
        all_ok &= ci.mean >= 0.0;
        parts.push(format!(
            "{label} adapting mean UPT random {:.2} vs standard {:.2}, diff {}{}",
            mean(&r),
            mean(&s),
            fmt_ci(&ci),
            if ci.excludes_zero() { "" } else { " (CI overlaps 0)" }
        ));
    }
    Outcome::new(all_ok, parts.join("; "))
}

// ── 7. MAC/PHY invariants ───────────────────────────────────────────────

/// Upper chi-square quantile by the Wilson-Hilferty approximation.
fn chi2_upper(df: f64, z: f64) -> f64 {
    let h = 2.0 / (9.0 * df);
    df * (1.0 - h + z * h.sqrt()).powi(3)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // backoff uniformity on every stage of both configs
    let mut worst = 0.0f64;
    for cfg in [LbtConfig::wifi_best_effort(), LbtConfig::nru_priority_class_2()] {
        for stage in 0..=cfg.max_stage {
            let w = cfg.window(stage) as usize;
            let draws = 200 * w;
            let mut counts = vec![0u64; w];
            for _ in 0..draws {
                let k = draw_backoff(stage, &cfg, &mut rng) as usize;
                if k >= w {
                    failures.push(format!("draw {k} outside window {w}"));
                    break;
                }
                counts[k] += 1;
            }
            let e = draws as f64 / w as f64;
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
            let crit = chi2_upper((w - 1) as f64, 3.29);
            worst = worst.max(chi2 / crit);
            if chi2 > crit {
                failures.push(format!("chi2 {chi2:.1} > {crit:.1} at W={w}"));
            }
        }
    }

    // freeze keeps the counter, and StartTx comes after exactly `counter`
    // decrements whatever the busy pattern
    let cfg = LbtConfig::wifi_best_effort();
    for _ in 0..2000 {
        let mut st = BackoffState::new();
        let mut decrements = 0u32;
        let mut drawn = None;
        let mut last_counter = u32::MAX;
        let mut started = false;
        for _ in 0..100_000 {
            let cca = if rng.random_bool(0.3) { Cca::Busy } else { Cca::Idle };
            let before = st.counter;
            match step_slot(&mut st, cca, true, &cfg, &mut rng) {
                MacAction::Freeze => {
                    if st.counter != before {
                        failures.push("freeze changed the counter".into());
                    }
                }
                MacAction::Decrement => decrements += 1,
                MacAction::StartTx => {
                    started = true;
                    break;
                }
                _ => {}
            }
            if drawn.is_none() && st.phase == Phase::BackingOff {
                drawn = Some(st.counter);
            }
            if st.phase == Phase::BackingOff {
                if st.counter > last_counter {
                    failures.push("counter increased during backoff".into());
                }
                last_counter = st.counter;
            }
        }
        if !started || Some(decrements) != drawn {
            failures.push(format!("decrements {decrements} vs drawn {drawn:?}"));
            break;
        }
    }

    // CCA boundary
    for g in [-82.0, -72.0, -62.0] {
        if cca_decision(g, g) != Cca::Idle || cca_decision(g + 1e-9, g) != Cca::Busy {
            failures.push(format!("CCA boundary wrong at {g}"));
        }
    }

    // bit conservation and byte-level determinism on short desk runs
    let mut scn = Scenario::load(repo_file("desk.json")).unwrap();
    scn.duration_epochs = 50;
    for policy in [Policy::Standard, Policy::Random, Policy::PlainUcb] {
        let s = scn.clone().with_policy(policy);
        let a = run(&s, RunOptions::default()).unwrap();
        let b = run(&s, RunOptions::default()).unwrap();
        let l = a.bits;
        if l.generated != l.delivered + l.dropped + l.queued {
            failures.push(format!("{}: bits not conserved {l:?}", policy.as_str()));
        }
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        write_report(&a, da.path()).unwrap();
        write_report(&b, db.path()).unwrap();
        for f in ["metrics.csv", "upt.csv", "summary.csv"] {
            if std::fs::read(da.path().join(f)).unwrap() != std::fs::read(db.path().join(f)).unwrap() {
                failures.push(format!("{}: {f} differs between identical runs", policy.as_str()));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(120) {
        failures.push("over the time budget".into());
    }
    let detail = if failures.is_empty() {
        format!("worst chi2/critical {worst:.3}, {:.1} s", elapsed.as_secs_f64())
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

// ── 8. Fingerprint / clustering ─────────────────────────────────────────

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let edges = BinEdges::default();
    let nb = edges.bin_count();

    for _ in 0..2000 {
        let k = rng.random_range(1..400);
        let samples: Vec<PowerSample> = (0..k)
            .map(|i| PowerSample::new(rng.random_range(-110.0..-30.0), i))
            .collect();
        let fp = build_fingerprint(&samples, &edges, 0).unwrap();
        let sum: f64 = fp.bins().iter().sum();
        if (sum - 1.0).abs() > 1e-12 || fp.bins().iter().any(|&p| p < 0.0) {
            failures.push(format!("fingerprint not on the simplex (sum {sum})"));
            break;
        }
    }

    for _ in 0..5000 {
        let p = random_simplex(&mut rng, nb);
        let q = random_simplex(&mut rng, nb);
        let d = kl_divergence_raw(&p, &q).unwrap();
        let self_d = kl_divergence_raw(&p, &p).unwrap();
        if d < 0.0 || self_d.abs() > 1e-12 {
            failures.push(format!("Gibbs inequality violated: {d}, self {self_d}"));
            break;
        }
    }

    let mut worst_increase = 0.0f64;
    for seed in 0..20 {
        let k = 2 + (seed as usize % 5);
        let bases: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut rng, nb)).collect();
        let states: Vec<SensingFingerprint> = (0..300)
            .map(|i| {
                let noisy: Vec<f64> = bases[i % k].iter().map(|p| p + rng.random_range(0.0..0.05)).collect();
                let s: f64 = noisy.iter().sum();
                SensingFingerprint::from_probabilities(noisy.iter().map(|v| v / s).collect(), 0, 0).unwrap()
            })
            .collect();
        let res = kmeans_kl(&states, k, seed, 100).unwrap();
        for w in res.objective.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
        let labeled: Vec<LabeledState> = states
            .iter()
            .map(|s| LabeledState {
                state: s.clone(),
                utility: vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)],
            })
            .collect();
        let actions = ActionSet::new(vec![-82.0, -62.0]).unwrap();
        let model = train_cluster_model(&labeled, edges.clone(), actions, k, seed).unwrap();
        if ClusterModel::from_json(&model.to_json().unwrap()).unwrap() != model {
            failures.push("model JSON round trip not exact".into());
        }
        for s in states.iter().take(100) {
            let brute = model
                .clusters
                .iter()
                .enumerate()
                .map(|(i, c)| (i, kl_divergence_raw(s.bins(), &c.centroid).unwrap()))
                .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc })
                .0;
            if nearest_cluster(s, &model).unwrap() != brute {
                failures.push("nearest_cluster disagrees with exhaustive scan".into());
                break;
            }
        }
    }
    if worst_increase > 1e-9 {
        failures.push(format!("k-means objective increased by {worst_increase:e}"));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        failures.push("over the time budget".into());
    }
    let detail = if failures.is_empty() {
        format!("largest objective step {worst_increase:.2e}, {:.1} s", elapsed.as_secs_f64())
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

// ── Driver ──────────────────────────────────────────────────────────────

fn main() {
    let mut hard_failures = 0;
    let mut report = |id: u32, name: &str, o: Outcome, fatal: bool| {
        let tag = match (o.pass, fatal) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        if !o.pass && fatal {
            hard_failures += 1;
        }
        println!("[{tag}] {id}. {name}: {}", o.detail);
    };
    report(1, "bandit core vs brute force", criterion_1(), true);
    report(2, "stationary regret", criterion_2(), true);
    report(3, "warm-start benefit", criterion_3(), true);
    let desk = desk_pipeline();
    report(4, "desk adapting throughput", criterion_4(&desk), true);
    report(5, "desk standard-node p75 UPT", criterion_5(&desk), true);
    report(6, "desk random vs standard UPT (directional)", criterion_6(&desk), false);
    report(7, "MAC/PHY invariants", criterion_7(), true);
    report(8, "fingerprint/clustering invariants", criterion_8(), true);
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        std::process::exit(1);
    }
}

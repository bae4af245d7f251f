//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stageroute_core::config::SourceKind;
use stageroute_core::experiment::{self, HardgenSweep, SeedRun};
use stageroute_core::metrics::jaccard;
use stageroute_core::optimizer::TIE_TOL;
use stageroute_core::{
    solve_deploy_mip, solve_route_lp, BudgetSpec, Environment, Error, Infeasibility, PolicyKind,
    RunConfig, RunTrace,
};

use common::{bernoulli_model, mip_oracle, random_row, rows_oracle};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn default_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/replay_default.toml");
    RunConfig::load(&path).unwrap()
}

struct ReplayRuns {
    runs: BTreeMap<PolicyKind, Vec<SeedRun>>,
    budget: f64,
    elapsed: Duration,
}

impl ReplayRuns {
    fn compute() -> Self {
        let cfg = default_config();
        let start = Instant::now();
        let env = cfg.build_environment().unwrap();
        let runs = PolicyKind::ALL
            .iter()
            .map(|&k| (k, experiment::run_seeds(&env, &cfg, k).unwrap()))
            .collect();
        ReplayRuns {
            runs,
            budget: cfg.budget,
            elapsed: start.elapsed(),
        }
    }

    fn mean(&self, kind: PolicyKind, f: impl Fn(&SeedRun) -> f64) -> f64 {
        let runs = &self.runs[&kind];
        runs.iter().map(f).sum::<f64>() / runs.len() as f64
    }
}

fn solver_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut solver_time = Duration::ZERO;
    let mut lp_bad = 0;
    let mut lp_worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let rows: Vec<_> = (0..n)
            .map(|i| random_row(&mut rng, &format!("m{i:02}")))
            .collect();
        let b = rng.random_range(0.01..1.0);
        let t = Instant::now();
        let got = solve_route_lp(&rows, BudgetSpec::new(b).unwrap());
        solver_time += t.elapsed();
        match (got, rows_oracle(&rows, b)) {
            (Ok(d), Some(o)) => {
                let err = (d.objective - o).abs();
                lp_worst = lp_worst.max(err);
                if err > 1e-7 {
                    lp_bad += 1;
                }
            }
            (Err(_), None) => {}
            _ => lp_bad += 1,
        }
    }
    let mut mip_bad = 0;
    let mut mip_worst: f64 = 0.0;
    for _ in 0..300 {
        let n = rng.random_range(1..=12);
        let rows: Vec<_> = (0..n)
            .map(|i| random_row(&mut rng, &format!("m{i:02}")))
            .collect();
        let b = rng.random_range(0.05..1.0);
        let m_max = rng.random_range(1..=5);
        let t = Instant::now();
        let got = solve_deploy_mip(&rows, BudgetSpec::new(b).unwrap(), m_max);
        solver_time += t.elapsed();
        match (got, mip_oracle(&rows, b, m_max, TIE_TOL)) {
            (Ok(plan), Some((best, set))) => {
                let err = (plan.objective - best).abs();
                mip_worst = mip_worst.max(err);
                if err > 1e-9 || plan.selected != set {
                    mip_bad += 1;
                }
            }
            (Err(_), None) => {}
            _ => mip_bad += 1,
        }
    }
    let fast = solver_time < Duration::from_secs(30);
    outcome(
        lp_bad == 0 && mip_bad == 0 && fast,
        format!(
            "LP mismatches {lp_bad}/1000 (max err {lp_worst:.1e}), MIP mismatches {mip_bad}/300 \
             (max err {mip_worst:.1e}), solver time {:.2}s",
            solver_time.as_secs_f64()
        ),
    )
}

/// Count of rounds breaking a cap, the simplex, or the stage's live set.
fn invariant_violations(trace: &RunTrace, caps: &[f64]) -> usize {
    let mut bad = 0;
    for (i, rec) in trace.rounds.iter().enumerate() {
        let active = &trace.stages[rec.stage - 1].active;
        let mut sum = 0.0;
        let mut ok = active.contains(&rec.model);
        for (m, p) in trace.distribution(i) {
            sum += p;
            ok &= p <= caps[m] + 1e-9;
            ok &= p <= 0.0 || active.contains(&m);
        }
        ok &= (sum - 1.0).abs() <= 1e-9;
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn caps_of(env: &Environment) -> Vec<f64> {
    env.models().iter().map(|m| m.alpha).collect()
}

fn synthetic_config(
    horizon: u64,
    interval: u64,
    m_max: usize,
    budget: f64,
    seeds: Vec<u64>,
) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.environment = SourceKind::Synthetic;
    cfg.synthetic_spec = Some("in-memory".into());
    cfg.horizon = horizon;
    cfg.update_interval = Some(interval);
    cfg.m_max = m_max;
    cfg.budget = budget;
    cfg.seeds = seeds;
    cfg
}

/// Random stationary pool; the cheapest model has a full cap so every
/// instance is feasible for budgets above its cost.
fn stationary_instance(rng: &mut ChaCha8Rng) -> (Environment, RunConfig) {
    let n = rng.random_range(2..=6);
    let mut costs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
    costs.sort_by(f64::total_cmp);
    let models = (0..n)
        .map(|i| {
            let cap = if i == 0 {
                1.0
            } else {
                rng.random_range(0.2..1.0)
            };
            bernoulli_model(&format!("s{i}"), rng.random::<f64>(), costs[i], cap)
        })
        .collect();
    let env = Environment::synthetic(models, 0.01, 0.5).unwrap();
    let budget = rng.random_range(costs[0]..0.5);
    let m_max = rng.random_range(1..=n);
    (
        env,
        synthetic_config(20_000, 1000, m_max, budget, vec![0, 1, 2]),
    )
}

fn constraint_invariants(replay: &ReplayRuns) -> Outcome {
    let env = default_config().build_environment().unwrap();
    let caps = caps_of(&env);
    let mut rounds = 0;
    let mut bad = 0;
    for runs in replay.runs.values() {
        for r in runs {
            rounds += r.trace.len();
            bad += invariant_violations(&r.trace, &caps);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..5 {
        let (env, cfg) = stationary_instance(&mut rng);
        let caps = caps_of(&env);
        for kind in PolicyKind::ALL {
            for r in experiment::run_seeds(&env, &cfg, kind).unwrap() {
                rounds += r.trace.len();
                bad += invariant_violations(&r.trace, &caps);
            }
        }
    }
    let spec = HardgenSweep::new(2, vec![1 << 14], vec![0]);
    for kind in [PolicyKind::StageRoute, PolicyKind::Uniform] {
        let mut cfg = spec.config(1 << 14, 0);
        cfg.policy = kind;
        let env = cfg.build_environment().unwrap();
        let trace = experiment::simulate(&env, &cfg, kind, 0).unwrap();
        rounds += trace.len();
        bad += invariant_violations(&trace, &caps_of(&env));
    }
    outcome(bad == 0, format!("{bad} violating rounds out of {rounds}"))
}

fn replay_ordering(replay: &ReplayRuns) -> Outcome {
    let regret = |k| replay.mean(k, |r| r.regret.final_pseudo());
    let cost = |k| replay.mean(k, |r| r.trace.average_cost());
    let (sr, gr, un) = (
        regret(PolicyKind::StageRoute),
        regret(PolicyKind::Greedy),
        regret(PolicyKind::Uniform),
    );
    let b = replay.budget;
    let sr_cost = cost(PolicyKind::StageRoute);
    let un_cost = cost(PolicyKind::Uniform);
    let checks = [
        sr < gr,
        sr < un,
        sr_cost <= 1.05 * b,
        un_cost > b,
        replay.elapsed < Duration::from_secs(600),
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "regret SR {sr:.1} / Greedy {gr:.1} / Uniform {un:.1}; avg cost SR {:.3}b (limit 1.05b), \
             Uniform {:.3}b (> b); 4 policies x 10 seeds in {:.1}s",
            sr_cost / b,
            un_cost / b,
            replay.elapsed.as_secs_f64()
        ),
    )
}

fn oracle_nullity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for _ in 0..10 {
        let (env, cfg) = stationary_instance(&mut rng);
        for r in experiment::run_seeds(&env, &cfg, PolicyKind::Oracle).unwrap() {
            let rel = r.regret.final_pseudo().abs() / cfg.horizon as f64;
            worst = worst.max(rel);
            pass &= rel <= 1e-6;
        }
    }
    outcome(
        pass,
        format!("max |pseudo-regret|/T over 10 pools x 3 seeds: {worst:.2e} (limit 1e-6)"),
    )
}

fn deployment_tracking(replay: &ReplayRuns) -> Outcome {
    let sr = &replay.runs[&PolicyKind::StageRoute];
    let or = &replay.runs[&PolicyKind::Oracle];
    let per_seed: Vec<f64> = sr
        .iter()
        .zip(or)
        .map(|(a, b)| {
            let k = a.trace.stages.len();
            let from = k - k.div_ceil(4);
            let sims: Vec<f64> = (from..k)
                .map(|s| jaccard(&a.trace.stages[s].active, &b.trace.stages[s].active))
                .collect();
            sims.iter().sum::<f64>() / sims.len() as f64
        })
        .collect();
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    outcome(
        mean >= 0.6,
        format!("mean Jaccard over final quarter of stages {mean:.3} (limit 0.6)"),
    )
}

fn hardgen_report(policy: PolicyKind) -> (Option<f64>, Duration) {
    let horizons = (14..=20).map(|e| 1u64 << e).collect();
    let mut spec = HardgenSweep::new(2, horizons, (0..10).collect());
    spec.policy = policy;
    let start = Instant::now();
    let report = experiment::hardgen_sweep(&spec, None).unwrap();
    (report.slope, start.elapsed())
}

fn regret_scaling_stage_route() -> Outcome {
    let (slope, took) = hardgen_report(PolicyKind::StageRoute);
    let s = slope.unwrap_or(f64::NAN);
    outcome(
        (0.55..=0.90).contains(&s) && took < Duration::from_secs(900),
        format!(
            "StageRoute exponent {s:.4} (range [0.55, 0.90]) in {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn regret_scaling_uniform() -> Outcome {
    let (slope, took) = hardgen_report(PolicyKind::Uniform);
    let s = slope.unwrap_or(f64::NAN);
    outcome(
        s >= 0.95 && took < Duration::from_secs(900),
        format!(
            "uniform exponent {s:.4} (limit >= 0.95) in {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn feasibility_gate() -> Outcome {
    let models = ["a", "b", "c"]
        .iter()
        .map(|id| bernoulli_model(id, 0.5, 0.1, 0.4))
        .collect();
    let env = Environment::synthetic(models, 0.01, 1.0).unwrap();
    let cfg = synthetic_config(1000, 100, 2, 0.5, vec![0]);
    match experiment::run_seeds(&env, &cfg, PolicyKind::StageRoute) {
        Err(e @ Error::Infeasible(Infeasibility::Throughput { .. })) => {
            outcome(true, format!("aborted before simulation: {e}"))
        }
        Err(e) => outcome(false, format!("wrong diagnostic: {e}")),
        Ok(_) => outcome(false, "simulation ran".into()),
    }
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = default_config();
    cfg.output_dir = tmp.path().join("out");
    cfg.seeds = vec![0, 7];
    experiment::run(&cfg).unwrap();
    let first = read_tree(&cfg.output_dir);
    fs::remove_dir_all(&cfg.output_dir).unwrap();
    experiment::run(&cfg).unwrap();
    let second = read_tree(&cfg.output_dir);
    let differing = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .count()
        + second.keys().filter(|k| !first.contains_key(*k)).count();
    outcome(
        differing == 0 && !first.is_empty(),
        format!("{} files compared, {differing} differ", first.len()),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let replay = ReplayRuns::compute();
    let criteria: Vec<(&str, Check)> = vec![
        ("1 solver exactness", Box::new(solver_exactness)),
        (
            "2 constraint invariants",
            Box::new(|| constraint_invariants(&replay)),
        ),
        (
            "3 replay ordering and cost",
            Box::new(|| replay_ordering(&replay)),
        ),
        ("4 oracle nullity", Box::new(oracle_nullity)),
        (
            "5 deployment tracking",
            Box::new(|| deployment_tracking(&replay)),
        ),
        (
            "6a regret scaling (StageRoute)",
            Box::new(regret_scaling_stage_route),
        ),
        (
            "6b regret scaling (uniform control)",
            Box::new(regret_scaling_uniform),
        ),
        ("7 feasibility gate", Box::new(feasibility_gate)),
        ("8 determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

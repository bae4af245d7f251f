//! Seeded simulation driver and the batch entry points behind the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{RunConfig, SourceKind, StageGrid};
use crate::environment::Environment;
use crate::error::{Error, Infeasibility, Result};
use crate::metrics::{
    benchmark_segments, budget_violation, compute_regret, decision_heatmap, efficiency_trajectory,
    fit_regret_exponent, mean_series, write_heatmap, write_pairs, write_regret, write_stages,
    write_trajectory, write_violation, RegretSeries, RoundRecord, RunTrace, StageRecord,
};
use crate::optimizer::{best_cap_sum, check_feasibility, BudgetSpec};
use crate::policy::{Policy, PolicyKind, StageContext};

/// ChaCha stream carrying environment randomness; the policy uses stream 0.
const ENV_STREAM: u64 = 1;

/// Refuses pools that cannot carry a full unit of traffic at round 1.
pub fn feasibility_gate(env: &Environment, m_max: usize) -> Result<()> {
    let caps: Vec<f64> = env
        .available_indices(1)
        .into_iter()
        .map(|i| env.models()[i].alpha)
        .collect();
    if caps.is_empty() || !check_feasibility(&caps, m_max) {
        return Err(Infeasibility::Throughput {
            best_cap_sum: best_cap_sum(&caps, m_max),
        }
        .into());
    }
    Ok(())
}

/// Plays one seeded run of `kind` against `env`.
pub fn simulate(
    env: &Environment,
    cfg: &RunConfig,
    kind: PolicyKind,
    seed: u64,
) -> Result<RunTrace> {
    let horizon = cfg.horizon;
    let ids: Vec<_> = env.models().iter().map(|m| m.model_id.clone()).collect();
    let caps: Vec<f64> = env.models().iter().map(|m| m.alpha).collect();
    let mut policy = Policy::new(kind, ids.clone(), caps, cfg.policy_options(env)?, seed)?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(ENV_STREAM);

    let mut trace = RunTrace::with_capacity(ids, horizon as usize);
    for (k, (start, end)) in cfg.grid().bounds(horizon).into_iter().enumerate() {
        let available = env.available_indices(start);
        let truth = env.true_means_at(start);
        policy.plan_stage(&StageContext {
            round: start,
            available: &available,
            true_means: &truth,
        })?;
        let plan = policy.current_plan().expect("stage was just planned");
        trace.push_stage(StageRecord {
            start,
            end,
            active: policy.active().to_vec(),
            plan_weights: plan
                .weights
                .iter()
                .filter_map(|(id, &w)| env.index_of(id).map(|i| (i, w)))
                .collect(),
        });
        for t in start..=end {
            let routing = policy.route_query()?;
            let model = policy.sample(&routing);
            let query = env.sample_query(&mut env_rng);
            let fb = env.feedback_for(t, query, model, &mut env_rng)?;
            policy.on_feedback(model, fb.reward, fb.cost)?;
            trace.push_round(
                RoundRecord {
                    t,
                    stage: k + 1,
                    model,
                    reward: fb.reward,
                    cost: fb.cost,
                    budget_feasible: routing.budget_feasible,
                },
                &routing.weights,
            );
        }
    }
    Ok(trace)
}

/// One seed's trace with its derived series.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: RunTrace,
    pub regret: RegretSeries,
    pub violation: Vec<f64>,
}

impl SeedRun {
    pub fn summary(&self) -> SeedSummary {
        SeedSummary {
            seed: self.seed,
            final_pseudo: self.regret.final_pseudo(),
            final_realized: self.regret.final_realized(),
            avg_reward: self.trace.average_reward(),
            avg_cost: self.trace.average_cost(),
            final_violation: self.violation.last().copied().unwrap_or(0.0),
            max_violation: self
                .violation
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            infeasible_rounds: self.trace.infeasible_rounds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_pseudo: f64,
    pub final_realized: f64,
    pub avg_reward: f64,
    pub avg_cost: f64,
    pub final_violation: f64,
    pub max_violation: f64,
    pub infeasible_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub opt_star: f64,
    pub seeds: Vec<SeedSummary>,
}

impl RunSummary {
    fn mean_of(&self, f: impl Fn(&SeedSummary) -> f64) -> f64 {
        self.seeds.iter().map(f).sum::<f64>() / self.seeds.len() as f64
    }

    pub fn mean_final_pseudo(&self) -> f64 {
        self.mean_of(|s| s.final_pseudo)
    }

    pub fn mean_final_realized(&self) -> f64 {
        self.mean_of(|s| s.final_realized)
    }

    pub fn mean_avg_cost(&self) -> f64 {
        self.mean_of(|s| s.avg_cost)
    }

    pub fn mean_avg_reward(&self) -> f64 {
        self.mean_of(|s| s.avg_reward)
    }
}

/// Runs every seed of `cfg` with `kind` against a shared environment, in
/// parallel, returning traces in seed order.
pub fn run_seeds(env: &Environment, cfg: &RunConfig, kind: PolicyKind) -> Result<Vec<SeedRun>> {
    feasibility_gate(env, cfg.m_max)?;
    let budget = BudgetSpec::new(cfg.budget)?;
    let segments = benchmark_segments(env, cfg.grid(), cfg.horizon, budget, cfg.m_max);
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let trace = simulate(env, cfg, kind, seed)?;
            let regret = compute_regret(&trace, env, &segments);
            let violation = budget_violation(&trace, cfg.budget);
            Ok(SeedRun {
                seed,
                trace,
                regret,
                violation,
            })
        })
        .collect()
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs `cfg` end to end and writes every metric file under its output
/// directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let env = cfg.build_environment()?;
    run_with_env(cfg, &env)
}

pub fn run_with_env(cfg: &RunConfig, env: &Environment) -> Result<RunSummary> {
    let runs = run_seeds(env, cfg, cfg.policy)?;
    let budget = BudgetSpec::new(cfg.budget)?;
    let opt_star = benchmark_segments(env, cfg.grid(), cfg.horizon, budget, cfg.m_max)
        .iter()
        .map(|s| s.len() as f64 * s.rate)
        .sum();
    let out = cfg.output_path();
    mkdir(&out)?;
    write_text(&out.join("config.toml"), &cfg.canonical_toml())?;

    let window = cfg.trajectory_window as usize;
    runs.par_iter().try_for_each(|r| -> Result<()> {
        let dir = out.join(format!("seed-{}", r.seed));
        mkdir(&dir)?;
        write_regret(&dir.join("regret.csv"), &r.regret)?;
        write_violation(&dir.join("violation.csv"), &r.violation)?;
        write_heatmap(&dir.join("heatmap.csv"), &decision_heatmap(&r.trace))?;
        let points = efficiency_trajectory(&r.trace, window)?;
        write_trajectory(&dir.join("trajectory.csv"), window, r.trace.len(), &points)?;
        write_stages(&dir.join("stages.csv"), &r.trace)
    })?;

    let pseudo: Vec<&[f64]> = runs.iter().map(|r| r.regret.pseudo.as_slice()).collect();
    let realized: Vec<&[f64]> = runs.iter().map(|r| r.regret.realized.as_slice()).collect();
    write_regret(
        &out.join("regret_mean.csv"),
        &RegretSeries {
            pseudo: mean_series(&pseudo),
            realized: mean_series(&realized),
        },
    )?;
    let viol: Vec<&[f64]> = runs.iter().map(|r| r.violation.as_slice()).collect();
    write_violation(&out.join("violation_mean.csv"), &mean_series(&viol))?;

    let summary = RunSummary {
        policy: cfg.policy,
        opt_star,
        seeds: runs.iter().map(SeedRun::summary).collect(),
    };
    write_summary(&out.join("summary.csv"), &summary)?;
    Ok(summary)
}

fn write_summary(path: &Path, s: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "final_pseudo_regret",
        "final_realized_regret",
        "avg_reward",
        "avg_cost",
        "final_violation",
        "max_violation",
        "infeasible_rounds",
    ])?;
    for r in &s.seeds {
        w.write_record([
            r.seed.to_string(),
            r.final_pseudo.to_string(),
            r.final_realized.to_string(),
            r.avg_reward.to_string(),
            r.avg_cost.to_string(),
            r.final_violation.to_string(),
            r.max_violation.to_string(),
            r.infeasible_rounds.to_string(),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        s.mean_final_pseudo().to_string(),
        s.mean_final_realized().to_string(),
        s.mean_avg_reward().to_string(),
        s.mean_avg_cost().to_string(),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Values to sweep; an empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub m_max: Vec<usize>,
    pub budget: Vec<f64>,
    pub update_interval: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub name: String,
    pub config: RunConfig,
}

impl SweepGrid {
    /// Cell configs in `m_max`-major, then budget, then interval order.
    pub fn cells(&self, base: &RunConfig) -> Vec<SweepCell> {
        let m_max = if self.m_max.is_empty() {
            vec![base.m_max]
        } else {
            self.m_max.clone()
        };
        let budget = if self.budget.is_empty() {
            vec![base.budget]
        } else {
            self.budget.clone()
        };
        let interval: Vec<Option<u64>> = if self.update_interval.is_empty() {
            vec![None]
        } else {
            self.update_interval.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for &m in &m_max {
            for &b in &budget {
                for &l in &interval {
                    let mut cfg = base.clone();
                    cfg.m_max = m;
                    cfg.budget = b;
                    if let Some(l) = l {
                        cfg.update_interval = Some(l);
                        cfg.stages = None;
                    }
                    let grid = match cfg.grid() {
                        StageGrid::Stages(k) => format!("k{k}"),
                        StageGrid::Interval(l) => format!("l{l}"),
                    };
                    let name = format!("cell-{:03}-m{m}-b{b}-{grid}", cells.len() + 1);
                    cfg.output_dir = base.output_dir.join(&name);
                    cells.push(SweepCell { name, config: cfg });
                }
            }
        }
        cells
    }
}

/// Runs every grid cell (sharing seeds and environment) and writes an index
/// of final regrets.
pub fn sweep(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<(SweepCell, RunSummary)>> {
    base.validate()?;
    let cells = grid.cells(base);
    for c in &cells {
        c.config.validate()?;
    }
    let env = base.build_environment()?;
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let summary = run_with_env(&cell.config, &env)?;
        results.push((cell, summary));
    }
    let out = base.output_path();
    mkdir(&out)?;
    let path = out.join("index.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "cell",
        "m_max",
        "budget",
        "update_interval",
        "stages",
        "mean_final_pseudo_regret",
        "mean_final_realized_regret",
        "mean_avg_cost",
    ])?;
    for (cell, s) in &results {
        let c = &cell.config;
        w.write_record([
            cell.name.clone(),
            c.m_max.to_string(),
            c.budget.to_string(),
            c.update_interval.map(|l| l.to_string()).unwrap_or_default(),
            c.grid().n_stages(c.horizon).to_string(),
            s.mean_final_pseudo().to_string(),
            s.mean_final_realized().to_string(),
            s.mean_avg_cost().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Regret-scaling experiment on drifting-frontier instances.
#[derive(Debug, Clone, PartialEq)]
pub struct HardgenSweep {
    pub models: usize,
    pub c_s: f64,
    pub horizons: Vec<u64>,
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub policy: PolicyKind,
}

impl HardgenSweep {
    pub fn new(models: usize, horizons: Vec<u64>, seeds: Vec<u64>) -> Self {
        Self {
            models,
            c_s: 1.0,
            horizons,
            seeds,
            gamma: 0.1,
            policy: PolicyKind::StageRoute,
        }
    }

    /// `K = round(T^{1/3})`.
    pub fn stages_for(horizon: u64) -> u64 {
        ((horizon as f64).cbrt().round() as u64).max(1)
    }

    /// The run config used at `horizon` for instance/policy seed `seed`.
    pub fn config(&self, horizon: u64, seed: u64) -> RunConfig {
        RunConfig {
            horizon,
            stages: Some(Self::stages_for(horizon)),
            update_interval: None,
            m_max: self.models,
            budget: 1.0,
            gamma: self.gamma,
            seeds: vec![seed],
            policy: self.policy,
            environment: SourceKind::Hardgen,
            hardgen_models: self.models,
            hardgen_c_s: self.c_s,
            hardgen_seed: seed,
            ..RunConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardgenRow {
    pub horizon: u64,
    pub stages: u64,
    pub final_pseudo: Vec<f64>,
}

impl HardgenRow {
    pub fn mean(&self) -> f64 {
        self.final_pseudo.iter().sum::<f64>() / self.final_pseudo.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardgenReport {
    pub rows: Vec<HardgenRow>,
    /// Log-log slope of mean final pseudo-regret; needs four horizons.
    pub slope: Option<f64>,
}

/// Final pseudo-regret of one seeded run on a fresh hard instance.
pub fn hardgen_point(spec: &HardgenSweep, horizon: u64, seed: u64) -> Result<f64> {
    let cfg = spec.config(horizon, seed);
    cfg.validate()?;
    let env = cfg.build_environment()?;
    let budget = BudgetSpec::new(cfg.budget)?;
    let segments = benchmark_segments(&env, cfg.grid(), horizon, budget, cfg.m_max);
    let trace = simulate(&env, &cfg, spec.policy, seed)?;
    Ok(compute_regret(&trace, &env, &segments).final_pseudo())
}

pub fn hardgen_sweep(spec: &HardgenSweep, out: Option<&Path>) -> Result<HardgenReport> {
    if spec.horizons.is_empty() || spec.horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "horizons",
            "must be non-empty and strictly increasing",
        ));
    }
    if spec.seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let jobs: Vec<(u64, u64)> = spec
        .horizons
        .iter()
        .flat_map(|&t| spec.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let finals: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, s)| hardgen_point(spec, t, s))
        .collect::<Result<_>>()?;
    let rows: Vec<HardgenRow> = spec
        .horizons
        .iter()
        .zip(finals.chunks(spec.seeds.len()))
        .map(|(&horizon, f)| HardgenRow {
            horizon,
            stages: HardgenSweep::stages_for(horizon),
            final_pseudo: f.to_vec(),
        })
        .collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.horizon as f64, r.mean())).collect();
    let slope = if points.len() >= 4 {
        Some(fit_regret_exponent(&points)?)
    } else {
        None
    };
    let report = HardgenReport { rows, slope };
    if let Some(dir) = out {
        write_hardgen(dir, spec, &report)?;
    }
    Ok(report)
}

fn write_hardgen(dir: &Path, spec: &HardgenSweep, report: &HardgenReport) -> Result<()> {
    mkdir(dir)?;
    let path: PathBuf = dir.join("hardgen.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![
        "horizon".to_string(),
        "stages".to_string(),
        "mean_final_pseudo_regret".to_string(),
    ];
    header.extend(spec.seeds.iter().map(|s| format!("seed_{s}")));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![
            r.horizon.to_string(),
            r.stages.to_string(),
            r.mean().to_string(),
        ];
        rec.extend(r.final_pseudo.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_pairs(
        &dir.join("hardgen_fit.csv"),
        &[
            ("policy", spec.policy.to_string()),
            ("models", spec.models.to_string()),
            ("c_s", spec.c_s.to_string()),
            ("gamma", spec.gamma.to_string()),
            ("budget", "1".to_string()),
            ("stage_rule", "round(T^(1/3))".to_string()),
            (
                "slope",
                report
                    .slope
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "NA".into()),
            ),
        ],
    )
}

//! Post-processing of run traces: the offline benchmark, regret, budget
//! accounting, deployment heatmaps and performance-cost trajectories, plus the
//! delimited-text writers for each.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::StageGrid;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::optimizer::{optimal_rate, BudgetSpec, CandidateRow};
use crate::ModelId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    /// 1-based stage index.
    pub stage: usize,
    pub model: usize,
    pub reward: f64,
    pub cost: f64,
    /// False when the policy had to fall back because no routing
    /// distribution met the budget at the current estimates.
    pub budget_feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub start: u64,
    pub end: u64,
    /// Live model indices.
    pub active: Vec<usize>,
    /// `(model index, weight)` from the stage's deployment plan.
    pub plan_weights: Vec<(usize, f64)>,
}

/// Everything a run produced, in round order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub model_ids: Vec<ModelId>,
    pub rounds: Vec<RoundRecord>,
    pub stages: Vec<StageRecord>,
    /// Routing distributions, flattened; round `i` owns
    /// `dist[dist_offsets[i]..dist_offsets[i + 1]]`.
    dist: Vec<(u32, f64)>,
    dist_offsets: Vec<usize>,
}

impl RunTrace {
    pub fn new(model_ids: Vec<ModelId>) -> Self {
        Self {
            model_ids,
            rounds: Vec::new(),
            stages: Vec::new(),
            dist: Vec::new(),
            dist_offsets: vec![0],
        }
    }

    pub fn with_capacity(model_ids: Vec<ModelId>, rounds: usize) -> Self {
        let mut trace = Self::new(model_ids);
        trace.rounds.reserve(rounds);
        trace.dist_offsets.reserve(rounds);
        trace
    }

    pub fn push_stage(&mut self, stage: StageRecord) {
        self.stages.push(stage);
    }

    pub fn push_round(&mut self, record: RoundRecord, dist: &[(usize, f64)]) {
        self.rounds.push(record);
        self.dist.extend(dist.iter().map(|&(m, p)| (m as u32, p)));
        self.dist_offsets.push(self.dist.len());
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Routing distribution used at the `i`-th recorded round (0-based).
    pub fn distribution(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.dist[self.dist_offsets[i]..self.dist_offsets[i + 1]]
            .iter()
            .map(|&(m, p)| (m as usize, p))
    }

    pub fn prob_of_choice(&self, i: usize) -> f64 {
        let m = self.rounds[i].model;
        self.distribution(i)
            .find(|&(j, _)| j == m)
            .map_or(0.0, |(_, p)| p)
    }

    pub fn infeasible_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| !r.budget_feasible).count()
    }

    pub fn average_cost(&self) -> f64 {
        mean(self.rounds.iter().map(|r| r.cost))
    }

    pub fn average_reward(&self) -> f64 {
        mean(self.rounds.iter().map(|r| r.reward))
    }

    /// Rounds `[from, to)` as a standalone trace (stages dropped).
    pub fn slice(&self, from: usize, to: usize) -> RunTrace {
        let mut out = RunTrace::new(self.model_ids.clone());
        for i in from..to {
            let d: Vec<(usize, f64)> = self.distribution(i).collect();
            out.push_round(self.rounds[i], &d);
        }
        out
    }

    /// Appends `other`'s rounds to this trace.
    pub fn extend_rounds(&mut self, other: &RunTrace) {
        for i in 0..other.len() {
            let d: Vec<(usize, f64)> = other.distribution(i).collect();
            self.push_round(other.rounds[i], &d);
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// A stretch of rounds over which the benchmark rate is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSegment {
    pub start: u64,
    pub end: u64,
    pub rate: f64,
}

impl BenchmarkSegment {
    pub fn len(&self) -> u64 {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// Splits the horizon at stage starts and at every change of a true mean,
/// and evaluates the optimal rate over the pool available at each piece's
/// start. For stationary means this is exactly the per-stage benchmark.
pub fn benchmark_segments(
    env: &Environment,
    grid: StageGrid,
    horizon: u64,
    budget: BudgetSpec,
    m_max: usize,
) -> Vec<BenchmarkSegment> {
    let mut cuts = grid.starts(horizon);
    cuts.extend(
        env.mean_change_points()
            .into_iter()
            .filter(|&t| t <= horizon),
    );
    cuts.sort_unstable();
    cuts.dedup();
    cuts.iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = cuts.get(i + 1).map_or(horizon, |&n| n - 1);
            BenchmarkSegment {
                start,
                end,
                rate: pool_rate(env, start, budget, m_max),
            }
        })
        .collect()
}

/// `V(b, M_t)` from the true means at round `t`.
pub fn pool_rate(env: &Environment, t: u64, budget: BudgetSpec, m_max: usize) -> f64 {
    let means = env.true_means_at(t);
    let rows: Vec<CandidateRow> = env
        .available_indices(t)
        .into_iter()
        .map(|i| {
            let m = &env.models()[i];
            CandidateRow::new(m.model_id.clone(), means[i].0, means[i].1, m.alpha)
        })
        .collect();
    optimal_rate(&rows, budget, m_max)
}

/// The time-varying offline optimum over `horizon` rounds.
pub fn compute_opt_star(
    env: &Environment,
    grid: StageGrid,
    horizon: u64,
    budget: BudgetSpec,
    m_max: usize,
) -> f64 {
    benchmark_segments(env, grid, horizon, budget, m_max)
        .iter()
        .map(|s| s.len() as f64 * s.rate)
        .sum()
}

/// Cumulative regret after every round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretSeries {
    /// Benchmark prefix minus the expected true mean of each round's choice,
    /// `Σ_m p_t(m)·μ_m`.
    pub pseudo: Vec<f64>,
    /// Benchmark prefix minus the realized rewards.
    pub realized: Vec<f64>,
}

impl RegretSeries {
    pub fn final_pseudo(&self) -> f64 {
        self.pseudo.last().copied().unwrap_or(0.0)
    }

    pub fn final_realized(&self) -> f64 {
        self.realized.last().copied().unwrap_or(0.0)
    }
}

pub fn compute_regret(
    trace: &RunTrace,
    env: &Environment,
    segments: &[BenchmarkSegment],
) -> RegretSeries {
    let n = trace.len();
    let mut pseudo = Vec::with_capacity(n);
    let mut realized = Vec::with_capacity(n);
    let (mut bench, mut got_mean, mut got_reward) = (0.0, 0.0, 0.0);
    let mut seg = 0;
    let mut means = segments
        .first()
        .map(|s| env.true_means_at(s.start))
        .unwrap_or_default();
    for (i, r) in trace.rounds.iter().enumerate() {
        while seg + 1 < segments.len() && segments[seg + 1].start <= r.t {
            seg += 1;
            means = env.true_means_at(segments[seg].start);
        }
        bench += segments.get(seg).map_or(0.0, |s| s.rate);
        got_mean += trace
            .distribution(i)
            .map(|(m, p)| p * means[m].0)
            .sum::<f64>();
        got_reward += r.reward;
        pseudo.push(bench - got_mean);
        realized.push(bench - got_reward);
    }
    RegretSeries { pseudo, realized }
}

/// Running average cost minus `b`, per round.
pub fn budget_violation(trace: &RunTrace, b: f64) -> Vec<f64> {
    let mut total = 0.0;
    trace
        .rounds
        .iter()
        .enumerate()
        .map(|(i, r)| {
            total += r.cost;
            total / (i + 1) as f64 - b
        })
        .collect()
}

/// Stage × model matrix of average routing probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub model_ids: Vec<ModelId>,
    pub rows: Vec<Vec<f64>>,
}

pub fn decision_heatmap(trace: &RunTrace) -> Heatmap {
    let n_models = trace.model_ids.len();
    let n_stages = trace.rounds.iter().map(|r| r.stage).max().unwrap_or(0);
    let mut rows = vec![vec![0.0; n_models]; n_stages];
    let mut counts = vec![0usize; n_stages];
    for (i, r) in trace.rounds.iter().enumerate() {
        let row = &mut rows[r.stage - 1];
        for (m, p) in trace.distribution(i) {
            row[m] += p;
        }
        counts[r.stage - 1] += 1;
    }
    for (row, &c) in rows.iter_mut().zip(&counts) {
        if c > 0 {
            row.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    Heatmap {
        model_ids: trace.model_ids.clone(),
        rows,
    }
}

/// `(mean reward, mean cost)` over consecutive non-overlapping windows. A
/// trailing partial window is reported over the rounds it has.
pub fn efficiency_trajectory(trace: &RunTrace, window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 {
        return Err(Error::domain("trajectory window must be positive"));
    }
    Ok(trace
        .rounds
        .chunks(window)
        .map(|w| {
            (
                mean(w.iter().map(|r| r.reward)),
                mean(w.iter().map(|r| r.cost)),
            )
        })
        .collect())
}

/// Least-squares slope of `log regret` against `log T`.
pub fn fit_regret_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::domain(format!(
            "slope fit needs at least 4 horizons, got {}",
            points.len()
        )));
    }
    if let Some(&(t, r)) = points.iter().find(|&&(t, r)| !(t > 0.0 && r > 0.0)) {
        return Err(Error::domain(format!(
            "slope fit needs positive horizons and regrets, got ({t}, {r})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("slope fit needs distinct horizons"));
    }
    Ok(sxy / sxx)
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<&T> = a.iter().collect();
    let b: BTreeSet<&T> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Element-wise mean of equally long series.
pub fn mean_series(series: &[&[f64]]) -> Vec<f64> {
    let n = series.iter().map(|s| s.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64)
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

pub fn write_regret(path: &Path, series: &RegretSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["round", "pseudo_regret", "realized_regret"])?;
    for (i, (p, r)) in series.pseudo.iter().zip(&series.realized).enumerate() {
        w.write_record([(i + 1).to_string(), p.to_string(), r.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_violation(path: &Path, violation: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["round", "avg_cost_minus_budget"])?;
    for (i, v) in violation.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_heatmap(path: &Path, heatmap: &Heatmap) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["stage".to_string()];
    header.extend(heatmap.model_ids.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for (k, row) in heatmap.rows.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trajectory(
    path: &Path,
    window: usize,
    rounds: usize,
    points: &[(f64, f64)],
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["window", "end_round", "mean_reward", "mean_cost"])?;
    for (i, (r, c)) in points.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            ((i + 1) * window).min(rounds).to_string(),
            r.to_string(),
            c.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_stages(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["stage", "start", "end", "active_set", "plan_weights"])?;
    for (k, s) in trace.stages.iter().enumerate() {
        let active = s
            .active
            .iter()
            .map(|&i| trace.model_ids[i].as_str())
            .collect::<Vec<_>>()
            .join(";");
        let weights = s
            .plan_weights
            .iter()
            .map(|&(i, p)| format!("{}={}", trace.model_ids[i], p))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            (k + 1).to_string(),
            s.start.to_string(),
            s.end.to_string(),
            active,
            weights,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a plain `key,value` table.
pub fn write_pairs(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "key,value").map_err(io)?;
    for (k, v) in pairs {
        writeln!(w, "{k},{v}").map_err(io)?;
    }
    finish(path, w)
}

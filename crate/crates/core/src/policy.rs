//! Deployment-and-routing policies.
//!
//! Every policy exposes the same two-timescale interface: [`Policy::plan_stage`]
//! fixes the live set at a stage boundary and [`Policy::route_query`] produces
//! the per-query distribution over that set. Feedback always flows into the
//! lifetime statistics, even for policies that never read them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::estimator::{cost_lcb, reward_ucb, ConfidenceParams, EmpiricalStats};
use crate::optimizer::{
    best_cap_sum, binomial, check_feasibility, next_combination, solve_dense,
    solve_deploy_mip_with, BudgetSpec, CandidateRow, Coeff, DeployStrategy, DeploymentPlan,
    RoutingDistribution, ENUMERATION_LIMIT,
};
use crate::ModelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    StageRoute,
    Greedy,
    Uniform,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::StageRoute,
        PolicyKind::Greedy,
        PolicyKind::Uniform,
        PolicyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::StageRoute => "stage_route",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "policy",
                    format!("unknown policy `{s}` (stage_route, greedy, uniform, oracle)"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOptions {
    pub m_max: usize,
    pub budget: BudgetSpec,
    pub confidence: ConfidenceParams,
    /// Pad the StageRoute live set up to `min(M_max, |pool|)` with the
    /// highest-UCB models the deployment solve left at zero weight.
    pub fill_idle_slots: bool,
    pub strategy: DeployStrategy,
    /// Fail the query instead of falling back to the cheapest-by-estimate
    /// distribution when the routing LP has no budget-feasible point.
    pub abort_on_route_infeasible: bool,
}

/// Per-query routing decision over the live set.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    /// `(model index, probability)` for every live model, in id order.
    pub weights: Vec<(usize, f64)>,
    /// False when the routing LP had no budget-feasible point and the
    /// cheapest-by-estimate distribution was used instead.
    pub budget_feasible: bool,
}

/// Inputs a policy sees at a stage boundary.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    pub round: u64,
    /// Indices of the models available at `round`.
    pub available: &'a [usize],
    /// True `(mean reward, expected cost)` for every model; only the oracle
    /// reads it.
    pub true_means: &'a [(f64, f64)],
}

#[derive(Debug, Clone)]
struct StagePlan {
    plan: DeploymentPlan,
    /// Live model indices, sorted by model id.
    active: Vec<usize>,
    /// Stage-fixed routing weights, aligned with `active` (oracle and uniform).
    fixed: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    opts: PolicyOptions,
    ids: Vec<ModelId>,
    caps: Vec<f64>,
    stats: Vec<EmpiricalStats>,
    current: Option<StagePlan>,
    stage_index: usize,
    rng: ChaCha8Rng,
}

impl Policy {
    pub fn new(
        kind: PolicyKind,
        ids: Vec<ModelId>,
        caps: Vec<f64>,
        opts: PolicyOptions,
        seed: u64,
    ) -> Result<Self> {
        opts.confidence.validate()?;
        if ids.len() != caps.len() {
            return Err(Error::domain("ids and caps differ in length"));
        }
        if opts.m_max == 0 {
            return Err(Error::domain("M_max must be positive"));
        }
        let stats = vec![EmpiricalStats::new(opts.confidence.c_lo); ids.len()];
        Ok(Self {
            kind,
            opts,
            ids,
            caps,
            stats,
            current: None,
            stage_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn stats(&self) -> &[EmpiricalStats] {
        &self.stats
    }

    pub fn stats_for(&self, id: &ModelId) -> Option<&EmpiricalStats> {
        self.ids
            .iter()
            .position(|m| m == id)
            .map(|i| &self.stats[i])
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }

    pub fn current_plan(&self) -> Option<&DeploymentPlan> {
        self.current.as_ref().map(|s| &s.plan)
    }

    /// Live model indices in id order.
    pub fn active(&self) -> &[usize] {
        self.current.as_ref().map_or(&[], |s| &s.active)
    }

    pub fn ucb(&self, idx: usize) -> f64 {
        reward_ucb(&self.stats[idx], &self.opts.confidence)
    }

    pub fn lcb(&self, idx: usize) -> f64 {
        cost_lcb(&self.stats[idx], &self.opts.confidence)
    }

    /// Chooses the live set for the stage starting at `ctx.round`.
    pub fn plan_stage(&mut self, ctx: &StageContext<'_>) -> Result<&DeploymentPlan> {
        if ctx.available.is_empty() {
            return Err(Infeasibility::Throughput { best_cap_sum: 0.0 }.into());
        }
        let caps: Vec<f64> = ctx.available.iter().map(|&i| self.caps[i]).collect();
        if !check_feasibility(&caps, self.opts.m_max) {
            return Err(Infeasibility::Throughput {
                best_cap_sum: best_cap_sum(&caps, self.opts.m_max),
            }
            .into());
        }
        let stage = match self.kind {
            PolicyKind::StageRoute => self.plan_optimistic(ctx.available)?,
            PolicyKind::Oracle => self.plan_oracle(ctx)?,
            PolicyKind::Greedy => self.plan_greedy(ctx.available)?,
            PolicyKind::Uniform => self.plan_uniform(ctx.available)?,
        };
        self.stage_index += 1;
        Ok(&self.current.insert(stage).plan)
    }

    fn slots(&self, pool: usize) -> usize {
        self.opts.m_max.min(pool)
    }

    fn by_id(&self, mut idx: Vec<usize>) -> Vec<usize> {
        idx.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        idx
    }

    fn index(&self, id: &ModelId) -> usize {
        self.ids
            .iter()
            .position(|m| m == id)
            .expect("plan ids come from the policy's own rows")
    }

    fn stage_from_plan(&self, plan: DeploymentPlan) -> StagePlan {
        let active = plan.active_set.iter().map(|id| self.index(id)).collect();
        StagePlan {
            plan,
            active,
            fixed: None,
        }
    }

    fn plan_optimistic(&self, available: &[usize]) -> Result<StagePlan> {
        let rows: Vec<CandidateRow> = available
            .iter()
            .map(|&i| {
                CandidateRow::new(self.ids[i].clone(), self.ucb(i), self.lcb(i), self.caps[i])
            })
            .collect();
        let mut plan =
            solve_deploy_mip_with(&rows, self.opts.budget, self.opts.m_max, self.opts.strategy)?;
        if self.opts.fill_idle_slots {
            let k = self.slots(available.len());
            let mut idle: Vec<usize> = available
                .iter()
                .copied()
                .filter(|&i| !plan.active_set.contains(&self.ids[i]))
                .collect();
            idle.sort_by(|&a, &b| {
                self.ucb(b)
                    .total_cmp(&self.ucb(a))
                    .then(self.ids[a].cmp(&self.ids[b]))
            });
            let extra = k.saturating_sub(plan.active_set.len());
            plan.active_set
                .extend(idle.into_iter().take(extra).map(|i| self.ids[i].clone()));
            plan.active_set.sort();
        }
        Ok(self.stage_from_plan(plan))
    }

    fn plan_oracle(&self, ctx: &StageContext<'_>) -> Result<StagePlan> {
        let rows: Vec<CandidateRow> = ctx
            .available
            .iter()
            .map(|&i| {
                let (mu, cost) = ctx.true_means[i];
                CandidateRow::new(self.ids[i].clone(), mu, cost, self.caps[i])
            })
            .collect();
        let plan =
            solve_deploy_mip_with(&rows, self.opts.budget, self.opts.m_max, self.opts.strategy)?;
        let mut stage = self.stage_from_plan(plan);
        let fixed = stage
            .active
            .iter()
            .map(|&i| stage.plan.weights[&self.ids[i]])
            .collect();
        stage.fixed = Some(fixed);
        Ok(stage)
    }

    fn plan_greedy(&self, available: &[usize]) -> Result<StagePlan> {
        let k = self.slots(available.len());
        let mut ranked: Vec<(usize, f64)> = available
            .iter()
            .map(|&i| (i, self.ucb(i) / self.lcb(i)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(self.ids[a.0].cmp(&self.ids[b.0])));

        // Walk the ranking, skipping a model only when taking it would leave
        // the remaining slots unable to reach unit capacity.
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        let mut cap_sum = 0.0;
        for (pos, &(i, _)) in ranked.iter().enumerate() {
            if chosen.len() == k {
                break;
            }
            let slots_left = k - chosen.len() - 1;
            let rest: Vec<f64> = ranked[pos + 1..]
                .iter()
                .map(|&(j, _)| self.caps[j])
                .collect();
            if cap_sum + self.caps[i] + best_cap_sum(&rest, slots_left) >= 1.0 - 1e-9 {
                chosen.push(i);
                cap_sum += self.caps[i];
            }
        }
        let active = self.by_id(chosen);
        let weights = clipped_uniform(&active.iter().map(|&i| self.caps[i]).collect::<Vec<_>>());
        Ok(self.record(active, weights, false))
    }

    /// Uniform over the k-subsets of `available` whose caps cover a unit of
    /// traffic: one unrestricted draw, then a uniform pick among the feasible
    /// subsets if that draw falls short.
    fn plan_uniform(&mut self, available: &[usize]) -> Result<StagePlan> {
        let n = available.len();
        let k = self.slots(n);
        let covers = |s: &Policy, picked: &[usize]| {
            picked.iter().map(|&i| s.caps[i]).sum::<f64>() >= 1.0 - 1e-9
        };
        let mut picked: Vec<usize> = sample(&mut self.rng, n, k)
            .into_iter()
            .map(|p| available[p])
            .collect();
        if !covers(self, &picked) {
            let feasible = if binomial(n as u64, k as u64) <= ENUMERATION_LIMIT {
                let mut all = Vec::new();
                let mut combo: Vec<usize> = (0..k).collect();
                loop {
                    let set: Vec<usize> = combo.iter().map(|&p| available[p]).collect();
                    if covers(self, &set) {
                        all.push(set);
                    }
                    if !next_combination(&mut combo, n) {
                        break;
                    }
                }
                (!all.is_empty()).then(|| all.swap_remove(self.rng.random_range(0..all.len())))
            } else {
                (0..ENUMERATION_LIMIT).find_map(|_| {
                    let set: Vec<usize> = sample(&mut self.rng, n, k)
                        .into_iter()
                        .map(|p| available[p])
                        .collect();
                    covers(self, &set).then_some(set)
                })
            };
            picked = feasible.ok_or_else(|| Infeasibility::Throughput {
                best_cap_sum: best_cap_sum(
                    &available.iter().map(|&i| self.caps[i]).collect::<Vec<_>>(),
                    k,
                ),
            })?;
        }
        let active = self.by_id(picked);
        let weights = clipped_uniform(&active.iter().map(|&i| self.caps[i]).collect::<Vec<_>>());
        Ok(self.record(active, weights, true))
    }

    fn record(&self, active: Vec<usize>, weights: Vec<f64>, fixed: bool) -> StagePlan {
        let objective = active
            .iter()
            .zip(&weights)
            .map(|(&i, w)| w * self.ucb(i))
            .sum();
        let plan = DeploymentPlan {
            active_set: active.iter().map(|&i| self.ids[i].clone()).collect(),
            selected: active.iter().map(|&i| self.ids[i].clone()).collect(),
            weights: active
                .iter()
                .zip(&weights)
                .map(|(&i, &w)| (self.ids[i].clone(), w))
                .collect::<BTreeMap<_, _>>(),
            objective,
        };
        StagePlan {
            plan,
            active,
            fixed: fixed.then_some(weights),
        }
    }

    /// Routing distribution for the next query.
    pub fn route_query(&self) -> Result<Routing> {
        let stage = self
            .current
            .as_ref()
            .ok_or_else(|| Error::domain("route_query called before plan_stage"))?;
        if let Some(fixed) = &stage.fixed {
            return Ok(Routing {
                weights: stage
                    .active
                    .iter()
                    .copied()
                    .zip(fixed.iter().copied())
                    .collect(),
                budget_feasible: true,
            });
        }
        let coeffs: Vec<Coeff> = stage
            .active
            .iter()
            .map(|&i| Coeff {
                value: self.ucb(i),
                cost: self.lcb(i),
                cap: self.caps[i],
            })
            .collect();
        match solve_dense(&coeffs, self.opts.budget.b) {
            Ok(sol) => Ok(Routing {
                weights: stage.active.iter().copied().zip(sol.weights).collect(),
                budget_feasible: true,
            }),
            Err(Infeasibility::Budget { .. }) if !self.opts.abort_on_route_infeasible => {
                // Estimated costs have risen past the budget mid-stage: spend
                // as little as the estimates allow until the next plan.
                Ok(Routing {
                    weights: stage
                        .active
                        .iter()
                        .copied()
                        .zip(cheapest_fill(&coeffs))
                        .collect(),
                    budget_feasible: false,
                })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// [`Policy::route_query`] keyed by model id.
    pub fn route_distribution(&self) -> Result<RoutingDistribution> {
        let routing = self.route_query()?;
        let weights: Vec<(ModelId, f64)> = routing
            .weights
            .iter()
            .map(|&(i, w)| (self.ids[i].clone(), w))
            .collect();
        let objective = routing.weights.iter().map(|&(i, w)| w * self.ucb(i)).sum();
        Ok(RoutingDistribution { weights, objective })
    }

    /// Draws the serving model from `routing` with the policy's own stream.
    pub fn sample(&mut self, routing: &Routing) -> usize {
        sample_model(&routing.weights, &mut self.rng)
    }

    /// Folds one observation for `idx` into its lifetime statistics.
    pub fn on_feedback(&mut self, idx: usize, reward: f64, cost: f64) -> Result<()> {
        if !self.active().contains(&idx) {
            let id = self
                .ids
                .get(idx)
                .cloned()
                .unwrap_or_else(|| ModelId::new(format!("#{idx}")));
            return Err(Error::UnknownModel(id));
        }
        self.stats[idx] = self.stats[idx].update(reward, cost, &self.opts.confidence)?;
        Ok(())
    }
}

/// Samples an entry of `weights` with exactly one uniform draw.
pub fn sample_model<T: Copy, R: Rng + ?Sized>(weights: &[(T, f64)], rng: &mut R) -> T {
    let u: f64 = rng.random();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for &(m, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(m);
        if target < acc {
            return m;
        }
    }
    last.expect("distribution has positive mass")
}

/// Equal shares clipped to the caps, with the excess re-spread over the
/// unclipped models until everything fits.
pub fn clipped_uniform(caps: &[f64]) -> Vec<f64> {
    let n = caps.len();
    let mut w = vec![0.0; n];
    let mut open: Vec<usize> = (0..n).collect();
    let mut mass = 1.0;
    while !open.is_empty() && mass > 1e-15 {
        let share = mass / open.len() as f64;
        let (clipped, free): (Vec<usize>, Vec<usize>) =
            open.iter().partition(|&&i| caps[i] - w[i] <= share);
        if clipped.is_empty() {
            for &i in &free {
                w[i] += share;
            }
            break;
        }
        for &i in &clipped {
            mass -= caps[i] - w[i];
            w[i] = caps[i];
        }
        open = free;
    }
    w
}

/// Fills the cheapest columns first.
fn cheapest_fill(coeffs: &[Coeff]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| {
        coeffs[a]
            .cost
            .total_cmp(&coeffs[b].cost)
            .then(coeffs[b].value.total_cmp(&coeffs[a].value))
            .then(a.cmp(&b))
    });
    let mut w = vec![0.0; coeffs.len()];
    let mut remaining = 1.0;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        w[i] = coeffs[i].cap.min(remaining);
        remaining -= w[i];
    }
    w
}

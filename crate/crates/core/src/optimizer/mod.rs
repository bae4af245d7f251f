//! The two optimization layers: the per-query routing LP and the stage-level
//! deployment program with a support-cardinality constraint, plus the
//! benchmark rate `V(b, S)` built on the latter.

mod deploy;
mod route;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ModelId;

pub(crate) use deploy::{binomial, next_combination};
pub use deploy::{solve_deploy_mip_with, DeployStrategy, ENUMERATION_LIMIT, TIE_TOL};
pub use route::{solve_dense, Coeff, DenseSolution, FEAS_TOL};

/// One candidate model as seen by an optimizer. `value` and `unit_cost` are
/// the optimistic estimates online and the true means for the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub model_id: ModelId,
    pub value: f64,
    pub unit_cost: f64,
    pub cap: f64,
}

impl CandidateRow {
    pub fn new(model_id: impl Into<ModelId>, value: f64, unit_cost: f64, cap: f64) -> Self {
        Self {
            model_id: model_id.into(),
            value,
            unit_cost,
            cap,
        }
    }

    pub(crate) fn coeff(&self) -> Coeff {
        Coeff {
            value: self.value,
            cost: self.unit_cost,
            cap: self.cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub b: f64,
}

impl BudgetSpec {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::domain(format!("budget must be positive, got {b}")));
        }
        Ok(Self { b })
    }
}

/// Per-query routing probabilities, in canonical (id-sorted) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDistribution {
    pub weights: Vec<(ModelId, f64)>,
    pub objective: f64,
}

impl RoutingDistribution {
    pub fn get(&self, id: &ModelId) -> f64 {
        self.weights
            .iter()
            .find(|(m, _)| m == id)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

/// Result of a deployment solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    /// Models with positive weight, sorted by id.
    pub active_set: Vec<ModelId>,
    /// The activated slots (`z = 1`), sorted by id. A superset of `active_set`.
    pub selected: Vec<ModelId>,
    pub weights: BTreeMap<ModelId, f64>,
    pub objective: f64,
}

fn validate_rows(rows: &[CandidateRow]) -> Result<()> {
    for row in rows {
        if !(row.unit_cost > 0.0 && row.unit_cost.is_finite()) {
            return Err(Error::domain(format!(
                "row `{}`: unit cost must be positive, got {}",
                row.model_id, row.unit_cost
            )));
        }
        if !(row.cap > 0.0 && row.cap <= 1.0) {
            return Err(Error::domain(format!(
                "row `{}`: cap must lie in (0, 1], got {}",
                row.model_id, row.cap
            )));
        }
        if !row.value.is_finite() {
            return Err(Error::domain(format!(
                "row `{}`: non-finite value",
                row.model_id
            )));
        }
    }
    Ok(())
}

/// Rows sorted by id; duplicate ids are rejected.
pub(crate) fn canonical_rows(rows: &[CandidateRow]) -> Result<Vec<CandidateRow>> {
    validate_rows(rows)?;
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].model_id == w[1].model_id) {
        return Err(Error::domain(format!(
            "duplicate model id `{}`",
            w[0].model_id
        )));
    }
    Ok(sorted)
}

/// Maximises `Σ value·p` subject to the budget, the simplex and the caps.
pub fn solve_route_lp(rows: &[CandidateRow], budget: BudgetSpec) -> Result<RoutingDistribution> {
    let rows = canonical_rows(rows)?;
    let coeffs: Vec<Coeff> = rows.iter().map(CandidateRow::coeff).collect();
    let sol = solve_dense(&coeffs, budget.b)?;
    Ok(RoutingDistribution {
        weights: rows
            .into_iter()
            .zip(sol.weights)
            .map(|(r, w)| (r.model_id, w))
            .collect(),
        objective: sol.objective,
    })
}

/// Exact solve of the deployment program; see [`solve_deploy_mip_with`].
pub fn solve_deploy_mip(
    rows: &[CandidateRow],
    budget: BudgetSpec,
    m_max: usize,
) -> Result<DeploymentPlan> {
    solve_deploy_mip_with(rows, budget, m_max, DeployStrategy::Auto)
}

/// Best expected per-query reward achievable from `rows` (true means) with
/// at most `m_max` models in the support. Zero for an empty or infeasible pool.
pub fn optimal_rate(rows: &[CandidateRow], budget: BudgetSpec, m_max: usize) -> f64 {
    if rows.is_empty() || m_max == 0 {
        return 0.0;
    }
    solve_deploy_mip(rows, budget, m_max).map_or(0.0, |plan| plan.objective)
}

/// Whether some subset of at most `m_max` models can absorb a full unit of
/// traffic, i.e. the `m_max` largest caps sum to at least one.
pub fn check_feasibility(caps: &[f64], m_max: usize) -> bool {
    best_cap_sum(caps, m_max) >= 1.0 - FEAS_TOL
}

pub(crate) fn best_cap_sum(caps: &[f64], m_max: usize) -> f64 {
    let mut sorted = caps.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().take(m_max).sum()
}

/// Independent constraint check for a routing distribution: non-negativity,
/// caps, unit mass and budget, all at [`FEAS_TOL`].
pub fn certify(
    rows: &[CandidateRow],
    weights: &[(ModelId, f64)],
    budget: f64,
) -> std::result::Result<(), String> {
    let mut total = 0.0;
    let mut cost = 0.0;
    for (id, w) in weights {
        let row = rows
            .iter()
            .find(|r| &r.model_id == id)
            .ok_or_else(|| format!("weight on unknown model `{id}`"))?;
        if *w < -FEAS_TOL {
            return Err(format!("negative weight {w} on `{id}`"));
        }
        if *w > row.cap + FEAS_TOL {
            return Err(format!("weight {w} on `{id}` exceeds cap {}", row.cap));
        }
        total += w;
        cost += w * row.unit_cost;
    }
    if (total - 1.0).abs() > FEAS_TOL {
        return Err(format!("weights sum to {total}"));
    }
    if cost > budget + FEAS_TOL {
        return Err(format!("cost {cost} exceeds budget {budget}"));
    }
    Ok(())
}

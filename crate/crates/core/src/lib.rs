//! Staged LLM deployment and budget-constrained query routing.
//!
//! The crate is organised around the two decision layers of the system:
//! a stage-level deployment step that picks at most `M_max` live models by
//! solving a cardinality-constrained program over optimistic estimates, and
//! a per-query step that solves a small routing LP over the live set.
//!
//! ```text
//!  environment ──feedback──▶ estimator ──UCB/LCB──▶ optimizer
//!       ▲                                             │
//!       └───────────── policy (plan / route) ◀────────┘
//!                          │
//!                       RunTrace ──▶ metrics
//! ```
//!
//! [`experiment`] wires everything into seeded runs and parameter sweeps and
//! writes the metric tables; [`hardgen`] builds the drifting-frontier
//! instances used to check regret scaling.

pub mod config;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod hardgen;
pub mod metrics;
pub mod optimizer;
pub mod policy;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{EnvironmentSource, RunConfig, StageGrid};
pub use environment::{
    ArrivalSchedule, Environment, ModelSpec, ReplayDataset, RewardDist, SyntheticModel, TokenDist,
};
pub use error::{Error, Infeasibility, Result};
pub use estimator::{cost_lcb, f_rad, reward_ucb, ConfidenceParams, EmpiricalStats};
pub use hardgen::{generate_hard_instance, HardInstance, HardInstanceParams};
pub use metrics::{RegretSeries, RunTrace};
pub use optimizer::{
    check_feasibility, optimal_rate, solve_deploy_mip, solve_route_lp, BudgetSpec, CandidateRow,
    DeploymentPlan, RoutingDistribution,
};
pub use policy::{Policy, PolicyKind};

/// Opaque model identifier. Ordering is lexicographic on the string form and
/// is what deterministic tie-breaking uses.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Self {
        ModelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_owned())
    }
}

impl From<String> for ModelId {
    fn from(s: String) -> Self {
        ModelId(s)
    }
}

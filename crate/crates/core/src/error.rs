use std::path::PathBuf;

use thiserror::Error;

use crate::ModelId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why an optimization instance has no feasible point.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Infeasibility {
    /// The candidate caps cannot cover a full unit of traffic.
    #[error("throughput infeasible: the best admissible cap sum is {best_cap_sum} (< 1)")]
    Throughput { best_cap_sum: f64 },
    /// Every distribution within the caps costs more than the budget.
    #[error("budget infeasible: minimum achievable cost {min_cost} exceeds budget {budget}")]
    Budget { min_cost: f64, budget: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Infeasible(#[from] Infeasibility),

    #[error("model `{0}` is not part of the current deployment")]
    UnknownModel(ModelId),

    #[error("model `{model}` is not available at round {round}")]
    Unavailable { model: ModelId, round: u64 },

    #[error("dataset schema error: {0}")]
    Schema(String),

    #[error("dataset value out of range at row {row}, column `{column}`: {value}")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("non-positive cost at row {row}, column `{column}`: {value}")]
    NonPositiveCost {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml parse error in {path}: {message}")]
    Toml { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

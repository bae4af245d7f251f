//! Run configuration: a flat TOML file with fail-fast key checking.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{load_replay_dataset, ArrivalSchedule, Environment, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimator::ConfidenceParams;
use crate::hardgen::{generate_hard_instance, HardInstanceParams};
use crate::optimizer::{BudgetSpec, DeployStrategy};
use crate::policy::{PolicyKind, PolicyOptions};

pub const DEFAULT_HORIZON: u64 = 36_497;
pub const DEFAULT_INTERVAL: u64 = 1000;

/// How the horizon is cut into stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageGrid {
    /// `K` stages starting at `(k-1)·⌊T/K⌋ + 1`.
    Stages(u64),
    /// A new stage every `L` rounds; `K = max(1, ⌊T/L⌋)`.
    Interval(u64),
}

impl StageGrid {
    pub fn n_stages(&self, horizon: u64) -> u64 {
        match *self {
            StageGrid::Stages(k) => k,
            StageGrid::Interval(l) => (horizon / l).max(1),
        }
    }

    /// First round of every stage. The last stage runs to `horizon`.
    pub fn starts(&self, horizon: u64) -> Vec<u64> {
        let k = self.n_stages(horizon);
        let len = match *self {
            StageGrid::Stages(k) => horizon / k,
            StageGrid::Interval(l) => l.min(horizon),
        };
        (0..k).map(|i| i * len + 1).collect()
    }

    /// `(start, end)` inclusive bounds of every stage.
    pub fn bounds(&self, horizon: u64) -> Vec<(u64, u64)> {
        let starts = self.starts(horizon);
        starts
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, starts.get(i + 1).map_or(horizon, |n| n - 1)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Replay,
    Synthetic,
    Hardgen,
}

/// Where rounds of feedback come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentSource {
    Replay {
        table: PathBuf,
        manifest: PathBuf,
        schedule: ArrivalSchedule,
    },
    Synthetic {
        spec: PathBuf,
    },
    Hardgen {
        models: usize,
        c_s: f64,
        seed: u64,
    },
}

impl EnvironmentSource {
    pub fn build(&self, horizon: u64) -> Result<Environment> {
        match self {
            EnvironmentSource::Replay {
                table,
                manifest,
                schedule,
            } => Environment::replay(load_replay_dataset(table, manifest)?, *schedule),
            EnvironmentSource::Synthetic { spec } => SyntheticSpec::load(spec)?.into_environment(),
            EnvironmentSource::Hardgen { models, c_s, seed } => {
                let mut params = HardInstanceParams::new(horizon, *models, *seed);
                params.c_s = *c_s;
                Ok(generate_hard_instance(params)?.environment())
            }
        }
    }
}

/// Every knob of a run. Field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub horizon: u64,
    /// Number of stages; mutually exclusive with `update_interval`.
    pub stages: Option<u64>,
    pub update_interval: Option<u64>,
    pub m_max: usize,
    pub budget: f64,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub policy: PolicyKind,
    pub optimistic_init: bool,
    pub fill_idle_slots: bool,
    pub abort_on_route_infeasible: bool,
    pub trajectory_window: u64,
    pub output_dir: PathBuf,

    pub environment: SourceKind,
    pub replay_table: Option<PathBuf>,
    pub replay_manifest: Option<PathBuf>,
    pub initial_models: usize,
    pub arrival_interval: u64,
    pub synthetic_spec: Option<PathBuf>,
    pub hardgen_models: usize,
    pub hardgen_c_s: f64,
    pub hardgen_seed: u64,
    /// Directory the file was loaded from.
    #[serde(skip)]
    pub(crate) base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            stages: None,
            update_interval: None,
            m_max: 5,
            budget: 0.001,
            gamma: 0.1,
            seeds: (0..10).collect(),
            policy: PolicyKind::StageRoute,
            optimistic_init: true,
            fill_idle_slots: false,
            abort_on_route_infeasible: false,
            trajectory_window: 1000,
            output_dir: PathBuf::from("runs"),
            environment: SourceKind::Replay,
            replay_table: None,
            replay_manifest: None,
            initial_models: 5,
            arrival_interval: 5000,
            synthetic_spec: None,
            hardgen_models: 2,
            hardgen_c_s: 1.0,
            hardgen_seed: 0,
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Toml { message, .. } => Error::Toml {
                path: path.to_owned(),
                message,
            },
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory relative paths resolve against.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        match (self.stages, self.update_interval) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "stages",
                    "set either `stages` or `update_interval`, not both",
                ))
            }
            (Some(0), _) => return Err(Error::config("stages", "must be positive")),
            (Some(k), _) if k > self.horizon => {
                return Err(Error::config(
                    "stages",
                    format!("{k} exceeds horizon {}", self.horizon),
                ))
            }
            (_, Some(0)) => return Err(Error::config("update_interval", "must be positive")),
            _ => {}
        }
        if self.m_max == 0 {
            return Err(Error::config("m_max", "must be positive"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::config(
                "budget",
                format!("must be positive, got {}", self.budget),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(
                "gamma",
                format!("must be positive, got {}", self.gamma),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.trajectory_window == 0 {
            return Err(Error::config("trajectory_window", "must be positive"));
        }
        match self.environment {
            SourceKind::Replay => {
                if self.replay_table.is_none() {
                    return Err(Error::config(
                        "replay_table",
                        "required for a replay environment",
                    ));
                }
                if self.replay_manifest.is_none() {
                    return Err(Error::config(
                        "replay_manifest",
                        "required for a replay environment",
                    ));
                }
                if self.initial_models == 0 {
                    return Err(Error::config("initial_models", "must be positive"));
                }
                if self.arrival_interval == 0 {
                    return Err(Error::config("arrival_interval", "must be positive"));
                }
            }
            SourceKind::Synthetic => {
                if self.synthetic_spec.is_none() {
                    return Err(Error::config(
                        "synthetic_spec",
                        "required for a synthetic environment",
                    ));
                }
            }
            SourceKind::Hardgen => {
                if self.hardgen_models < 2 {
                    return Err(Error::config("hardgen_models", "need at least 2 models"));
                }
                if !(self.hardgen_c_s > 0.0 && self.hardgen_c_s.is_finite()) {
                    return Err(Error::config("hardgen_c_s", "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> StageGrid {
        match self.stages {
            Some(k) => StageGrid::Stages(k),
            None => StageGrid::Interval(self.update_interval.unwrap_or(DEFAULT_INTERVAL)),
        }
    }

    pub fn source(&self) -> EnvironmentSource {
        match self.environment {
            SourceKind::Replay => EnvironmentSource::Replay {
                table: self.resolve(self.replay_table.as_deref().unwrap_or(Path::new(""))),
                manifest: self.resolve(self.replay_manifest.as_deref().unwrap_or(Path::new(""))),
                schedule: ArrivalSchedule {
                    initial_count: self.initial_models,
                    interval: self.arrival_interval,
                },
            },
            SourceKind::Synthetic => EnvironmentSource::Synthetic {
                spec: self.resolve(self.synthetic_spec.as_deref().unwrap_or(Path::new(""))),
            },
            SourceKind::Hardgen => EnvironmentSource::Hardgen {
                models: self.hardgen_models,
                c_s: self.hardgen_c_s,
                seed: self.hardgen_seed,
            },
        }
    }

    pub fn build_environment(&self) -> Result<Environment> {
        self.source().build(self.horizon)
    }

    pub fn policy_options(&self, env: &Environment) -> Result<PolicyOptions> {
        let (c_lo, c_hi) = env.cost_bounds();
        Ok(PolicyOptions {
            m_max: self.m_max,
            budget: BudgetSpec::new(self.budget)?,
            confidence: ConfidenceParams::new(self.gamma, c_lo, c_hi, self.optimistic_init)?,
            fill_idle_slots: self.fill_idle_slots,
            strategy: DeployStrategy::Auto,
            abort_on_route_infeasible: self.abort_on_route_infeasible,
        })
    }

    /// The effective configuration with every default spelled out and paths
    /// resolved, so the file alone reproduces the run.
    pub fn canonical_toml(&self) -> String {
        let mut echo = self.clone();
        echo.replay_table = self.replay_table.as_deref().map(|p| self.resolve(p));
        echo.replay_manifest = self.replay_manifest.as_deref().map(|p| self.resolve(p));
        echo.synthetic_spec = self.synthetic_spec.as_deref().map(|p| self.resolve(p));
        echo.output_dir = self.output_path();
        if echo.stages.is_none() {
            echo.update_interval = Some(self.update_interval.unwrap_or(DEFAULT_INTERVAL));
        }
        toml::to_string(&echo).expect("config serializes")
    }
}

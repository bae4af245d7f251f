//! Query/feedback generators with streaming model availability.
//!
//! Two sources share one [`Environment`] type: synthetic models with a
//! reward distribution and a token-based cost model, and replay over a
//! recorded score/cost table where each round samples one query uniformly
//! with replacement.

mod replay;
mod synthetic;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ModelId;

pub use replay::{
    convert_routerbench, load_replay_dataset, Manifest, ManifestEntry, ReplayDataset, COST_SUFFIX,
    SCORE_SUFFIX,
};
pub use synthetic::{MeanPath, RewardDist, SyntheticModel, TokenDist};

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Synthetic(SyntheticModel),
    /// Column index into the replay dataset (release order).
    Replay(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_id: ModelId,
    /// First round at which the model may be deployed (1-based).
    pub available_from: u64,
    pub alpha: f64,
    pub generator: Generator,
}

/// Release schedule for replay: `initial_count` models at round 1, then one
/// more every `interval` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    pub initial_count: usize,
    pub interval: u64,
}

impl ArrivalSchedule {
    /// Availability round of the model at 0-based release position `pos`.
    pub fn available_from(&self, pos: usize) -> u64 {
        if pos < self.initial_count {
            1
        } else {
            1 + (pos - self.initial_count + 1) as u64 * self.interval
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct Environment {
    models: Vec<ModelSpec>,
    c_lo: f64,
    c_hi: f64,
    replay: Option<Arc<ReplayDataset>>,
    replay_means: Vec<(f64, f64)>,
}

/// On-disk description of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub c_lo: f64,
    pub c_hi: f64,
    #[serde(rename = "model")]
    pub models: Vec<SyntheticEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEntry {
    pub id: ModelId,
    #[serde(default = "one")]
    pub available_from: u64,
    #[serde(default = "unit")]
    pub alpha: f64,
    #[serde(flatten)]
    pub model: SyntheticModel,
}

fn one() -> u64 {
    1
}

fn unit() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Toml {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn into_environment(self) -> Result<Environment> {
        let models = self
            .models
            .into_iter()
            .map(|e| ModelSpec {
                model_id: e.id,
                available_from: e.available_from,
                alpha: e.alpha,
                generator: Generator::Synthetic(e.model),
            })
            .collect();
        Environment::synthetic(models, self.c_lo, self.c_hi)
    }
}

impl Environment {
    pub fn synthetic(models: Vec<ModelSpec>, c_lo: f64, c_hi: f64) -> Result<Self> {
        if !(c_lo > 0.0 && c_lo <= c_hi && c_hi <= 1.0) {
            return Err(Error::domain(format!(
                "synthetic cost bounds must satisfy 0 < c_lo <= c_hi <= 1, got [{c_lo}, {c_hi}]"
            )));
        }
        for m in &models {
            match &m.generator {
                Generator::Synthetic(s) => s.validate()?,
                Generator::Replay(_) => {
                    return Err(Error::domain("replay generator in a synthetic environment"))
                }
            }
        }
        Self::checked(models, c_lo, c_hi, None)
    }

    /// Replay environment; cost bounds are the dataset's cost range.
    pub fn replay(dataset: ReplayDataset, schedule: ArrivalSchedule) -> Result<Self> {
        if schedule.initial_count == 0 || schedule.initial_count > dataset.n_models() {
            return Err(Error::domain(format!(
                "arrival schedule starts with {} models but the manifest has {}",
                schedule.initial_count,
                dataset.n_models()
            )));
        }
        if schedule.interval == 0 {
            return Err(Error::domain("arrival interval must be positive"));
        }
        let models = dataset
            .manifest
            .models
            .iter()
            .enumerate()
            .map(|(pos, m)| ModelSpec {
                model_id: m.model_id.clone(),
                available_from: schedule.available_from(pos),
                alpha: m.alpha,
                generator: Generator::Replay(pos),
            })
            .collect();
        let (c_lo, c_hi) = dataset.cost_range();
        Self::checked(models, c_lo, c_hi, Some(Arc::new(dataset)))
    }

    fn checked(
        models: Vec<ModelSpec>,
        c_lo: f64,
        c_hi: f64,
        replay: Option<Arc<ReplayDataset>>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::domain("environment has no models"));
        }
        let mut ids: Vec<&ModelId> = models.iter().map(|m| &m.model_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("duplicate model id `{}`", w[0])));
        }
        for m in &models {
            if !(m.alpha > 0.0 && m.alpha <= 1.0) {
                return Err(Error::domain(format!(
                    "model `{}`: alpha {} outside (0, 1]",
                    m.model_id, m.alpha
                )));
            }
            if m.available_from == 0 {
                return Err(Error::domain(format!(
                    "model `{}`: availability round must be >= 1",
                    m.model_id
                )));
            }
        }
        let replay_means = replay
            .as_ref()
            .map_or_else(Vec::new, |ds| ds.column_means());
        Ok(Self {
            models,
            c_lo,
            c_hi,
            replay,
            replay_means,
        })
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn cost_bounds(&self) -> (f64, f64) {
        (self.c_lo, self.c_hi)
    }

    pub fn is_replay(&self) -> bool {
        self.replay.is_some()
    }

    pub fn index_of(&self, id: &ModelId) -> Option<usize> {
        self.models.iter().position(|m| &m.model_id == id)
    }

    /// Indices (manifest order) of models available at round `t`.
    pub fn available_indices(&self, t: u64) -> Vec<usize> {
        self.models
            .iter()
            .enumerate()
            .filter(|(_, m)| m.available_from <= t)
            .map(|(i, _)| i)
            .collect()
    }

    /// Models with `available_from <= t`, in manifest order.
    pub fn available_pool(&self, t: u64) -> Vec<(ModelId, f64)> {
        self.available_indices(t)
            .into_iter()
            .map(|i| (self.models[i].model_id.clone(), self.models[i].alpha))
            .collect()
    }

    /// Samples the query for round `t`. Replay draws a uniform query index;
    /// synthetic environments have no query identity and consume nothing.
    pub fn sample_query<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.replay {
            Some(ds) => rng.random_range(0..ds.n_queries()),
            None => 0,
        }
    }

    /// Feedback for serving `query` with model `idx` at round `t`.
    pub fn feedback_for<R: Rng + ?Sized>(
        &self,
        t: u64,
        query: usize,
        idx: usize,
        rng: &mut R,
    ) -> Result<Feedback> {
        let spec = &self.models[idx];
        if spec.available_from > t {
            return Err(Error::Unavailable {
                model: spec.model_id.clone(),
                round: t,
            });
        }
        match &spec.generator {
            Generator::Synthetic(s) => {
                let reward = s.sample_reward(t, rng);
                let cost = s.sample_cost(rng).clamp(self.c_lo, self.c_hi);
                Ok(Feedback { reward, cost })
            }
            Generator::Replay(col) => {
                let ds = self
                    .replay
                    .as_ref()
                    .expect("replay generator has a dataset");
                let (reward, cost) = ds.pair(query, *col);
                Ok(Feedback { reward, cost })
            }
        }
    }

    /// Draws one round of feedback for `model_id`.
    pub fn draw_feedback<R: Rng + ?Sized>(
        &self,
        t: u64,
        model_id: &ModelId,
        rng: &mut R,
    ) -> Result<Feedback> {
        let idx = self
            .index_of(model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.clone()))?;
        let query = self.sample_query(rng);
        self.feedback_for(t, query, idx, rng)
    }

    /// `(mean reward, expected cost)` per model at round `t`, manifest order.
    /// Replay uses full-dataset column averages.
    pub fn true_means_at(&self, t: u64) -> Vec<(f64, f64)> {
        self.models
            .iter()
            .map(|m| match &m.generator {
                Generator::Synthetic(s) => (s.mu.at(t), s.expected_cost()),
                Generator::Replay(col) => self.replay_means[*col],
            })
            .collect()
    }

    pub fn true_means(&self) -> Vec<(ModelId, f64, f64)> {
        self.models
            .iter()
            .zip(self.true_means_at(1))
            .map(|(m, (mu, c))| (m.model_id.clone(), mu, c))
            .collect()
    }

    /// Rounds (> 1) at which some model's mean reward changes.
    pub fn mean_change_points(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .models
            .iter()
            .filter_map(|m| match &m.generator {
                Generator::Synthetic(s) => Some(s.mu.change_points()),
                Generator::Replay(_) => None,
            })
            .flatten()
            .copied()
            .filter(|&t| t > 1)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn is_stationary(&self) -> bool {
        self.mean_change_points().is_empty()
    }

    pub fn dataset(&self) -> Option<&ReplayDataset> {
        self.replay.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bern(id: &str, mu: f64, from: u64) -> ModelSpec {
        ModelSpec {
            model_id: id.into(),
            available_from: from,
            alpha: 1.0,
            generator: Generator::Synthetic(SyntheticModel::bernoulli(
                mu,
                TokenDist::Fixed { value: 100 },
                TokenDist::Fixed { value: 0 },
                1e-5,
                0.0,
            )),
        }
    }

    #[test]
    fn schedule_positions() {
        let s = ArrivalSchedule {
            initial_count: 5,
            interval: 5000,
        };
        assert_eq!(s.available_from(4), 1);
        assert_eq!(s.available_from(5), 5001);
        assert_eq!(s.available_from(6), 10001);
    }

    #[test]
    fn pool_grows_with_time() {
        let env = Environment::synthetic(
            vec![bern("a", 0.5, 1), bern("b", 0.6, 10), bern("c", 0.7, 20)],
            1e-4,
            1e-2,
        )
        .unwrap();
        assert_eq!(env.available_indices(1), vec![0]);
        assert_eq!(env.available_indices(10), vec![0, 1]);
        assert_eq!(env.available_pool(100).len(), 3);
    }

    #[test]
    fn unavailable_model_is_rejected() {
        let env = Environment::synthetic(vec![bern("a", 0.5, 1), bern("b", 0.6, 10)], 1e-4, 1e-2)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            env.draw_feedback(5, &"b".into(), &mut rng),
            Err(Error::Unavailable { .. })
        ));
    }

    #[test]
    fn fixed_tokens_give_exact_cost() {
        let env = Environment::synthetic(vec![bern("a", 0.5, 1)], 1e-4, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fb = env.draw_feedback(1, &"a".into(), &mut rng).unwrap();
        assert_eq!(fb.cost, 0.001);
        assert_eq!(env.true_means()[0], ("a".into(), 0.5, 0.001));
    }

    #[test]
    fn costs_are_clipped() {
        let env = Environment::synthetic(vec![bern("a", 0.5, 1)], 0.002, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fb = env.draw_feedback(1, &"a".into(), &mut rng).unwrap();
        assert_eq!(fb.cost, 0.002);
    }
}

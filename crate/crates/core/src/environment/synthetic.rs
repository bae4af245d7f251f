use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative integer token-count distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TokenDist {
    Fixed {
        value: u64,
    },
    /// Uniform on the integers `lo..=hi`.
    Uniform {
        lo: u64,
        hi: u64,
    },
    Poisson {
        mean: f64,
    },
}

impl TokenDist {
    pub fn mean(&self) -> f64 {
        match *self {
            TokenDist::Fixed { value } => value as f64,
            TokenDist::Uniform { lo, hi } => 0.5 * (lo as f64 + hi as f64),
            TokenDist::Poisson { mean } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            TokenDist::Fixed { value } => value,
            TokenDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            TokenDist::Poisson { mean } => {
                if mean <= 0.0 {
                    0
                } else {
                    Poisson::new(mean).expect("validated mean").sample(rng) as u64
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TokenDist::Uniform { lo, hi } if lo > hi => {
                Err(Error::domain(format!("token range {lo}..={hi} is empty")))
            }
            TokenDist::Poisson { mean } if !(mean >= 0.0 && mean.is_finite()) => Err(
                Error::domain(format!("poisson mean {mean} must be non-negative")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardDist {
    Bernoulli,
    /// Gaussian noise around the mean, clipped to `[0, 1]`.
    Gaussian {
        sigma: f64,
    },
}

/// Mean reward over time: constant, or piecewise-constant with segments
/// starting at the listed rounds (the first segment starts at round 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanPath {
    Constant(f64),
    Piecewise { starts: Vec<u64>, means: Vec<f64> },
}

impl MeanPath {
    pub fn at(&self, t: u64) -> f64 {
        match self {
            MeanPath::Constant(mu) => *mu,
            MeanPath::Piecewise { starts, means } => {
                let seg = starts.partition_point(|&s| s <= t).saturating_sub(1);
                means[seg]
            }
        }
    }

    pub fn change_points(&self) -> &[u64] {
        match self {
            MeanPath::Constant(_) => &[],
            MeanPath::Piecewise { starts, .. } => starts,
        }
    }

    fn validate(&self) -> Result<()> {
        let means: &[f64] = match self {
            MeanPath::Constant(mu) => std::slice::from_ref(mu),
            MeanPath::Piecewise { starts, means } => {
                if starts.is_empty() || starts.len() != means.len() || starts[0] != 1 {
                    return Err(Error::domain(
                        "piecewise mean needs matching starts/means beginning at round 1",
                    ));
                }
                if starts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::domain("piecewise mean starts must increase"));
                }
                means
            }
        };
        if let Some(mu) = means.iter().find(|mu| !(0.0..=1.0).contains(*mu)) {
            return Err(Error::domain(format!("mean reward {mu} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Ground-truth generator for one synthetic model. Cost per query is
/// `in_tokens·p_in + out_tokens·p_out`, clipped to the environment's bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModel {
    pub mu: MeanPath,
    pub reward: RewardDist,
    pub in_tokens: TokenDist,
    pub out_tokens: TokenDist,
    pub p_in: f64,
    pub p_out: f64,
}

impl SyntheticModel {
    pub fn bernoulli(
        mu: f64,
        in_tokens: TokenDist,
        out_tokens: TokenDist,
        p_in: f64,
        p_out: f64,
    ) -> Self {
        Self {
            mu: MeanPath::Constant(mu),
            reward: RewardDist::Bernoulli,
            in_tokens,
            out_tokens,
            p_in,
            p_out,
        }
    }

    /// Pre-clipping expected cost.
    pub fn expected_cost(&self) -> f64 {
        self.in_tokens.mean() * self.p_in + self.out_tokens.mean() * self.p_out
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.mu.validate()?;
        self.in_tokens.validate()?;
        self.out_tokens.validate()?;
        if let RewardDist::Gaussian { sigma } = self.reward {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::domain(format!(
                    "gaussian sigma {sigma} must be positive"
                )));
            }
        }
        if !(self.p_in >= 0.0 && self.p_out >= 0.0) {
            return Err(Error::domain("token prices must be non-negative"));
        }
        Ok(())
    }

    pub(crate) fn sample_reward<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> f64 {
        let mu = self.mu.at(t);
        match self.reward {
            RewardDist::Bernoulli => {
                if rng.random::<f64>() < mu {
                    1.0
                } else {
                    0.0
                }
            }
            RewardDist::Gaussian { sigma } => {
                let noise = Normal::new(mu, sigma).expect("validated sigma");
                noise.sample(rng).clamp(0.0, 1.0)
            }
        }
    }

    /// Unclipped cost of one invocation.
    pub(crate) fn sample_cost<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tin = self.in_tokens.sample(rng);
        let tout = self.out_tokens.sample(rng);
        tin as f64 * self.p_in + tout as f64 * self.p_out
    }
}

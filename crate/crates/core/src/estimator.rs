//! Per-model running statistics and the optimistic confidence bounds built
//! on top of them.
//!
//! Rewards are scored optimistically (upper bound projected onto `[0, 1]`)
//! and costs conservatively-low (lower bound projected onto `[c_lo, c_hi]`),
//! both with the radius `sqrt(gamma * v / n) + gamma / n` evaluated at
//! `n = count + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub gamma: f64,
    pub c_lo: f64,
    pub c_hi: f64,
    /// Never-played models get `ucb = 1` and `lcb = c_lo` when set.
    pub optimistic_init: bool,
}

impl ConfidenceParams {
    pub fn new(gamma: f64, c_lo: f64, c_hi: f64, optimistic_init: bool) -> Result<Self> {
        let params = Self {
            gamma,
            c_lo,
            c_hi,
            optimistic_init,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.c_lo > 0.0 && self.c_lo <= self.c_hi && self.c_hi <= 1.0) {
            return Err(Error::domain(format!(
                "cost bounds must satisfy 0 < c_lo <= c_hi <= 1, got [{}, {}]",
                self.c_lo, self.c_hi
            )));
        }
        Ok(())
    }
}

/// Lifetime selection count and running means for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats {
    pub count: u64,
    pub mean_reward: f64,
    pub mean_cost: f64,
}

impl EmpiricalStats {
    /// Empty statistics: zero observations, reward mean 0 and cost mean `c_lo`.
    pub fn new(c_lo: f64) -> Self {
        Self {
            count: 0,
            mean_reward: 0.0,
            mean_cost: c_lo,
        }
    }

    /// Raw constructor; no consistency checks between count and means.
    pub fn from_parts(count: u64, mean_reward: f64, mean_cost: f64) -> Self {
        Self {
            count,
            mean_reward,
            mean_cost,
        }
    }

    /// Folds one observation into the running means.
    pub fn update(&self, reward: f64, cost: f64, params: &ConfidenceParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::domain(format!("reward {reward} outside [0, 1]")));
        }
        // Costs are clipped upstream; allow a hair of float slack on the bounds.
        let slack = 1e-12 * params.c_hi;
        if !(cost >= params.c_lo - slack && cost <= params.c_hi + slack) {
            return Err(Error::domain(format!(
                "cost {cost} outside [{}, {}]",
                params.c_lo, params.c_hi
            )));
        }
        let count = self.count + 1;
        if self.count == 0 {
            return Ok(Self::from_parts(count, reward, cost));
        }
        let n = count as f64;
        Ok(Self {
            count,
            mean_reward: self.mean_reward + (reward - self.mean_reward) / n,
            mean_cost: self.mean_cost + (cost - self.mean_cost) / n,
        })
    }
}

/// Confidence radius `sqrt(gamma * v / n) + gamma / n`.
pub fn f_rad(v: f64, n: u64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("f_rad: v = {v} outside [0, 1]")));
    }
    if n < 1 {
        return Err(Error::domain("f_rad: n must be at least 1"));
    }
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::domain(format!(
            "f_rad: gamma = {gamma} must be positive"
        )));
    }
    Ok(radius(v, n, gamma))
}

#[inline]
fn radius(v: f64, n: u64, gamma: f64) -> f64 {
    let n = n as f64;
    (gamma * v / n).sqrt() + gamma / n
}

/// Optimistic reward estimate projected onto `[0, 1]`.
pub fn reward_ucb(stats: &EmpiricalStats, params: &ConfidenceParams) -> f64 {
    if stats.count == 0 && params.optimistic_init {
        return 1.0;
    }
    let mean = stats.mean_reward.clamp(0.0, 1.0);
    let raw = mean + 2.0 * radius(mean, stats.count + 1, params.gamma);
    raw.clamp(0.0, 1.0)
}

/// Optimistic (low) cost estimate projected onto `[c_lo, c_hi]`.
pub fn cost_lcb(stats: &EmpiricalStats, params: &ConfidenceParams) -> f64 {
    if stats.count == 0 && params.optimistic_init {
        return params.c_lo;
    }
    // The radius is defined on [0, 1]; costs are always far below 1 in practice.
    let mean = stats.mean_cost.clamp(0.0, 1.0);
    let raw = stats.mean_cost - 2.0 * radius(mean, stats.count + 1, params.gamma);
    raw.clamp(params.c_lo, params.c_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(optimistic: bool) -> ConfidenceParams {
        ConfidenceParams::new(0.1, 0.1, 1.0, optimistic).unwrap()
    }

    #[test]
    fn f_rad_closed_form_values() {
        assert_eq!(f_rad(0.0, 1, 0.1).unwrap(), 0.1);
        assert!((f_rad(0.5, 10, 0.1).unwrap() - 0.080_710_678_1).abs() < 1e-9);
        assert!((f_rad(1.0, 1, 0.1).unwrap() - 0.416_227_766_0).abs() < 1e-9);
    }

    #[test]
    fn f_rad_rejects_bad_domain() {
        assert!(f_rad(1.5, 1, 0.1).is_err());
        assert!(f_rad(-0.1, 1, 0.1).is_err());
        assert!(f_rad(0.5, 0, 0.1).is_err());
        assert!(f_rad(0.5, 1, 0.0).is_err());
    }

    #[test]
    fn update_running_means() {
        let p = ConfidenceParams::new(0.1, 0.0001, 0.01, true).unwrap();
        let s = EmpiricalStats::new(p.c_lo).update(0.7, 0.002, &p).unwrap();
        assert_eq!((s.count, s.mean_reward, s.mean_cost), (1, 0.7, 0.002));
        let s = s.update(0.3, 0.002, &p).unwrap();
        assert_eq!(s.count, 2);
        assert!((s.mean_reward - 0.5).abs() < 1e-15);
    }

    #[test]
    fn update_rejects_out_of_range() {
        let p = ConfidenceParams::new(0.1, 0.001, 0.01, true).unwrap();
        let s = EmpiricalStats::new(p.c_lo);
        assert!(s.update(1.2, 0.002, &p).is_err());
        assert!(s.update(0.5, 0.02, &p).is_err());
        assert!(s.update(0.5, 0.0005, &p).is_err());
    }

    #[test]
    fn ucb_examples() {
        assert_eq!(reward_ucb(&EmpiricalStats::new(0.1), &params(true)), 1.0);
        let s = EmpiricalStats::from_parts(3, 0.9, 0.1);
        assert_eq!(reward_ucb(&s, &params(false)), 1.0);
        // n = 100: 0.5 + 2 * (sqrt(0.0005) + 0.001)
        let s = EmpiricalStats::from_parts(99, 0.5, 0.1);
        assert!((reward_ucb(&s, &params(false)) - 0.546_721_359_5).abs() < 1e-9);
    }

    #[test]
    fn lcb_examples() {
        assert_eq!(cost_lcb(&EmpiricalStats::new(0.1), &params(true)), 0.1);
        let s = EmpiricalStats::from_parts(0, 0.0, 0.5);
        assert_eq!(cost_lcb(&s, &params(false)), 0.1);
        let p = ConfidenceParams::new(0.1, 0.001, 1.0, true).unwrap();
        let s = EmpiricalStats::from_parts(399, 0.0, 0.5);
        // n = 400: 0.5 - 2 * (sqrt(0.000125) + 0.00025)
        assert!((cost_lcb(&s, &p) - 0.477_139_320_2).abs() < 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(ConfidenceParams::new(0.0, 0.1, 1.0, true).is_err());
        assert!(ConfidenceParams::new(0.1, 0.5, 0.4, true).is_err());
        assert!(ConfidenceParams::new(0.1, 0.0, 0.4, true).is_err());
        assert!(ConfidenceParams::new(0.1, 0.5, 1.5, true).is_err());
    }
}

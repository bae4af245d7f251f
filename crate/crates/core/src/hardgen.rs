//! Drifting-frontier instances for regret-scaling experiments.
//!
//! The horizon is cut into `N_B` batches of length `Δ`. In batch `j` one
//! uniformly drawn "strong" model pays Bernoulli(1/2 + jε) and the others pay
//! Bernoulli(1/2 + (j-1)ε), so the whole frontier moves up by ε per batch and
//! last batch's best becomes this batch's baseline. With
//! `ε = (c_S·M / 8T)^{1/3}` and `Δ = (c_S/2)·M·ε⁻²` every policy loses a
//! constant fraction of `εΔ` per batch, i.e. order `T^{2/3}` overall.
//!
//! Costs are one per query and caps are one, so any budget `b >= 1` is slack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Generator, MeanPath, ModelSpec, SyntheticModel, TokenDist};
use crate::environment::{Manifest, ManifestEntry, RewardDist};
use crate::error::{Error, Result};
use crate::ModelId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    pub horizon: u64,
    pub models: usize,
    pub c_s: f64,
    pub seed: u64,
}

impl HardInstanceParams {
    pub fn new(horizon: u64, models: usize, seed: u64) -> Self {
        Self {
            horizon,
            models,
            c_s: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardInstance {
    pub params: HardInstanceParams,
    pub epsilon: f64,
    /// Nominal batch length; the final batch also absorbs the remainder.
    pub batch_len: u64,
    pub n_batches: usize,
    /// First round of each batch (1-based).
    pub batch_starts: Vec<u64>,
    /// Strong model index per batch (0-based).
    pub strong: Vec<usize>,
}

pub fn generate_hard_instance(params: HardInstanceParams) -> Result<HardInstance> {
    let HardInstanceParams {
        horizon,
        models,
        c_s,
        seed,
    } = params;
    if models < 2 {
        return Err(Error::domain(format!(
            "need at least 2 models per batch, got {models}"
        )));
    }
    if !(c_s > 0.0 && c_s.is_finite()) {
        return Err(Error::domain(format!("c_S must be positive, got {c_s}")));
    }
    let m = models as f64;
    let epsilon = (c_s * m / (8.0 * horizon as f64)).cbrt();
    let batch_len = ((c_s / 2.0) * m / (epsilon * epsilon)).round().max(1.0) as u64;
    let mut n_batches = (horizon / batch_len) as usize;
    if n_batches == 0 {
        return Err(Error::domain(format!(
            "horizon {horizon} is shorter than one batch ({batch_len} rounds); need T >= 8·c_S·M"
        )));
    }
    // Rounding Δ down can push N_B·ε a hair past 1/4.
    while n_batches > 1 && n_batches as f64 * epsilon > 0.25 + 1e-12 {
        n_batches -= 1;
    }
    let top = 0.5 + n_batches as f64 * epsilon;
    if top > 1.0 {
        return Err(Error::domain(format!("strong mean {top} exceeds 1")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strong = (0..n_batches)
        .map(|_| rng.random_range(0..models))
        .collect();
    let batch_starts = (0..n_batches as u64).map(|j| 1 + j * batch_len).collect();
    Ok(HardInstance {
        params,
        epsilon,
        batch_len,
        n_batches,
        batch_starts,
        strong,
    })
}

impl HardInstance {
    /// `(strong mean, weak mean)` in 1-based batch `j`.
    pub fn batch_means(&self, j: usize) -> (f64, f64) {
        let j = j as f64;
        (0.5 + j * self.epsilon, 0.5 + (j - 1.0) * self.epsilon)
    }

    /// Number of rounds in 1-based batch `j`.
    pub fn batch_length(&self, j: usize) -> u64 {
        if j == self.n_batches {
            self.params.horizon - (self.n_batches as u64 - 1) * self.batch_len
        } else {
            self.batch_len
        }
    }

    pub fn model_id(i: usize) -> ModelId {
        ModelId::new(format!("arm{i:03}"))
    }

    /// Benchmark total `Σ_j |batch j|·(1/2 + jε)` (budget slack).
    pub fn opt_star(&self) -> f64 {
        (1..=self.n_batches)
            .map(|j| self.batch_length(j) as f64 * self.batch_means(j).0)
            .sum()
    }

    pub fn environment(&self) -> Environment {
        let models = (0..self.params.models)
            .map(|i| {
                let means = (1..=self.n_batches)
                    .map(|j| {
                        let (hi, lo) = self.batch_means(j);
                        if self.strong[j - 1] == i {
                            hi
                        } else {
                            lo
                        }
                    })
                    .collect();
                ModelSpec {
                    model_id: Self::model_id(i),
                    available_from: 1,
                    alpha: 1.0,
                    generator: Generator::Synthetic(SyntheticModel {
                        mu: MeanPath::Piecewise {
                            starts: self.batch_starts.clone(),
                            means,
                        },
                        reward: RewardDist::Bernoulli,
                        in_tokens: TokenDist::Fixed { value: 1 },
                        out_tokens: TokenDist::Fixed { value: 0 },
                        p_in: 1.0,
                        p_out: 0.0,
                    }),
                }
            })
            .collect();
        Environment::synthetic(models, 1.0, 1.0).expect("hard instance is well formed")
    }

    /// The instance's models in manifest form, for inspection.
    pub fn manifest(&self) -> Manifest {
        Manifest {
            models: (0..self.params.models)
                .map(|i| ManifestEntry {
                    model_id: Self::model_id(i),
                    alpha: 1.0,
                    release_index: i as u32,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_parameters() {
        let inst = generate_hard_instance(HardInstanceParams::new(1_000_000, 2, 7)).unwrap();
        assert!((inst.epsilon - 6.299_605_249e-3).abs() < 1e-12);
        assert_eq!(inst.batch_len, 25_198);
        assert_eq!(inst.n_batches, 39);
        assert!(inst.n_batches as f64 * inst.epsilon <= 0.25);
        assert!(inst.batch_means(inst.n_batches).0 <= 0.75);
    }

    #[test]
    fn first_batch_means() {
        let inst = generate_hard_instance(HardInstanceParams::new(100_000, 3, 1)).unwrap();
        let (hi, lo) = inst.batch_means(1);
        assert_eq!(lo, 0.5);
        assert_eq!(hi, 0.5 + inst.epsilon);
    }

    #[test]
    fn frontier_drift_and_gap() {
        let inst = generate_hard_instance(HardInstanceParams::new(200_000, 4, 9)).unwrap();
        for j in 1..inst.n_batches {
            let (hi, lo) = inst.batch_means(j);
            assert!((hi - lo - inst.epsilon).abs() < 1e-15);
            assert_eq!(inst.batch_means(j + 1).1, hi);
        }
        let total: u64 = (1..=inst.n_batches).map(|j| inst.batch_length(j)).sum();
        assert_eq!(total, 200_000);
    }

    #[test]
    fn strong_sequence_is_seeded() {
        let a = generate_hard_instance(HardInstanceParams::new(500_000, 3, 42)).unwrap();
        let b = generate_hard_instance(HardInstanceParams::new(500_000, 3, 42)).unwrap();
        assert_eq!(a.strong, b.strong);
        assert!(a.strong.iter().all(|&s| s < 3));
    }

    #[test]
    fn rejects_tiny_horizon_and_single_model() {
        assert!(generate_hard_instance(HardInstanceParams::new(10, 2, 0)).is_err());
        assert!(generate_hard_instance(HardInstanceParams::new(100_000, 1, 0)).is_err());
    }

    #[test]
    fn environment_follows_batches() {
        let inst = generate_hard_instance(HardInstanceParams::new(100_000, 2, 3)).unwrap();
        let env = inst.environment();
        let s2 = inst.strong[1];
        let means = env.true_means_at(inst.batch_starts[1]);
        assert_eq!(means[s2].0, inst.batch_means(2).0);
        assert_eq!(means[1 - s2].0, inst.batch_means(2).1);
        assert_eq!(env.cost_bounds(), (1.0, 1.0));
    }
}

//! Seeded random solver instances shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stageroute_core::CandidateRow;

/// `n` rows with reward estimates in `[0, 1]`, dollar-scale costs and caps
/// in `[cap_lo, 1]`.
pub fn random_rows(n: usize, cap_lo: f64, seed: u64) -> Vec<CandidateRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            CandidateRow::new(
                format!("m{i:03}"),
                rng.random::<f64>(),
                rng.random_range(1e-4..1e-2),
                rng.random_range(cap_lo..=1.0),
            )
        })
        .collect()
}

/// A batch of instances of one size, so a benchmark iteration does not
/// measure a single lucky layout.
pub fn instance_batch(n: usize, cap_lo: f64, count: usize, seed: u64) -> Vec<Vec<CandidateRow>> {
    (0..count as u64)
        .map(|k| random_rows(n, cap_lo, seed.wrapping_add(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_seeded_and_in_range() {
        let a = random_rows(20, 0.3, 1);
        assert_eq!(a, random_rows(20, 0.3, 1));
        assert!(a
            .iter()
            .all(|r| (0.3..=1.0).contains(&r.cap) && r.unit_cost > 0.0 && r.value <= 1.0));
    }
}

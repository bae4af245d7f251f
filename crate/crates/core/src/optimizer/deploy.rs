//! Deployment program with a support-cardinality constraint.
//!
//! The binary activation form is
//!
//! ```text
//! max Σ v_m d_m  s.t.  Σ c_m d_m <= b,  Σ d_m = 1,  0 <= d_m <= cap_m z_m,
//!                      Σ z_m = k = min(M_max, |pool|),  z_m ∈ {0, 1}
//! ```
//!
//! Fixing `z` leaves the routing LP over the activated slots, so the program
//! is solved exactly by searching over `k`-subsets. Small pools are enumerated
//! outright; larger ones go through branch-and-bound whose node bound is the
//! routing LP over every model not yet excluded.
//!
//! Ties: among slot sets whose objective is within [`TIE_TOL`] of the best,
//! the lexicographically smallest id-sorted set wins. Both search paths apply
//! the same rule and evaluate leaves with the same LP call, so they agree
//! exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Infeasibility, Result};
use crate::optimizer::route::{solve_dense, Coeff, DenseSolution};
use crate::optimizer::{best_cap_sum, canonical_rows, BudgetSpec, CandidateRow, DeploymentPlan};

/// Objective gap under which two slot sets count as tied.
pub const TIE_TOL: f64 = 1e-10;

/// Enumerate when `C(n, k)` is at most this many subsets.
pub const ENUMERATION_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeployStrategy {
    /// Enumeration below [`ENUMERATION_LIMIT`] subsets, branch-and-bound above.
    #[default]
    Auto,
    Enumerate,
    BranchAndBound,
}

/// Solves the deployment program exactly with the requested search strategy.
pub fn solve_deploy_mip_with(
    rows: &[CandidateRow],
    budget: BudgetSpec,
    m_max: usize,
    strategy: DeployStrategy,
) -> Result<DeploymentPlan> {
    let rows = canonical_rows(rows)?;
    let n = rows.len();
    let caps: Vec<f64> = rows.iter().map(|r| r.cap).collect();
    let k = m_max.min(n);
    if n == 0 || k == 0 {
        return Err(Infeasibility::Throughput { best_cap_sum: 0.0 }.into());
    }
    let cap_sum = best_cap_sum(&caps, k);
    if cap_sum < 1.0 - super::FEAS_TOL {
        return Err(Infeasibility::Throughput {
            best_cap_sum: cap_sum,
        }
        .into());
    }

    let coeffs: Vec<Coeff> = rows.iter().map(CandidateRow::coeff).collect();
    let search = Search::new(&coeffs, budget.b, k);
    let use_enumeration = match strategy {
        DeployStrategy::Enumerate => true,
        DeployStrategy::BranchAndBound => false,
        DeployStrategy::Auto => binomial(n as u64, k as u64) <= ENUMERATION_LIMIT,
    };
    let found = if use_enumeration {
        search.enumerate()
    } else {
        search.branch_and_bound()
    };
    let (slots, sol) = found.ok_or_else(|| Infeasibility::Budget {
        min_cost: search.min_cost(),
        budget: budget.b,
    })?;

    let selected = slots.iter().map(|&i| rows[i].model_id.clone()).collect();
    let mut weights = BTreeMap::new();
    let mut active_set = Vec::new();
    for (&i, &w) in slots.iter().zip(&sol.weights) {
        if w > 0.0 {
            active_set.push(rows[i].model_id.clone());
            weights.insert(rows[i].model_id.clone(), w);
        }
    }
    Ok(DeploymentPlan {
        active_set,
        selected,
        weights,
        objective: sol.objective,
    })
}

struct Search<'a> {
    coeffs: &'a [Coeff],
    budget: f64,
    k: usize,
}

impl<'a> Search<'a> {
    fn new(coeffs: &'a [Coeff], budget: f64, k: usize) -> Self {
        Self { coeffs, budget, k }
    }

    fn solve(&self, subset: &[usize]) -> Option<DenseSolution> {
        let sub: Vec<Coeff> = subset.iter().map(|&i| self.coeffs[i]).collect();
        solve_dense(&sub, self.budget).ok()
    }

    /// Cheapest achievable cost over all `k`-subsets, for diagnostics.
    fn min_cost(&self) -> f64 {
        // The cheapest fill over the whole pool is attained on its own support,
        // but that support may exceed k; fall back to the k cheapest models.
        let mut idx: Vec<usize> = (0..self.coeffs.len()).collect();
        idx.sort_by(|&a, &b| self.coeffs[a].cost.total_cmp(&self.coeffs[b].cost));
        let mut remaining = 1.0;
        let mut cost = 0.0;
        for &i in idx.iter().take(self.k) {
            let take = self.coeffs[i].cap.min(remaining);
            cost += take * self.coeffs[i].cost;
            remaining -= take;
        }
        cost
    }

    fn enumerate(&self) -> Option<(Vec<usize>, DenseSolution)> {
        let n = self.coeffs.len();
        let mut feasible: Vec<(Vec<usize>, DenseSolution)> = Vec::new();
        let mut combo: Vec<usize> = (0..self.k).collect();
        loop {
            if let Some(sol) = self.solve(&combo) {
                feasible.push((combo.clone(), sol));
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
        let best = feasible
            .iter()
            .map(|(_, s)| s.objective)
            .fold(f64::NEG_INFINITY, f64::max);
        // Combinations were produced in lexicographic order.
        feasible
            .into_iter()
            .find(|(_, s)| s.objective >= best - TIE_TOL)
    }

    fn branch_and_bound(&self) -> Option<(Vec<usize>, DenseSolution)> {
        let best = self.best_objective()?;
        let mut included = Vec::with_capacity(self.k);
        self.first_leaf_at_least(best - TIE_TOL, 0, &mut included)
    }

    /// Best-first search for the optimal objective value.
    fn best_objective(&self) -> Option<f64> {
        let n = self.coeffs.len();
        let mut heap = BinaryHeap::new();
        let mut incumbent = f64::NEG_INFINITY;
        let mut serial = 0u64;
        let root = Node {
            included: Vec::new(),
            next: 0,
        };
        if let Some(bound) = self.bound(&root) {
            heap.push(Queued {
                bound: bound.objective,
                serial,
                node: root,
            });
        }
        while let Some(Queued { bound, node, .. }) = heap.pop() {
            if bound <= incumbent + 1e-12 {
                break;
            }
            let free = n - node.next;
            if node.included.len() == self.k || node.included.len() + free == self.k {
                let leaf = node.leaf(n, self.k);
                if let Some(sol) = self.solve(&leaf) {
                    incumbent = incumbent.max(sol.objective);
                }
                continue;
            }
            // Close the node when the relaxed optimum already fits in k slots.
            let relaxed = self.bound(&node).expect("queued nodes are feasible");
            if let Some(leaf) = self.closure(&node, &relaxed) {
                if let Some(sol) = self.solve(&leaf) {
                    incumbent = incumbent.max(sol.objective);
                    if sol.objective >= bound - 1e-12 {
                        continue;
                    }
                }
            }
            for child in node.children(n, self.k) {
                if let Some(b) = self.bound(&child) {
                    if b.objective > incumbent + 1e-12 {
                        serial += 1;
                        heap.push(Queued {
                            bound: b.objective,
                            serial,
                            node: child,
                        });
                    }
                }
            }
        }
        incumbent.is_finite().then_some(incumbent)
    }

    /// Include-first depth-first search: visits `k`-subsets in lexicographic
    /// order and returns the first whose objective reaches `target`.
    fn first_leaf_at_least(
        &self,
        target: f64,
        next: usize,
        included: &mut Vec<usize>,
    ) -> Option<(Vec<usize>, DenseSolution)> {
        let n = self.coeffs.len();
        let free = n - next;
        if included.len() == self.k || included.len() + free == self.k {
            let node = Node {
                included: included.clone(),
                next,
            };
            let leaf = node.leaf(n, self.k);
            return self
                .solve(&leaf)
                .filter(|s| s.objective >= target)
                .map(|s| (leaf, s));
        }
        let node = Node {
            included: included.clone(),
            next,
        };
        match self.bound(&node) {
            Some(b) if b.objective >= target - 1e-9 => {}
            _ => return None,
        }
        included.push(next);
        let found = self.first_leaf_at_least(target, next + 1, included);
        included.pop();
        if found.is_some() {
            return found;
        }
        if included.len() + free > self.k {
            return self.first_leaf_at_least(target, next + 1, included);
        }
        None
    }

    /// Routing LP over every model not excluded at this node.
    fn bound(&self, node: &Node) -> Option<DenseSolution> {
        let avail: Vec<usize> = node
            .included
            .iter()
            .copied()
            .chain(node.next..self.coeffs.len())
            .collect();
        self.solve(&avail)
    }

    /// A `k`-subset containing both the node's forced models and the relaxed
    /// solution's support, when one exists.
    fn closure(&self, node: &Node, relaxed: &DenseSolution) -> Option<Vec<usize>> {
        let avail: Vec<usize> = node
            .included
            .iter()
            .copied()
            .chain(node.next..self.coeffs.len())
            .collect();
        let mut set: Vec<usize> = node.included.clone();
        for (&i, &w) in avail.iter().zip(&relaxed.weights) {
            if w > 0.0 && !set.contains(&i) {
                set.push(i);
            }
        }
        if set.len() > self.k {
            return None;
        }
        for &i in &avail {
            if set.len() == self.k {
                break;
            }
            if !set.contains(&i) {
                set.push(i);
            }
        }
        set.sort_unstable();
        Some(set)
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Forced-in models, ascending.
    included: Vec<usize>,
    /// Models `< next` not in `included` are excluded; `>= next` are free.
    next: usize,
}

impl Node {
    fn leaf(&self, n: usize, k: usize) -> Vec<usize> {
        let mut set = self.included.clone();
        if set.len() < k {
            set.extend(self.next..n);
        }
        set
    }

    fn children(&self, n: usize, k: usize) -> Vec<Node> {
        let mut out = Vec::with_capacity(2);
        let free_after = n - self.next - 1;
        if self.included.len() < k {
            let mut included = self.included.clone();
            included.push(self.next);
            out.push(Node {
                included,
                next: self.next + 1,
            });
        }
        if self.included.len() + free_after >= k {
            out.push(Node {
                included: self.included.clone(),
                next: self.next + 1,
            });
        }
        out
    }
}

struct Queued {
    bound: f64,
    serial: u64,
    node: Node,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.serial.cmp(&self.serial))
    }
}

/// Advances `combo` to the next `k`-combination of `0..n` in lexicographic
/// order; returns false after the last one.
pub(crate) fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{solve_deploy_mip, solve_route_lp};
    use crate::{Error, ModelId};

    fn rows_abc() -> Vec<CandidateRow> {
        vec![
            CandidateRow::new("A", 0.9, 0.002, 0.4),
            CandidateRow::new("B", 0.7, 0.0005, 1.0),
            CandidateRow::new("C", 0.6, 0.0004, 1.0),
        ]
    }

    #[test]
    fn three_model_example_both_strategies() {
        let budget = BudgetSpec::new(0.001).unwrap();
        for strategy in [DeployStrategy::Enumerate, DeployStrategy::BranchAndBound] {
            let plan = solve_deploy_mip_with(&rows_abc(), budget, 2, strategy).unwrap();
            assert_eq!(
                plan.active_set,
                vec![ModelId::from("A"), ModelId::from("B")]
            );
            assert!((plan.weights[&ModelId::from("A")] - 1.0 / 3.0).abs() < 1e-12);
            assert!((plan.weights[&ModelId::from("B")] - 2.0 / 3.0).abs() < 1e-12);
            assert!((plan.objective - 0.766_666_666_7).abs() < 1e-9);
        }
    }

    #[test]
    fn slack_cardinality_matches_route_lp() {
        let rows = vec![
            CandidateRow::new("x", 0.3, 0.2, 1.0),
            CandidateRow::new("y", 0.8, 0.9, 0.5),
            CandidateRow::new("z", 0.6, 0.4, 0.7),
        ];
        let budget = BudgetSpec::new(1.0).unwrap();
        let plan = solve_deploy_mip(&rows, budget, 5).unwrap();
        let lp = solve_route_lp(&rows, budget).unwrap();
        assert_eq!(plan.objective, lp.objective);
        assert_eq!(plan.selected.len(), 3);
    }

    #[test]
    fn throughput_infeasible_pairs() {
        let rows = vec![
            CandidateRow::new("a", 0.5, 0.1, 0.4),
            CandidateRow::new("b", 0.5, 0.1, 0.4),
            CandidateRow::new("c", 0.5, 0.1, 0.4),
        ];
        let err = solve_deploy_mip(&rows, BudgetSpec::new(1.0).unwrap(), 2).unwrap_err();
        assert!(matches!(
            err,
            Error::Infeasible(Infeasibility::Throughput { .. })
        ));
    }

    #[test]
    fn budget_infeasible_is_distinguished() {
        let rows = vec![
            CandidateRow::new("a", 0.5, 0.3, 1.0),
            CandidateRow::new("b", 0.5, 0.2, 1.0),
        ];
        let err = solve_deploy_mip(&rows, BudgetSpec::new(0.1).unwrap(), 2).unwrap_err();
        match err {
            Error::Infeasible(Infeasibility::Budget { min_cost, .. }) => {
                assert!((min_cost - 0.2).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symmetric_rows_tie_break_lexicographically() {
        let rows: Vec<CandidateRow> = ["d", "b", "c", "a"]
            .iter()
            .map(|id| CandidateRow::new(*id, 1.0, 0.1, 1.0))
            .collect();
        let budget = BudgetSpec::new(0.5).unwrap();
        for strategy in [DeployStrategy::Enumerate, DeployStrategy::BranchAndBound] {
            let plan = solve_deploy_mip_with(&rows, budget, 2, strategy).unwrap();
            assert_eq!(plan.selected, vec![ModelId::from("a"), ModelId::from("b")]);
            assert_eq!(plan.active_set, vec![ModelId::from("a")]);
        }
    }

    #[test]
    fn combinations_in_lexicographic_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(binomial(11, 5), 462);
        assert_eq!(binomial(30, 5), 142_506);
    }
}

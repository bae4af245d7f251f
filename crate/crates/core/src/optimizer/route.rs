//! Exact solver for the single-budget routing LP
//!
//! ```text
//! max  Σ v_i p_i   s.t.  Σ c_i p_i <= b,  Σ p_i = 1,  0 <= p_i <= cap_i
//! ```
//!
//! For a fixed multiplier `λ >= 0` on the budget row, the Lagrangian
//! subproblem is a fractional fill: sort by `v_i - λ c_i` and pour mass into
//! the caps until one unit is placed. The fill order only changes at the
//! pairwise breakpoints `λ_ij = (v_i - v_j) / (c_i - c_j)`, and the cost of the
//! fill is non-increasing in `λ`. The optimum is either the `λ = 0` fill (budget
//! slack) or a convex mix of the fills on the two sides of the first
//! breakpoint where the fill becomes affordable, taken so the budget is met
//! with equality. Both fills maximise the Lagrangian at that breakpoint, so
//! the mix is primal optimal.

use std::cmp::Ordering;

use crate::error::Infeasibility;

/// Slack allowed on every constraint.
pub const FEAS_TOL: f64 = 1e-9;

/// One LP column without its identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeff {
    pub value: f64,
    pub cost: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub cost: f64,
}

/// Solves the routing LP over `coeffs` (column order is the tie-break of last
/// resort, so callers pass columns in canonical id order).
pub fn solve_dense(coeffs: &[Coeff], budget: f64) -> Result<DenseSolution, Infeasibility> {
    let n = coeffs.len();
    let cap_sum: f64 = coeffs.iter().map(|c| c.cap.min(1.0)).sum();
    if n == 0 || cap_sum < 1.0 - FEAS_TOL {
        return Err(Infeasibility::Throughput {
            best_cap_sum: cap_sum,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = vec![0.0; n];

    // Cheapest feasible fill decides budget feasibility.
    order.sort_by(|&i, &j| {
        cmp_f64(coeffs[i].cost, coeffs[j].cost)
            .then(cmp_f64(coeffs[j].value, coeffs[i].value))
            .then(i.cmp(&j))
    });
    let min_cost = fill(coeffs, &order, &mut weights);
    if min_cost > budget + FEAS_TOL {
        return Err(Infeasibility::Budget { min_cost, budget });
    }

    // λ = 0: best value first, cheaper first among equal values.
    order.sort_by(|&i, &j| {
        cmp_f64(coeffs[j].value, coeffs[i].value)
            .then(cmp_f64(coeffs[i].cost, coeffs[j].cost))
            .then(i.cmp(&j))
    });
    let cost0 = fill(coeffs, &order, &mut weights);
    if cost0 <= budget {
        return Ok(finish(coeffs, weights));
    }

    let breakpoints = breakpoints(coeffs);
    // Interval j is (bp[j-1], bp[j]) with bp[-1] = 0 and bp[r] = +inf.
    let probes: Vec<f64> = (0..=breakpoints.len())
        .map(
            |j| match (j.checked_sub(1).map(|p| breakpoints[p]), breakpoints.get(j)) {
                (None, Some(&hi)) => 0.5 * hi,
                (Some(lo), Some(&hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => 2.0 * lo + 1.0,
                (None, None) => 1.0,
            },
        )
        .collect();

    let mut fill_at = |lambda: f64, out: &mut Vec<f64>| -> f64 {
        order.sort_by(|&i, &j| {
            let ri = coeffs[i].value - lambda * coeffs[i].cost;
            let rj = coeffs[j].value - lambda * coeffs[j].cost;
            cmp_f64(rj, ri)
                .then(cmp_f64(coeffs[i].cost, coeffs[j].cost))
                .then(i.cmp(&j))
        });
        fill(coeffs, &order, out)
    };

    // First interval whose fill is affordable (fill cost is non-increasing).
    let (mut lo, mut hi) = (0usize, probes.len());
    let mut scratch = vec![0.0; n];
    while lo < hi {
        let mid = (lo + hi) / 2;
        if fill_at(probes[mid], &mut scratch) <= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo == probes.len() {
        // Only reachable when the cheapest fill sits inside the tolerance band.
        let last = probes.len() - 1;
        fill_at(probes[last], &mut weights);
        return Ok(finish(coeffs, weights));
    }

    let mut affordable = vec![0.0; n];
    let cost_in = fill_at(probes[lo], &mut affordable);
    let mut over = vec![0.0; n];
    let cost_over = if lo == 0 {
        fill_at(0.0, &mut over)
    } else {
        fill_at(probes[lo - 1], &mut over)
    };
    if cost_over <= cost_in {
        return Ok(finish(coeffs, affordable));
    }
    let theta = ((budget - cost_in) / (cost_over - cost_in)).clamp(0.0, 1.0);
    let mixed = over
        .iter()
        .zip(&affordable)
        .map(|(&a, &b)| theta * a + (1.0 - theta) * b)
        .collect();
    Ok(finish(coeffs, mixed))
}

/// Pours one unit of mass into `order`, returning the resulting cost.
fn fill(coeffs: &[Coeff], order: &[usize], out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|w| *w = 0.0);
    let mut remaining = 1.0;
    let mut cost = 0.0;
    for &i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = coeffs[i].cap.min(remaining);
        out[i] = take;
        cost += take * coeffs[i].cost;
        remaining -= take;
    }
    cost
}

fn breakpoints(coeffs: &[Coeff]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..coeffs.len() {
        for j in (i + 1)..coeffs.len() {
            let dc = coeffs[i].cost - coeffs[j].cost;
            if dc == 0.0 {
                continue;
            }
            let lambda = (coeffs[i].value - coeffs[j].value) / dc;
            if lambda > 0.0 && lambda.is_finite() {
                out.push(lambda);
            }
        }
    }
    out.sort_by(|a, b| cmp_f64(*a, *b));
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    out
}

fn finish(coeffs: &[Coeff], mut weights: Vec<f64>) -> DenseSolution {
    for w in weights.iter_mut() {
        if *w < 1e-15 {
            *w = 0.0;
        }
    }
    let objective = weights.iter().zip(coeffs).map(|(w, c)| w * c.value).sum();
    let cost = weights.iter().zip(coeffs).map(|(w, c)| w * c.cost).sum();
    DenseSolution {
        weights,
        objective,
        cost,
    }
}

#[inline]
fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

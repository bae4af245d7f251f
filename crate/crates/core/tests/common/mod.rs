#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use stageroute_core::environment::{
    ArrivalSchedule, Generator, ModelSpec, SyntheticModel, TokenDist,
};
use stageroute_core::{CandidateRow, Environment, ModelId};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_env() -> Environment {
    let dir = fixture_dir();
    let ds = stageroute_core::environment::load_replay_dataset(
        &dir.join("replay.csv"),
        &dir.join("manifest.toml"),
    )
    .unwrap();
    Environment::replay(
        ds,
        ArrivalSchedule {
            initial_count: 5,
            interval: 5000,
        },
    )
    .unwrap()
}

/// Best objective over the basic feasible points of
/// `max v·p  s.t. Σp = 1, c·p <= b, 0 <= p <= cap`.
///
/// A vertex has at most two coordinates strictly inside their bounds (only
/// two general constraints), so every vertex is reached by fixing the rest at
/// 0 or cap and solving for the free ones.
pub fn lp_oracle(v: &[f64], c: &[f64], cap: &[f64], b: f64) -> Option<f64> {
    const TOL: f64 = 1e-9;
    let n = v.len();
    let mut best: Option<f64> = None;
    let mut consider = |p: &[f64]| {
        let sum: f64 = p.iter().sum();
        let cost: f64 = p.iter().zip(c).map(|(x, y)| x * y).sum();
        let ok = (sum - 1.0).abs() <= TOL
            && cost <= b + TOL
            && p.iter().zip(cap).all(|(&x, &u)| x >= -TOL && x <= u + TOL);
        if ok {
            let obj: f64 = p.iter().zip(v).map(|(x, y)| x * y).sum();
            best = Some(best.map_or(obj, |b: f64| b.max(obj)));
        }
    };
    // state per coordinate: 0 => at zero, 1 => at cap, 2 => free
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut x = code;
        for s in state.iter_mut() {
            *s = (x % 3) as u8;
            x /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if free.len() > 2 {
            continue;
        }
        let mut p: Vec<f64> = (0..n)
            .map(|i| if state[i] == 1 { cap[i] } else { 0.0 })
            .collect();
        let rest = 1.0 - p.iter().sum::<f64>();
        let rest_cost = b - p.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        match free.as_slice() {
            [] => consider(&p),
            [f] => {
                p[*f] = rest;
                consider(&p);
            }
            [f, g] => {
                let (cf, cg) = (c[*f], c[*g]);
                if (cf - cg).abs() > 1e-15 {
                    // p_f + p_g = rest, cf p_f + cg p_g = rest_cost
                    let pf = (rest_cost - cg * rest) / (cf - cg);
                    p[*f] = pf;
                    p[*g] = rest - pf;
                    consider(&p);
                }
            }
            _ => unreachable!(),
        }
    }
    best
}

pub fn rows_oracle(rows: &[CandidateRow], b: f64) -> Option<f64> {
    let v: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.unit_cost).collect();
    let u: Vec<f64> = rows.iter().map(|r| r.cap).collect();
    lp_oracle(&v, &c, &u, b)
}

/// Lexicographic next k-combination of `0..n`.
fn next_combo(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive support enumeration: the best objective over all
/// `min(m_max, n)`-subsets and the lexicographically first id-sorted subset
/// within `tie` of it.
pub fn mip_oracle(
    rows: &[CandidateRow],
    b: f64,
    m_max: usize,
    tie: f64,
) -> Option<(f64, Vec<ModelId>)> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let n = rows.len();
    let k = m_max.min(n);
    if k == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut all: Vec<(Vec<usize>, f64)> = Vec::new();
    loop {
        let sub: Vec<CandidateRow> = idx.iter().map(|&i| rows[i].clone()).collect();
        if let Some(v) = rows_oracle(&sub, b) {
            all.push((idx.clone(), v));
        }
        if !next_combo(&mut idx, n) {
            break;
        }
    }
    let best = all
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let (set, _) = all.into_iter().find(|(_, v)| *v >= best - tie)?;
    Some((
        best,
        set.into_iter().map(|i| rows[i].model_id.clone()).collect(),
    ))
}

/// Random routing row; values and costs are occasionally snapped to a coarse
/// grid so that ties show up.
pub fn random_row<R: Rng>(rng: &mut R, id: &str) -> CandidateRow {
    let snap = rng.random_bool(0.25);
    let value = if snap {
        f64::from(rng.random_range(0..5u8)) / 4.0
    } else {
        rng.random::<f64>()
    };
    let cost = if snap {
        f64::from(rng.random_range(1..5u8)) / 4.0
    } else {
        rng.random_range(0.01..1.0)
    };
    let cap = if rng.random_bool(0.5) {
        1.0
    } else {
        rng.random_range(0.1..1.0)
    };
    CandidateRow::new(id, value, cost, cap)
}

pub fn bernoulli_model(id: &str, mu: f64, cost: f64, alpha: f64) -> ModelSpec {
    ModelSpec {
        model_id: ModelId::from(id),
        available_from: 1,
        alpha,
        generator: Generator::Synthetic(SyntheticModel::bernoulli(
            mu,
            TokenDist::Fixed { value: 1 },
            TokenDist::Fixed { value: 0 },
            cost,
            0.0,
        )),
    }
}

//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use covergraph_core::{CollapseResult, DistanceMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// High-precision values of `1 / (1 + exp((s - 4.3) / 0.5))`.
pub const LOGISTIC_AT_2: f64 = 0.990_048_198_133_095_678_427_050_961_550_562_8;
pub const LOGISTIC_AT_8: f64 = 0.000_610_879_359_434_401_213_330_391_716_545_925_9;

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

/// Random symmetric matrix with zero diagonal and entries in `[0.05, 1)`.
#[allow(clippy::needless_range_loop)]
pub fn random_distances(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.05..1.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DistanceMatrix {
    DistanceMatrix::from_rows(ids(rows.len()), rows).unwrap()
}

/// Second-smallest two-hop sum by sorting every admissible intermediate.
fn second_min_by_sort(d: &[Vec<f64>], i: usize, j: usize) -> Option<f64> {
    let mut sums: Vec<f64> = (0..d.len())
        .filter(|&k| k != i && k != j)
        .map(|k| d[i][k] + d[k][j])
        .collect();
    if sums.len() < 2 {
        return None;
    }
    sums.sort_by(f64::total_cmp);
    Some(sums[1])
}

/// Fixed point of the loose update, visiting pairs in row-major order and
/// reading values already updated in the current sweep.
pub fn oracle_in_place(d0: &[Vec<f64>], eta: f64, tol: f64) -> Vec<Vec<f64>> {
    let mut d = d0.to_vec();
    let n = d.len();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                if let Some(s) = second_min_by_sort(&d, i, j) {
                    let cand = s + eta;
                    if d[i][j] - cand > tol {
                        d[i][j] = cand;
                        d[j][i] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// Same fixed point with every sweep reading a snapshot of the previous one.
pub fn oracle_synchronous(d0: &[Vec<f64>], eta: f64, tol: f64) -> Vec<Vec<f64>> {
    let mut d = d0.to_vec();
    let n = d.len();
    loop {
        let prev = d.clone();
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                if let Some(s) = second_min_by_sort(&prev, i, j) {
                    let cand = s + eta;
                    if prev[i][j] - cand > tol {
                        d[i][j] = cand;
                        d[j][i] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Every entry is within `tol` of its own loose update.
pub fn fixed_point_certificate(d: &[Vec<f64>], eta: f64, tol: f64) -> bool {
    let n = d.len();
    (0..n).all(|i| {
        (i + 1..n).all(|j| match second_min_by_sort(d, i, j) {
            Some(s) => d[i][j] <= s + eta + tol,
            None => true,
        })
    })
}

pub fn symmetric_zero_diagonal(d: &[Vec<f64>]) -> bool {
    let n = d.len();
    (0..n).all(|i| d[i][i] == 0.0 && (0..n).all(|j| d[i][j] == d[j][i]))
}

pub fn elementwise_le(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.iter().zip(b).all(|(ra, rb)| ra.iter().zip(rb).all(|(x, y)| x <= y))
}

/// Symmetry, zero diagonal and `c(i,j) <= max(c(i,k), c(k,j))` for all triples.
pub fn is_ultrametric(c: &[Vec<f64>], tol: f64) -> bool {
    let n = c.len();
    for i in 0..n {
        if c[i][i] != 0.0 {
            return false;
        }
        for j in 0..n {
            if c[i][j] != c[j][i] {
                return false;
            }
            for k in 0..n {
                if c[i][j] > c[i][k].max(c[k][j]) + tol {
                    return false;
                }
            }
        }
    }
    true
}

/// Structural check of a traced path from `r` to `t`: it starts and ends at
/// the endpoints, never repeats a track, has at least one intermediate, uses
/// only un-bridged hops whose distance survived collapse unchanged, and the
/// hop distances plus `eta` per intermediate stay within the collapsed
/// distance of the endpoints.
pub fn check_rescue_path(
    original: &DistanceMatrix,
    result: &CollapseResult,
    path: &[usize],
    eta: f64,
) -> Result<(), String> {
    if path.len() < 3 {
        return Err(format!("path {path:?} has no intermediate"));
    }
    let (r, t) = (path[0], *path.last().unwrap());
    let mut seen = std::collections::HashSet::new();
    if !path.iter().all(|p| seen.insert(*p)) {
        return Err(format!("path {path:?} repeats a track"));
    }
    let mut total = 0.0;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        if result.bridge(a, b).is_some() {
            return Err(format!("hop ({a},{b}) is itself bridged"));
        }
        let before = original.get(a, b);
        let after = result.distances.get(a, b);
        if before != after {
            return Err(format!("hop ({a},{b}) changed: {before} -> {after}"));
        }
        total += before;
    }
    let bound = result.distances.get(r, t);
    let cost = total + eta * (path.len() - 2) as f64;
    if cost > bound + 1e-9 {
        return Err(format!("path cost {cost} exceeds collapsed distance {bound}"));
    }
    if original.get(r, t) <= bound {
        return Err(format!("endpoint distance was not reduced ({bound})"));
    }
    Ok(())
}

//! Exact minimum-cost perfect matching on a dense square cost matrix
//! (Hungarian method with potentials, O(n³)).

use crate::error::{Error, Result};

/// Returns `assignment[row] = column` minimizing the summed cost.
pub fn solve(costs: &[f64], n: usize) -> Result<Vec<usize>> {
    if costs.len() != n * n {
        return Err(Error::shape("assignment", format!("{} costs for n = {n}", costs.len())));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| costs[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free).
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(costs: &[f64], n: usize) -> f64 {
        fn rec(costs: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(costs[row * n + j] + rec(costs, n, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(costs, n, 0, &mut vec![false; n])
    }

    #[test]
    fn small_known_case() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve(&c, 3).unwrap();
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    proptest! {
        #[test]
        fn matches_enumeration(n in 1usize..7, seed in any::<u64>()) {
            let mut s = seed | 1;
            let costs: Vec<f64> = (0..n * n).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s % 1000) as f64 / 100.0
            }).collect();
            let a = solve(&costs, n).unwrap();
            let mut seen = vec![false; n];
            for &j in &a { prop_assert!(!seen[j]); seen[j] = true; }
            let total: f64 = a.iter().enumerate().map(|(i, &j)| costs[i * n + j]).sum();
            prop_assert!((total - brute_force(&costs, n)).abs() < 1e-9);
        }
    }
}

//! Minimum-cost bipartite assignment (Hungarian algorithm).
//!
//! O(n^2 m) shortest-augmenting-path formulation with dual potentials.
//! Rectangular inputs are supported; with more rows than columns some rows
//! stay unassigned. Non-finite costs are clamped to a large finite value, so
//! "forbidden" entries are simply never preferred (callers void unacceptable
//! matches afterwards).

use crate::scalar::Real;

/// Returns, per row, the assigned column (or `None` when rows exceed
/// columns and the row lost out). The assignment minimizes the total cost.
pub fn min_cost_assignment<T: Real>(cost: &[Vec<T>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "cost matrix must be rectangular");
    if m == 0 {
        return vec![None; n];
    }
    if n > m {
        // Solve the transpose and invert the mapping.
        let t: Vec<Vec<T>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let col_to_row = min_cost_assignment(&t);
        let mut out = vec![None; n];
        for (j, r) in col_to_row.iter().enumerate() {
            if let Some(i) = r {
                out[*i] = Some(j);
            }
        }
        return out;
    }

    let big = T::max_value().sqrt();
    let at = |i: usize, j: usize| {
        let c = cost[i][j];
        if c.is_finite() {
            c.min(big).max(-big)
        } else if c > T::zero() {
            big
        } else {
            -big
        }
    };

    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1]; // p[j]: 1-based row matched to column j
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
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

    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[Vec<f64>], assign: &[Option<usize>]) -> f64 {
        assign
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i][j]))
            .sum()
    }

    /// Exhaustive minimum over all maximal row->column injections.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        let k = n.min(m);
        fn rec(cost: &[Vec<f64>], rows: &[usize], used: &mut Vec<bool>, k: usize) -> f64 {
            if rows.len() == k {
                return 0.0;
            }
            let i = rows.len();
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    let mut rows2 = rows.to_vec();
                    rows2.push(i);
                    let v = cost[i][j] + rec(cost, &rows2, used, k);
                    used[j] = false;
                    best = best.min(v);
                }
            }
            best
        }
        if n <= m {
            rec(cost, &[], &mut vec![false; m], k)
        } else {
            let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
            rec(&t, &[], &mut vec![false; n], k)
        }
    }

    #[test]
    fn classic_three_by_three() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost);
        assert_eq!(a, vec![Some(1), Some(0), Some(2)]);
        assert_eq!(total(&cost, &a), 5.0);
    }

    #[test]
    fn handles_negative_costs() {
        let cost = vec![vec![-5.0, -1.0], vec![-2.0, -4.0]];
        let a = min_cost_assignment(&cost);
        assert_eq!(total(&cost, &a), -9.0);
    }

    #[test]
    fn rectangular_wide_assigns_every_row() {
        let cost = vec![vec![9.0, 1.0, 8.0, 7.0], vec![6.0, 5.0, 0.5, 9.0]];
        let a = min_cost_assignment(&cost);
        assert_eq!(a.iter().filter(|x| x.is_some()).count(), 2);
        assert_eq!(total(&cost, &a), 1.5);
    }

    #[test]
    fn rectangular_tall_leaves_rows_out() {
        let cost = vec![vec![1.0], vec![0.25], vec![4.0]];
        let a = min_cost_assignment(&cost);
        assert_eq!(a, vec![None, Some(0), None]);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(min_cost_assignment::<f64>(&[]), Vec::<Option<usize>>::new());
        let no_cols: Vec<Vec<f64>> = vec![vec![], vec![]];
        assert_eq!(min_cost_assignment(&no_cols), vec![None, None]);
    }

    #[test]
    fn infinite_entries_are_avoided_when_possible() {
        let cost = vec![vec![f64::INFINITY, 2.0], vec![3.0, f64::INFINITY]];
        let a = min_cost_assignment(&cost);
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        // Deterministic xorshift so the suite stays reproducible.
        let mut s: u64 = 0x9E3779B97F4A7C15;
        let mut rng = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..300 {
            let n = 1 + (rng() * 5.0) as usize;
            let m = 1 + (rng() * 5.0) as usize;
            let cost: Vec<Vec<f64>> =
                (0..n).map(|_| (0..m).map(|_| (rng() * 20.0 - 10.0 as f64).round() / 2.0).collect()).collect();
            let a = min_cost_assignment(&cost);
            // Validity: injective assignment covering min(n, m) rows.
            let mut seen = std::collections::HashSet::new();
            for j in a.iter().flatten() {
                assert!(seen.insert(*j), "column assigned twice in case {case}");
            }
            assert_eq!(a.iter().filter(|x| x.is_some()).count(), n.min(m));
            let got = total(&cost, &a);
            let want = brute_force(&cost);
            assert!(
                (got - want).abs() < 1e-9,
                "case {case}: hungarian {got} vs brute force {want} on {cost:?}"
            );
        }
    }
}

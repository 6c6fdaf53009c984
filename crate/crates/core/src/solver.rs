//! Smallest grid threshold whose upper-bounded FPR estimate is at most α.
//!
//! At a fixed step `ψ` does not depend on `λ` and the estimate is
//! non-increasing in `λ`, so the feasible grid points form an upper segment
//! and the boundary can be found by binary search.

use crate::confidence::ConfidencePolicy;
use crate::grid::ThresholdGrid;
use crate::ledger::FeedbackLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveResult {
    pub feasible: bool,
    /// Chosen grid point, or `λ_max` when infeasible.
    pub lambda: f64,
    pub index: usize,
    /// Number of constraint evaluations performed.
    pub evaluations: usize,
}

/// Leftmost index in `0..n` where `feasible` holds, assuming the feasible
/// indices form a suffix. Returns the index (or `None`) and the number of
/// predicate calls.
pub fn leftmost_feasible(n: usize, mut feasible: impl FnMut(usize) -> bool) -> (Option<usize>, usize) {
    // invariant: everything below `lo` is infeasible, everything at or above
    // `hi` is feasible (or past the end)
    let (mut lo, mut hi) = (0usize, n);
    let mut calls = 0;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        calls += 1;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    ((lo < n).then_some(lo), calls)
}

fn result(grid: &ThresholdGrid, found: Option<usize>, evaluations: usize) -> SolveResult {
    match found {
        Some(k) => SolveResult {
            feasible: true,
            lambda: grid.point(k),
            index: k,
            evaluations,
        },
        None => SolveResult {
            feasible: false,
            lambda: grid.lambda_max(),
            index: grid.last_index(),
            evaluations,
        },
    }
}

/// Constraint value `FPR_hat(λ_k) + ψ` at grid index `k`; `+∞` without evidence.
pub fn constraint_value(ledger: &FeedbackLedger, psi: f64, grid: &ThresholdGrid, k: usize) -> f64 {
    ledger
        .fpr_estimate_at(grid, k)
        .map_or(f64::INFINITY, |est| est + psi)
}

pub fn solve(
    ledger: &FeedbackLedger,
    policy: &ConfidencePolicy,
    grid: &ThresholdGrid,
    alpha: f64,
) -> SolveResult {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    let psi = policy.psi(&ledger.stats());
    if ledger.is_empty() || !psi.is_finite() {
        return result(grid, None, 0);
    }
    let (found, calls) = leftmost_feasible(grid.len(), |k| {
        constraint_value(ledger, psi, grid, k) <= alpha
    });
    result(grid, found, calls)
}

/// Left-to-right scan over every grid point. Same contract as [`solve`].
pub fn solve_linear(
    ledger: &FeedbackLedger,
    policy: &ConfidencePolicy,
    grid: &ThresholdGrid,
    alpha: f64,
) -> SolveResult {
    let psi = policy.psi(&ledger.stats());
    let mut calls = 0;
    let found = (0..grid.len()).find(|&k| {
        calls += 1;
        ledger
            .fpr_estimate(grid.point(k))
            .is_some_and(|est| est + psi <= alpha)
    });
    result(grid, found, calls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::ConfidenceKind;
    use crate::ledger::{EstimatorMode, WindowPolicy};

    #[test]
    fn five_point_example() {
        let values = [0.50, 0.30, 0.08, 0.04, 0.01];
        let grid = ThresholdGrid::new(0.0, 4.0, 1.0).unwrap();
        let (k, _) = leftmost_feasible(values.len(), |k| values[k] <= 0.05);
        let r = result(&grid, k, 0);
        assert!(r.feasible);
        assert_eq!(r.lambda, 3.0);

        let (k, _) = leftmost_feasible(values.len(), |k| values[k] <= 0.9);
        assert_eq!(k, Some(0));
        let (k, _) = leftmost_feasible(values.len(), |k| values[k] <= 0.001);
        assert_eq!(k, None);
    }

    fn ledger_with(scores: &[(f64, bool)]) -> FeedbackLedger {
        let mut l = FeedbackLedger::new(0.2, WindowPolicy::unbounded(), EstimatorMode::Realized).unwrap();
        for (t, &(s, imp)) in scores.iter().enumerate() {
            l.record_ood(t as u64, s, imp).unwrap();
        }
        l
    }

    #[test]
    fn empty_ledger_is_infeasible() {
        let grid = ThresholdGrid::with_points(-5.0, 5.0, 101).unwrap();
        let l = ledger_with(&[]);
        for pol in [ConfidencePolicy::lil_heuristic(0.2).unwrap(), ConfidencePolicy::none()] {
            let r = solve(&l, &pol, &grid, 0.05);
            assert!(!r.feasible);
            assert_eq!(r.lambda, 5.0);
            assert_eq!(r.evaluations, 0);
            let lin = solve_linear(&l, &pol, &grid, 0.05);
            assert_eq!((lin.feasible, lin.lambda), (false, 5.0));
        }
    }

    #[test]
    fn all_feasible_gives_lambda_min() {
        let grid = ThresholdGrid::with_points(0.0, 10.0, 11).unwrap();
        let l = ledger_with(&[(-1.0, false), (-2.0, false)]);
        let r = solve(&l, &ConfidencePolicy::none(), &grid, 0.05);
        assert!(r.feasible);
        assert_eq!(r.lambda, 0.0);
    }

    #[test]
    fn single_point_grid() {
        let grid = ThresholdGrid::new(1.0, 1.0, 0.5).unwrap();
        assert_eq!(grid.len(), 1);
        let pol = ConfidencePolicy::none();
        let ok = ledger_with(&[(0.0, false)]);
        let r = solve_linear(&ok, &pol, &grid, 0.05);
        assert!(r.feasible && r.lambda == 1.0);
        assert_eq!(solve(&ok, &pol, &grid, 0.05).lambda, 1.0);
        let bad = ledger_with(&[(2.0, false)]);
        assert!(!solve_linear(&bad, &pol, &grid, 0.05).feasible);
        assert!(!solve(&bad, &pol, &grid, 0.05).feasible);
    }

    #[test]
    fn indexed_and_plain_ledgers_agree() {
        let grid = ThresholdGrid::with_points(-4.0, 4.0, 401).unwrap();
        let recs: Vec<(f64, bool)> = (0..400)
            .map(|i| (((i * 7919) % 800) as f64 / 100.0 - 4.0, i % 9 == 0))
            .collect();
        let plain = ledger_with(&recs);
        let indexed = plain.clone().with_grid(grid);
        let pol = ConfidencePolicy::new(ConfidenceKind::Hoeffding, 0.2).unwrap();
        for &alpha in &[0.05, 0.2, 0.5] {
            let a = solve(&plain, &pol, &grid, alpha);
            let b = solve(&indexed, &pol, &grid, alpha);
            assert_eq!(a, b);
        }
    }
}

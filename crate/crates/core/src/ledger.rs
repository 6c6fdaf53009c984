//! Expert-confirmed OOD records and the importance-weighted FPR estimate.
//!
//! Every OOD label obtained from the expert becomes a record. Records whose
//! score was at or below the gating threshold were always labeled and carry
//! weight 1; records above it were labeled with probability `p` and carry
//! weight `1/p`. The estimate at `λ` is
//!
//! ```text
//! FPR_hat(λ) = (1/N) Σ_u w_u · 1(s_u > λ)
//! ```
//!
//! where `N` is the count of records (realized mode) or the Horvitz-Thompson
//! count `N_direct + N_importance / p` (latent-count mode).
//!
//! When a [`ThresholdGrid`] is attached the ledger keeps Fenwick trees of
//! direct and importance counts bucketed by grid position, so the estimate
//! at any grid point costs `O(log L)`. Grid-point and free-λ estimates use
//! the same integer counts and the same final arithmetic, so they agree
//! bit for bit.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::ThresholdGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackRecord {
    pub t: u64,
    pub score: f64,
    /// 1, or 1/p for importance-sampled records.
    pub weight: f64,
    pub via_importance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerStats {
    /// `N^(o)`: records currently counted.
    pub n_ood: usize,
    /// `N^(o,p)`: counted records obtained through importance sampling.
    pub n_ood_importance: usize,
    /// `β = N^(o,p) / N^(o)`, 0 on an empty ledger.
    pub beta: f64,
    /// `c = 1 − β + β/p²`.
    pub c: f64,
}

impl LedgerStats {
    pub fn from_counts(n_ood: usize, n_ood_importance: usize, p: f64) -> Self {
        let beta = if n_ood == 0 {
            0.0
        } else {
            n_ood_importance as f64 / n_ood as f64
        };
        LedgerStats {
            n_ood,
            n_ood_importance,
            beta,
            c: 1.0 - beta + beta / (p * p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowPolicy {
    /// Keep only the most recent `size` records. `None` keeps everything.
    pub size: Option<usize>,
}

impl WindowPolicy {
    pub fn unbounded() -> Self {
        WindowPolicy { size: None }
    }

    pub fn sized(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("window size must be > 0"));
        }
        Ok(WindowPolicy { size: Some(size) })
    }
}

/// Denominator used by [`FeedbackLedger::fpr_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorMode {
    /// Count of labeled OOD records.
    #[default]
    Realized,
    /// Each importance-sampled record also stands in for the `1/p − 1`
    /// unlabeled OOD points it represents.
    LatentCount,
}

#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize, delta: i64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over `0..=idx`.
    fn prefix(&self, idx: usize) -> i64 {
        let mut i = (idx + 1).min(self.tree.len() - 1);
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }

    fn clear(&mut self) {
        self.tree.iter_mut().for_each(|x| *x = 0);
    }
}

#[derive(Debug, Clone)]
struct GridIndex {
    grid: ThresholdGrid,
    direct: Fenwick,
    importance: Fenwick,
}

impl GridIndex {
    fn new(grid: ThresholdGrid) -> Self {
        let bins = grid.len() + 1;
        GridIndex {
            grid,
            direct: Fenwick::new(bins),
            importance: Fenwick::new(bins),
        }
    }

    fn update(&mut self, rec: &FeedbackRecord, delta: i64) {
        let bin = self.grid.count_below(rec.score);
        if rec.via_importance {
            self.importance.add(bin, delta);
        } else {
            self.direct.add(bin, delta);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeedbackLedger {
    p: f64,
    importance_weight: f64,
    window: WindowPolicy,
    mode: EstimatorMode,
    records: VecDeque<FeedbackRecord>,
    n_importance: usize,
    index: Option<GridIndex>,
}

impl FeedbackLedger {
    pub fn new(p: f64, window: WindowPolicy, mode: EstimatorMode) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config(format!(
                "importance sampling probability must lie in (0,1), got {p}"
            )));
        }
        if window.size == Some(0) {
            return Err(Error::config("window size must be > 0"));
        }
        Ok(FeedbackLedger {
            p,
            importance_weight: 1.0 / p,
            window,
            mode,
            records: VecDeque::new(),
            n_importance: 0,
            index: None,
        })
    }

    /// Attach a grid index so [`Self::fpr_estimate_at`] runs in `O(log L)`.
    pub fn with_grid(mut self, grid: ThresholdGrid) -> Self {
        let mut index = GridIndex::new(grid);
        for rec in &self.records {
            index.update(rec, 1);
        }
        self.index = Some(index);
        self
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn window(&self) -> WindowPolicy {
        self.window
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &FeedbackRecord> {
        self.records.iter()
    }

    pub fn record_ood(&mut self, t: u64, score: f64, via_importance: bool) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::config(format!("non-finite score {score} at t={t}")));
        }
        let rec = FeedbackRecord {
            t,
            score,
            weight: if via_importance { self.importance_weight } else { 1.0 },
            via_importance,
        };
        if via_importance {
            self.n_importance += 1;
        }
        if let Some(ix) = self.index.as_mut() {
            ix.update(&rec, 1);
        }
        self.records.push_back(rec);
        if let Some(cap) = self.window.size {
            while self.records.len() > cap {
                self.evict_oldest();
            }
        }
        Ok(())
    }

    fn evict_oldest(&mut self) {
        if let Some(old) = self.records.pop_front() {
            if old.via_importance {
                self.n_importance -= 1;
            }
            if let Some(ix) = self.index.as_mut() {
                ix.update(&old, -1);
            }
        }
    }

    pub fn stats(&self) -> LedgerStats {
        LedgerStats::from_counts(self.records.len(), self.n_importance, self.p)
    }

    fn combine(&self, direct_above: usize, importance_above: usize) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let w = self.importance_weight;
        let denom = match self.mode {
            EstimatorMode::Realized => self.records.len() as f64,
            EstimatorMode::LatentCount => {
                let n_direct = self.records.len() - self.n_importance;
                n_direct as f64 + self.n_importance as f64 * w
            }
        };
        Some((direct_above as f64 + importance_above as f64 * w) / denom)
    }

    /// Weighted FPR estimate at an arbitrary `λ` by scanning every record.
    /// `None` when there is no evidence yet.
    pub fn fpr_estimate(&self, lambda: f64) -> Option<f64> {
        let (mut d, mut i) = (0usize, 0usize);
        for r in &self.records {
            if r.score > lambda {
                if r.via_importance {
                    i += 1;
                } else {
                    d += 1;
                }
            }
        }
        self.combine(d, i)
    }

    /// Estimate at grid point `k` of `grid`. Uses the attached index when
    /// it was built for the same grid, otherwise falls back to a scan.
    pub fn fpr_estimate_at(&self, grid: &ThresholdGrid, k: usize) -> Option<f64> {
        match &self.index {
            Some(ix) if ix.grid == *grid => {
                let n_direct = (self.records.len() - self.n_importance) as i64;
                let d = n_direct - ix.direct.prefix(k);
                let i = self.n_importance as i64 - ix.importance.prefix(k);
                self.combine(d as usize, i as usize)
            }
            _ => self.fpr_estimate(grid.point(k)),
        }
    }

    /// Drop all records. Window policy, mode and grid index survive.
    pub fn reset(&mut self) {
        self.records.clear();
        self.n_importance = 0;
        if let Some(ix) = self.index.as_mut() {
            ix.direct.clear();
            ix.importance.clear();
        }
    }
}

/// ID labels obtained through importance sampling. Kept apart from the FPR
/// ledger; only used for reporting an empirical TPR.
#[derive(Debug, Clone, Default)]
pub struct IdDiagnostics {
    pub labeled_id: Vec<(u64, f64)>,
}

impl IdDiagnostics {
    pub fn record(&mut self, t: u64, score: f64) {
        self.labeled_id.push((t, score));
    }

    /// Fraction of importance-labeled ID scores above `λ`.
    pub fn empirical_tpr(&self, lambda: f64) -> Option<f64> {
        if self.labeled_id.is_empty() {
            return None;
        }
        let above = self.labeled_id.iter().filter(|(_, s)| *s > lambda).count();
        Some(above as f64 / self.labeled_id.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(p: f64, window: Option<usize>) -> FeedbackLedger {
        FeedbackLedger::new(p, WindowPolicy { size: window }, EstimatorMode::Realized).unwrap()
    }

    #[test]
    fn counters_follow_records() {
        let mut l = ledger(0.2, None);
        l.record_ood(3, 0.5, false).unwrap();
        let s = l.stats();
        assert_eq!((s.n_ood, s.beta, s.c), (1, 0.0, 1.0));

        l.record_ood(7, 2.0, true).unwrap();
        let s = l.stats();
        assert_eq!((s.n_ood, s.n_ood_importance), (2, 1));
        assert_eq!(s.beta, 0.5);
        assert!((s.c - 13.0).abs() < 1e-12);
    }

    #[test]
    fn window_of_one_keeps_latest() {
        let mut l = ledger(0.2, Some(1));
        l.record_ood(3, 0.5, false).unwrap();
        l.record_ood(7, 2.0, true).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.records().next().unwrap().t, 7);
        let s = l.stats();
        assert_eq!(s.beta, 1.0);
        assert!((s.c - 25.0).abs() < 1e-9);
    }

    #[test]
    fn estimate_hand_values() {
        let mut l = ledger(0.2, None);
        l.record_ood(1, 0.5, false).unwrap();
        l.record_ood(2, 1.2, false).unwrap();
        l.record_ood(3, 2.0, true).unwrap();
        assert!((l.fpr_estimate(1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(l.fpr_estimate(3.0).unwrap(), 0.0);

        let mut d = ledger(0.2, None);
        for (t, s) in [(1, 0.1), (2, 0.4), (3, -1.0)] {
            d.record_ood(t, s, false).unwrap();
        }
        assert_eq!(d.fpr_estimate(-5.0).unwrap(), 1.0);
    }

    #[test]
    fn stats_examples() {
        let l = ledger(0.2, None);
        let s = l.stats();
        assert_eq!((s.n_ood, s.beta, s.c), (0, 0.0, 1.0));

        let mut l = ledger(0.2, None);
        for t in 0..4 {
            l.record_ood(t, 0.0, false).unwrap();
        }
        l.record_ood(4, 1.0, true).unwrap();
        let s = l.stats();
        assert!((s.beta - 0.2).abs() < 1e-15);
        assert!((s.c - 5.8).abs() < 1e-12);

        let mut l = ledger(0.5, None);
        for t in 0..3 {
            l.record_ood(t, 0.0, true).unwrap();
        }
        let s = l.stats();
        assert_eq!((s.beta, s.c), (1.0, 4.0));
    }

    #[test]
    fn reset_clears_data_keeps_policy() {
        let mut l = ledger(0.2, Some(5));
        l.record_ood(1, 0.0, true).unwrap();
        l.reset();
        assert_eq!(l.stats().n_ood, 0);
        assert_eq!(l.fpr_estimate(0.0), None);
        assert_eq!(l.window().size, Some(5));
    }

    #[test]
    fn rejects_bad_input() {
        let mut l = ledger(0.2, None);
        assert!(l.record_ood(1, f64::NAN, false).is_err());
        assert!(l.record_ood(1, f64::INFINITY, true).is_err());
        assert!(l.is_empty());
        assert!(FeedbackLedger::new(0.0, WindowPolicy::unbounded(), EstimatorMode::Realized).is_err());
        assert!(FeedbackLedger::new(0.2, WindowPolicy { size: Some(0) }, EstimatorMode::Realized).is_err());
    }

    #[test]
    fn latent_count_denominator() {
        let mut l = FeedbackLedger::new(0.2, WindowPolicy::unbounded(), EstimatorMode::LatentCount).unwrap();
        l.record_ood(1, 0.5, false).unwrap();
        l.record_ood(2, 2.0, true).unwrap();
        // numerator 5 at λ = 1, denominator 1 + 5
        assert!((l.fpr_estimate(1.0).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    fn ops() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec((-5.0f64..5.0, prop::bool::weighted(0.3)), 0..120)
    }

    proptest! {
        #[test]
        fn monotone_in_lambda(recs in ops(), a in -6.0f64..6.0, b in -6.0f64..6.0) {
            let mut l = ledger(0.2, None);
            for (t, (s, imp)) in recs.iter().enumerate() {
                l.record_ood(t as u64, *s, *imp).unwrap();
            }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if let (Some(x), Some(y)) = (l.fpr_estimate(lo), l.fpr_estimate(hi)) {
                prop_assert!(x >= y);
            }
        }

        #[test]
        fn window_and_index_consistent(recs in ops(), cap in 1usize..40) {
            let grid = ThresholdGrid::with_points(-4.0, 4.0, 41).unwrap();
            let mut l = ledger(0.25, Some(cap)).with_grid(grid);
            for (t, (s, imp)) in recs.iter().enumerate() {
                l.record_ood(t as u64, *s, *imp).unwrap();
            }
            prop_assert!(l.len() <= cap);
            let expect: Vec<u64> = (recs.len().saturating_sub(cap) as u64..recs.len() as u64).collect();
            let got: Vec<u64> = l.records().map(|r| r.t).collect();
            prop_assert_eq!(got, expect);
            let st = l.stats();
            prop_assert_eq!(st.n_ood, l.len());
            prop_assert_eq!(st.n_ood_importance, l.records().filter(|r| r.via_importance).count());
            if st.n_ood > 0 {
                prop_assert_eq!((st.beta * st.n_ood as f64).round() as usize, st.n_ood_importance);
            }
            for k in 0..grid.len() {
                prop_assert_eq!(l.fpr_estimate_at(&grid, k), l.fpr_estimate(grid.point(k)));
            }
        }
    }
}

//! Upper-confidence widths `ψ` for the FPR estimate, and the coin-tossing
//! simulation used to pick the heuristic LIL constants.
//!
//! All logarithms are natural; `loglog(x) = ln(ln(x))`. A width is `+∞`
//! whenever the ledger is empty or the `loglog` argument is at most `e`, so a
//! solver facing too little evidence reports infeasibility.

use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ledger::LedgerStats;
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceKind {
    /// Time-uniform LIL bound valid over all `grid_count` thresholds.
    LilTheory { grid_count: usize },
    /// Same shape with empirically tuned constants.
    LilHeuristic { c1: f64, c2: f64, c3: f64 },
    /// Fixed-time two-sided Hoeffding width.
    Hoeffding,
    /// No confidence term.
    None,
}

impl ConfidenceKind {
    pub const HEURISTIC_DEFAULT: ConfidenceKind = ConfidenceKind::LilHeuristic {
        c1: 0.5,
        c2: 0.75,
        c3: 1.0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            ConfidenceKind::LilTheory { .. } => "lil",
            ConfidenceKind::LilHeuristic { .. } => "lil-heuristic",
            ConfidenceKind::Hoeffding => "hoeffding",
            ConfidenceKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidencePolicy {
    pub kind: ConfidenceKind,
    pub delta: f64,
}

impl ConfidencePolicy {
    pub fn new(kind: ConfidenceKind, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0,1), got {delta}")));
        }
        match kind {
            ConfidenceKind::LilTheory { grid_count } if grid_count < 10 => {
                return Err(Error::config(format!(
                    "the LIL bound needs at least 10 grid steps, got {grid_count}"
                )));
            }
            ConfidenceKind::LilHeuristic { c1, c2, c3 } if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) => {
                return Err(Error::config("heuristic LIL constants must be positive"));
            }
            _ => {}
        }
        Ok(ConfidencePolicy { kind, delta })
    }

    pub fn lil_heuristic(delta: f64) -> Result<Self> {
        Self::new(ConfidenceKind::HEURISTIC_DEFAULT, delta)
    }

    pub fn none() -> Self {
        ConfidencePolicy {
            kind: ConfidenceKind::None,
            delta: 0.5,
        }
    }

    pub fn has_width(&self) -> bool {
        !matches!(self.kind, ConfidenceKind::None)
    }

    /// Policy the controller actually evaluates: the theoretical bound is
    /// taken at `δ/2`; the heuristic constants were tuned against raw `δ`.
    pub fn for_controller(&self) -> Self {
        match self.kind {
            ConfidenceKind::LilTheory { .. } => ConfidencePolicy {
                delta: self.delta / 2.0,
                ..*self
            },
            _ => *self,
        }
    }

    pub fn psi(&self, stats: &LedgerStats) -> f64 {
        self.width(stats.n_ood, stats.c)
    }

    /// `ψ` for `n` counted records with variance factor `c`.
    pub fn width(&self, n: usize, c: f64) -> f64 {
        let delta = self.delta;
        let nf = n as f64;
        match self.kind {
            ConfidenceKind::None => 0.0,
            _ if n == 0 => f64::INFINITY,
            ConfidenceKind::Hoeffding => (c * (2.0 / delta).ln() / (2.0 * nf)).sqrt(),
            ConfidenceKind::LilTheory { grid_count } => {
                let arg = 1.5 * c * nf;
                if arg <= E {
                    return f64::INFINITY;
                }
                let l = grid_count as f64;
                (3.0 * c / nf * (2.0 * arg.ln().ln() + (2.0 * l / delta).ln())).sqrt()
            }
            ConfidenceKind::LilHeuristic { c1, c2, c3 } => {
                let arg = c2 * c * nf;
                if arg <= E {
                    return f64::INFINITY;
                }
                c1 * (c / nf * (arg.ln().ln() + (c3 / delta).ln())).sqrt()
            }
        }
    }
}

/// First index `u` with `c_u · N_u ≥ 173 · ln(8/δ)`, or `None` if the
/// trajectory never gets there.
pub fn n_zero(delta: f64, trajectory: &[(f64, usize)]) -> Result<Option<usize>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0,1), got {delta}")));
    }
    let need = 173.0 * (8.0 / delta).ln();
    Ok(trajectory.iter().position(|&(c, n)| c * n as f64 >= need))
}

#[derive(Debug, Clone)]
pub struct ConstantSearchConfig {
    pub c1_grid: Vec<f64>,
    pub c2_grid: Vec<f64>,
    pub deltas: Vec<f64>,
    pub c3: f64,
    pub trials: usize,
    pub horizon: usize,
    pub coin_mean: f64,
    pub seed: u64,
}

impl Default for ConstantSearchConfig {
    fn default() -> Self {
        ConstantSearchConfig {
            c1_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            c2_grid: (0..14).map(|i| 1.5 + 0.25 * i as f64).collect(),
            deltas: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4],
            c3: 1.0,
            trials: 100,
            horizon: 10_000,
            coin_mean: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSearchRow {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    /// Fraction of trials in which the true mean left the interval at
    /// some step.
    pub failure_fraction: f64,
    /// Per-step failure frequency across trials, averaged over steps.
    pub mean_pointwise_failure: f64,
}

fn cell_seed(master: u64, cell: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ cell.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_cell(cfg: &ConstantSearchConfig, c1: f64, c2: f64, delta: f64, seed: u64) -> ConstantSearchRow {
    let policy = ConfidencePolicy {
        kind: ConfidenceKind::LilHeuristic { c1, c2, c3: cfg.c3 },
        delta,
    };
    let widths: Vec<f64> = (1..=cfg.horizon).map(|t| policy.width(t, 1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failed_trials = 0usize;
    let mut pointwise = 0u64;
    for _ in 0..cfg.trials {
        let mut heads = 0u64;
        let mut failed = false;
        for (i, w) in widths.iter().enumerate() {
            if rng.random::<f64>() < cfg.coin_mean {
                heads += 1;
            }
            let mean = heads as f64 / (i + 1) as f64;
            if (mean - cfg.coin_mean).abs() > *w {
                failed = true;
                pointwise += 1;
            }
        }
        failed_trials += failed as usize;
    }
    let trials = cfg.trials.max(1) as f64;
    ConstantSearchRow {
        c1,
        c2,
        delta,
        failure_fraction: failed_trials as f64 / trials,
        mean_pointwise_failure: pointwise as f64 / (trials * cfg.horizon.max(1) as f64),
    }
}

/// Monte-Carlo failure rates of the heuristic LIL width on a Bernoulli coin,
/// one row per `(C1, C2, δ)` cell in grid order. Cells run in parallel with
/// seeds derived from `cfg.seed` and the cell index.
pub fn constant_search(cfg: &ConstantSearchConfig) -> Result<Vec<ConstantSearchRow>> {
    constant_search_with(Execution::Parallel, cfg)
}

pub fn constant_search_with(exec: Execution, cfg: &ConstantSearchConfig) -> Result<Vec<ConstantSearchRow>> {
    if cfg.c1_grid.is_empty() || cfg.c2_grid.is_empty() || cfg.deltas.is_empty() {
        return Err(Error::config("constant search grids must be non-empty"));
    }
    if cfg.horizon == 0 {
        return Err(Error::config("constant search horizon must be >= 1"));
    }
    if !(0.0..=1.0).contains(&cfg.coin_mean) {
        return Err(Error::config("coin mean must lie in [0,1]"));
    }
    let mut cells = Vec::new();
    for &c1 in &cfg.c1_grid {
        for &c2 in &cfg.c2_grid {
            for &d in &cfg.deltas {
                ConfidencePolicy::new(ConfidenceKind::LilHeuristic { c1, c2, c3: cfg.c3 }, d)?;
                cells.push((c1, c2, d));
            }
        }
    }
    Ok(par::map_indexed_with(exec, &cells, |i, &(c1, c2, d)| {
        run_cell(cfg, c1, c2, d, cell_seed(cfg.seed, i as u64))
    }))
}

use crate::error::{Error, Result};

/// Discretized threshold set `{λ_min, λ_min + ν, …, λ_max}` with `L + 1` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGrid {
    lambda_min: f64,
    lambda_max: f64,
    nu: f64,
    intervals: usize,
}

impl ThresholdGrid {
    /// `L = round((λ_max − λ_min)/ν)`. The last point is pinned to `λ_max`
    /// exactly so that "λ̂ = λ_max" comparisons are exact.
    pub fn new(lambda_min: f64, lambda_max: f64, nu: f64) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min <= lambda_max) {
            return Err(Error::config(format!(
                "grid bounds must be finite with min <= max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::config(format!("grid step must be > 0, got {nu}")));
        }
        let intervals = ((lambda_max - lambda_min) / nu).round() as usize;
        Ok(ThresholdGrid {
            lambda_min,
            lambda_max,
            nu,
            intervals,
        })
    }

    /// Grid with `points` evenly spaced points spanning `[min, max]`.
    pub fn with_points(lambda_min: f64, lambda_max: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::config("a grid spanning an interval needs at least 2 points"));
        }
        if lambda_min.is_nan() || lambda_max.is_nan() || lambda_min >= lambda_max {
            return Err(Error::config(format!(
                "grid needs min < max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        let nu = (lambda_max - lambda_min) / (points - 1) as f64;
        let mut grid = Self::new(lambda_min, lambda_max, nu)?;
        grid.intervals = points - 1;
        Ok(grid)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `L`, the number of grid steps.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last_index(&self) -> usize {
        self.intervals
    }

    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.intervals);
        if k == self.intervals {
            self.lambda_max
        } else {
            self.lambda_min + k as f64 * self.nu
        }
    }

    /// Number of grid points strictly below `s`; in `0..=L+1`.
    ///
    /// `s > point(k)` holds exactly when `k < count_below(s)`.
    pub fn count_below(&self, s: f64) -> usize {
        let n = self.len();
        let mut k = ((s - self.lambda_min) / self.nu).ceil();
        if k.is_nan() || k < 0.0 {
            k = 0.0;
        }
        let mut k = (k as usize).min(n);
        while k > 0 && self.point(k - 1) >= s {
            k -= 1;
        }
        while k < n && self.point(k) < s {
            k += 1;
        }
        k
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.point(k))
    }
}

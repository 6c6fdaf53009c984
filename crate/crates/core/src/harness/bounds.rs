use crate::error::{Error, Result};

/// Loose theoretical envelopes on feasibility and η-optimality times.
///
/// These come with pessimistic constants and are meant to be shown next to
/// measured times, not compared against them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedBounds {
    pub t_feasibility: f64,
    pub t_eta: f64,
    /// OOD labels needed before the width drops below α.
    pub n_feasibility: f64,
    /// OOD labels needed before the width drops below η/2.
    pub n_eta: f64,
}

/// Steps after which a `γ`-biased coin has shown at least `k` heads with
/// probability `1 − δ`: `2k/γ + ln(1/δ)/γ²`.
pub fn coin_toss_time(k: f64, gamma: f64, delta: f64) -> f64 {
    2.0 * k / gamma + (1.0 / delta).ln() / (gamma * gamma)
}

/// `N(μ) = (C1/μ²) · ln((C2/δ) · ln(C3/μ))`
fn sample_bound(c1: f64, c2: f64, c3: f64, mu: f64, delta: f64) -> f64 {
    c1 / (mu * mu) * ((c2 / delta) * (c3 / mu).ln()).ln()
}

/// `L` is the number of grid steps. Worst case `C0 = 1/p²`.
pub fn predicted_bounds(
    gamma: f64,
    alpha: f64,
    eta: f64,
    delta: f64,
    p: f64,
    grid_intervals: usize,
) -> Result<PredictedBounds> {
    for (name, v) in [
        ("gamma", gamma),
        ("alpha", alpha),
        ("eta", eta),
        ("delta", delta),
        ("p", p),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::config(format!("{name} must lie in (0,1), got {v}")));
        }
    }
    if grid_intervals < 10 {
        return Err(Error::config("the bounds need at least 10 grid steps"));
    }
    let c0 = 1.0 / (p * p);
    let l = grid_intervals as f64;

    let (c1_f, c3_f) = (10.0 * (c0 + 1.0), 5.0 * (c0 + 1.0));
    let (c1_e, c3_e) = (40.0 * (c0 + 1.0), 10.0 * (c0 + 1.0));
    let tail = (4.0 / delta).ln() / (gamma * gamma);

    Ok(PredictedBounds {
        t_feasibility: 2.0 * c1_f / (gamma * alpha * alpha)
            * ((4.0 * l / delta) * (c3_f / alpha).ln()).ln()
            + tail,
        t_eta: 2.0 * c1_e / (gamma * eta * eta) * ((4.0 * l / delta) * (c3_e / eta).ln()).ln() + tail,
        n_feasibility: sample_bound(c1_f, l, c3_f, alpha, delta),
        n_eta: sample_bound(c1_f, l, c3_f, eta / 2.0, delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coin_toss_example() {
        let t = coin_toss_time(100.0, 0.2, 0.25);
        assert!((t - 1034.66).abs() < 0.01, "{t}");
        let limit = coin_toss_time(100.0, 1.0 - 1e-12, 0.25);
        assert!((limit - (200.0 + 4.0f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn eta_constants_match_half_eta_substitution() {
        let b = predicted_bounds(0.2, 0.05, 0.02, 0.2, 0.2, 1000).unwrap();
        let c0 = 25.0;
        let direct = 40.0 * (c0 + 1.0) / (0.02 * 0.02)
            * ((1000.0 / 0.2) * (10.0 * (c0 + 1.0) / 0.02f64).ln()).ln();
        assert!((b.n_eta - direct).abs() / direct < 1e-12);
        assert!(b.t_eta > b.t_feasibility);
        assert!(b.n_eta > b.n_feasibility);
    }

    #[test]
    fn feasibility_bound_decreases_in_gamma() {
        let lo = predicted_bounds(0.05, 0.05, 0.02, 0.2, 0.2, 1000).unwrap();
        let hi = predicted_bounds(0.2, 0.05, 0.02, 0.2, 0.2, 1000).unwrap();
        assert!(lo.t_feasibility > hi.t_feasibility);
        assert!(predicted_bounds(0.0, 0.05, 0.02, 0.2, 0.2, 1000).is_err());
        assert!(predicted_bounds(0.2, 0.05, 0.02, 0.2, 0.2, 5).is_err());
    }
}

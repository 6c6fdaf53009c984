//! Labeled score streams: Gaussian mixtures with change-point schedules and
//! pools of precomputed scores, plus the analytic FPR/TPR curves used to
//! evaluate a threshold.
//!
//! Scores follow the convention "higher means more in-distribution". A
//! threshold `λ` classifies `s > λ` as ID, so the FPR at `λ` is the upper tail
//! of the OOD score law and the TPR is the upper tail of the ID law.

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::normal;

/// Ground-truth class of a stream element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Id,
    Ood,
}

impl Label {
    /// `+1` for ID, `-1` for OOD.
    pub fn sign(self) -> i8 {
        match self {
            Label::Id => 1,
            Label::Ood => -1,
        }
    }

    pub fn from_sign(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::Id),
            -1 => Some(Label::Ood),
            _ => None,
        }
    }
}

/// One stream element. The label is hidden from the controller and only
/// revealed through a label oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledScore {
    pub t: u64,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "gaussian needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(GaussianSpec { mu, sigma })
    }

    /// P(X > λ).
    pub fn upper_tail(&self, lambda: f64) -> f64 {
        normal::sf((lambda - self.mu) / self.sigma)
    }
}

/// FPR(λ) = 1 − CDF_ood(λ).
pub fn analytic_fpr(ood: &GaussianSpec, lambda: f64) -> f64 {
    ood.upper_tail(lambda)
}

/// TPR(λ) = 1 − CDF_id(λ).
pub fn analytic_tpr(id: &GaussianSpec, lambda: f64) -> f64 {
    id.upper_tail(lambda)
}

/// Smallest λ with FPR(λ) = α. Depends only on the OOD law.
pub fn optimal_threshold(ood: &GaussianSpec, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(ood.mu + ood.sigma * normal::upper_quantile(alpha))
}

/// Scores partitioned by ground-truth label, each side sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScorePool {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScorePool {
    pub fn new(mut id_scores: Vec<f64>, mut ood_scores: Vec<f64>) -> Self {
        id_scores.sort_by(f64::total_cmp);
        ood_scores.sort_by(f64::total_cmp);
        ScorePool {
            id_scores,
            ood_scores,
        }
    }

    pub fn merge(mut self, other: ScorePool) -> Self {
        self.id_scores.extend(other.id_scores);
        self.ood_scores.extend(other.ood_scores);
        ScorePool::new(self.id_scores, self.ood_scores)
    }

    pub fn id_side(&self) -> Result<ScoreSource> {
        ScoreSource::pool(self.id_scores.clone())
    }

    pub fn ood_side(&self) -> Result<ScoreSource> {
        ScoreSource::pool(self.ood_scores.clone())
    }
}

/// Parse a score file: `score,label` per line, optional `score,label` header,
/// LF or CRLF terminators. Blank lines are skipped.
pub fn parse_score_pool<R: BufRead>(reader: R, path: &Path) -> Result<ScorePool> {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 1 && line.replace(' ', "") == "score,label" {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let (score, label) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected `score,label`, got {line:?}")))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("non-numeric score {:?}", score.trim())))?;
        if !score.is_finite() {
            return Err(parse_err(format!("non-finite score {score}")));
        }
        let label = label
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| parse_err(format!("label must be 1 or -1, got {:?}", label.trim())))?;
        match label {
            Label::Id => id.push(score),
            Label::Ood => ood.push(score),
        }
    }
    if id.is_empty() && ood.is_empty() {
        return Err(Error::config(format!(
            "{}: score file contains no records",
            path.display()
        )));
    }
    Ok(ScorePool::new(id, ood))
}

pub fn load_score_pool(path: impl AsRef<Path>) -> Result<ScorePool> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_score_pool(std::io::BufReader::new(file), path)
}

/// Where one class's scores come from within a phase.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    Gaussian(GaussianSpec),
    /// Sorted, non-empty; sampled uniformly with replacement.
    Pool(Arc<[f64]>),
}

impl ScoreSource {
    pub fn pool(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::config("score pool side is empty"));
        }
        scores.sort_by(f64::total_cmp);
        Ok(ScoreSource::Pool(scores.into()))
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScoreSource::Gaussian(g) => Normal::new(g.mu, g.sigma)
                .expect("validated gaussian")
                .sample(rng),
            ScoreSource::Pool(p) => p[rng.random_range(0..p.len())],
        }
    }

    /// Fraction of the population scoring strictly above λ.
    pub fn upper_tail(&self, lambda: f64) -> f64 {
        match self {
            ScoreSource::Gaussian(g) => g.upper_tail(lambda),
            ScoreSource::Pool(p) => {
                let at_or_below = p.partition_point(|&s| s <= lambda);
                (p.len() - at_or_below) as f64 / p.len() as f64
            }
        }
    }

    /// Smallest λ whose upper tail is at most α. For pools this is the
    /// smallest pool score with that property.
    pub fn optimal_threshold(&self, alpha: f64) -> Result<f64> {
        match self {
            ScoreSource::Gaussian(g) => optimal_threshold(g, alpha),
            ScoreSource::Pool(p) => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::config(format!(
                        "alpha must lie in (0,1), got {alpha}"
                    )));
                }
                let allowed = (alpha * p.len() as f64).floor() as usize;
                if allowed >= p.len() {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(p[p.len() - 1 - allowed])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamPhase {
    pub id_source: ScoreSource,
    pub ood_source: ScoreSource,
    /// Probability that a sample is OOD.
    pub gamma: f64,
    pub start_t: u64,
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub phases: Vec<StreamPhase>,
    pub horizon: u64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn stationary(id: ScoreSource, ood: ScoreSource, gamma: f64, horizon: u64, seed: u64) -> Self {
        StreamConfig {
            phases: vec![StreamPhase {
                id_source: id,
                ood_source: ood,
                gamma,
                start_t: 1,
            }],
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .phases
            .first()
            .ok_or_else(|| Error::config("stream needs at least one phase"))?;
        if first.start_t != 1 {
            return Err(Error::config("first phase must start at t = 1"));
        }
        for w in self.phases.windows(2) {
            if w[1].start_t <= w[0].start_t {
                return Err(Error::config("phase start times must strictly increase"));
            }
        }
        for ph in &self.phases {
            // Degenerate mixtures (γ = 0 or 1) are accepted for single-class streams.
            if !(0.0..=1.0).contains(&ph.gamma) {
                return Err(Error::config(format!(
                    "gamma must lie in [0,1], got {}",
                    ph.gamma
                )));
            }
        }
        if self.horizon < self.phases.last().map_or(1, |p| p.start_t) {
            return Err(Error::config("horizon ends before the last phase starts"));
        }
        Ok(())
    }

    /// Phase active at step `t`.
    pub fn phase_at(&self, t: u64) -> &StreamPhase {
        let idx = self.phases.partition_point(|p| p.start_t <= t);
        &self.phases[idx.saturating_sub(1)]
    }
}

/// Deterministic generator over a [`StreamConfig`].
#[derive(Debug, Clone)]
pub struct ScoreStream {
    config: StreamConfig,
    rng: ChaCha8Rng,
    next_t: u64,
    phase: usize,
}

impl ScoreStream {
    pub fn new(config: StreamConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(ScoreStream {
            config,
            rng,
            next_t: 1,
            phase: 0,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Next sample, or `None` once the horizon is exhausted.
    pub fn next_sample(&mut self) -> Option<LabeledScore> {
        let t = self.next_t;
        if t > self.config.horizon {
            return None;
        }
        while self.phase + 1 < self.config.phases.len()
            && self.config.phases[self.phase + 1].start_t <= t
        {
            self.phase += 1;
        }
        let ph = &self.config.phases[self.phase];
        let is_ood = self.rng.random::<f64>() < ph.gamma;
        let (label, score) = if is_ood {
            (Label::Ood, ph.ood_source.sample(&mut self.rng))
        } else {
            (Label::Id, ph.id_source.sample(&mut self.rng))
        };
        self.next_t += 1;
        Some(LabeledScore { t, score, label })
    }
}

impl Iterator for ScoreStream {
    type Item = LabeledScore;

    fn next(&mut self) -> Option<LabeledScore> {
        self.next_sample()
    }
}

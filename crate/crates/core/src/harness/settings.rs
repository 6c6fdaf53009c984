//! Flat `key = value` settings shared by the config file and the CLI flags.
//!
//! Keys are the long flag names without the leading dashes (`grid-min`,
//! `scores-ood`, ...); underscores are accepted in place of dashes. `#`
//! starts a comment. Later assignments override earlier ones, so a config
//! file can be loaded first and individual flags applied on top.

use std::path::PathBuf;

use super::experiment::{default_grid, ExperimentConfig, Method};
use crate::confidence::ConfidenceKind;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::grid::ThresholdGrid;
use crate::ledger::{EstimatorMode, WindowPolicy};
use crate::score_sources::{load_score_pool, GaussianSpec, ScorePool, ScoreSource, StreamConfig, StreamPhase};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub alpha: f64,
    pub delta: f64,
    pub p: f64,
    pub gamma: f64,
    pub horizon: u64,
    pub window: Option<usize>,
    pub ucb: String,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub seeds: Vec<u64>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub grid_points: usize,
    pub change_at: Option<u64>,
    pub detect: bool,
    pub restart: bool,
    pub method: Method,
    pub estimator: EstimatorMode,
    pub id_mu: f64,
    pub id_sigma: f64,
    pub ood_mu: f64,
    pub ood_sigma: f64,
    pub shift_ood_mu: Option<f64>,
    pub shift_ood_sigma: Option<f64>,
    pub shift_id_mu: Option<f64>,
    pub shift_id_sigma: Option<f64>,
    pub scores_id: Option<PathBuf>,
    pub scores_ood: Option<PathBuf>,
    pub scores_ood_shift: Option<PathBuf>,
    pub eta: Vec<f64>,
    pub out: PathBuf,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            alpha: 0.05,
            delta: 0.2,
            p: 0.2,
            gamma: 0.2,
            horizon: 100_000,
            window: None,
            ucb: "lil-heuristic".into(),
            c1: 0.5,
            c2: 0.75,
            c3: 1.0,
            seeds: (0..10).collect(),
            grid_min: None,
            grid_max: None,
            grid_points: 1001,
            change_at: None,
            detect: false,
            restart: false,
            method: Method::Adaptive,
            estimator: EstimatorMode::Realized,
            id_mu: 5.5,
            id_sigma: 4.0,
            ood_mu: -6.0,
            ood_sigma: 4.0,
            shift_ood_mu: None,
            shift_ood_sigma: None,
            shift_id_mu: None,
            shift_id_sigma: None,
            scores_id: None,
            scores_ood: None,
            scores_ood_shift: None,
            eta: vec![0.01, 0.015, 0.02, 0.025],
            out: PathBuf::from("out"),
        }
    }
}

/// Split `key = value` lines. Returns `(line number, key, value)`.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: PathBuf::from("<config>"),
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "" | "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn opt_none<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case("none") || v.is_empty() {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl SimulateSettings {
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut s = SimulateSettings::default();
        for (line, k, v) in parse_key_values(text)? {
            s.apply(&k, &v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "alpha" => self.alpha = num(&key, v)?,
            "delta" => self.delta = num(&key, v)?,
            "p" => self.p = num(&key, v)?,
            "gamma" => self.gamma = num(&key, v)?,
            "horizon" => self.horizon = num(&key, v)?,
            "window" => self.window = opt_none(&key, v)?,
            "ucb" => {
                if !["lil", "lil-heuristic", "hoeffding", "none"].contains(&v) {
                    return Err(Error::config(format!(
                        "ucb: expected lil, lil-heuristic, hoeffding or none, got {v:?}"
                    )));
                }
                self.ucb = v.to_string();
            }
            "c1" => self.c1 = num(&key, v)?,
            "c2" => self.c2 = num(&key, v)?,
            "c3" => self.c3 = num(&key, v)?,
            // a bare count means seeds 0..n; a comma list is taken literally
            "seeds" => {
                self.seeds = if v.contains(',') {
                    list(&key, v)?
                } else {
                    (0..num::<u64>(&key, v)?).collect()
                }
            }
            "grid-min" => self.grid_min = opt_none(&key, v)?,
            "grid-max" => self.grid_max = opt_none(&key, v)?,
            "grid-points" => self.grid_points = num(&key, v)?,
            "change-at" => self.change_at = opt_none(&key, v)?,
            "detect" => self.detect = flag(&key, v)?,
            "restart" => {
                self.restart = flag(&key, v)?;
                self.detect |= self.restart;
            }
            "method" => {
                self.method = match v {
                    "adaptive" => Method::Adaptive,
                    "tpr95" => Method::Tpr95,
                    _ => return Err(Error::config(format!("method: unknown {v:?}"))),
                }
            }
            "estimator" => {
                self.estimator = match v {
                    "realized" => EstimatorMode::Realized,
                    "latent" | "latent-count" => EstimatorMode::LatentCount,
                    _ => return Err(Error::config(format!("estimator: unknown {v:?}"))),
                }
            }
            "id-mu" => self.id_mu = num(&key, v)?,
            "id-sigma" => self.id_sigma = num(&key, v)?,
            "ood-mu" => self.ood_mu = num(&key, v)?,
            "ood-sigma" => self.ood_sigma = num(&key, v)?,
            "shift-ood-mu" => self.shift_ood_mu = opt_none(&key, v)?,
            "shift-ood-sigma" => self.shift_ood_sigma = opt_none(&key, v)?,
            "shift-id-mu" => self.shift_id_mu = opt_none(&key, v)?,
            "shift-id-sigma" => self.shift_id_sigma = opt_none(&key, v)?,
            "scores-id" => self.scores_id = Some(PathBuf::from(v)),
            "scores-ood" => self.scores_ood = Some(PathBuf::from(v)),
            "scores-ood-shift" => self.scores_ood_shift = Some(PathBuf::from(v)),
            "eta" => self.eta = list(&key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    fn confidence(&self, grid: &ThresholdGrid) -> ConfidenceKind {
        match self.ucb.as_str() {
            "lil" => ConfidenceKind::LilTheory {
                grid_count: grid.intervals(),
            },
            "hoeffding" => ConfidenceKind::Hoeffding,
            "none" => ConfidenceKind::None,
            _ => ConfidenceKind::LilHeuristic {
                c1: self.c1,
                c2: self.c2,
                c3: self.c3,
            },
        }
    }

    fn sources(&self) -> Result<(ScoreSource, ScoreSource)> {
        let pool = match (&self.scores_id, &self.scores_ood) {
            (None, None) => None,
            (a, b) => {
                let mut pool = ScorePool::default();
                for path in [a, b].into_iter().flatten() {
                    pool = pool.merge(load_score_pool(path)?);
                }
                Some(pool)
            }
        };
        let id = match &pool {
            Some(p) => p.id_side().map_err(|_| Error::config("score files contain no ID (label 1) rows"))?,
            None => ScoreSource::Gaussian(GaussianSpec::new(self.id_mu, self.id_sigma)?),
        };
        let ood = match &pool {
            Some(p) => p.ood_side().map_err(|_| Error::config("score files contain no OOD (label -1) rows"))?,
            None => ScoreSource::Gaussian(GaussianSpec::new(self.ood_mu, self.ood_sigma)?),
        };
        Ok((id, ood))
    }

    fn shifted_sources(&self) -> Result<(Option<ScoreSource>, Option<ScoreSource>)> {
        let ood = if let Some(path) = &self.scores_ood_shift {
            Some(load_score_pool(path)?.ood_side()?)
        } else if self.shift_ood_mu.is_some() || self.shift_ood_sigma.is_some() {
            Some(ScoreSource::Gaussian(GaussianSpec::new(
                self.shift_ood_mu.unwrap_or(self.ood_mu),
                self.shift_ood_sigma.unwrap_or(self.ood_sigma),
            )?))
        } else {
            None
        };
        let id = if self.shift_id_mu.is_some() || self.shift_id_sigma.is_some() {
            Some(ScoreSource::Gaussian(GaussianSpec::new(
                self.shift_id_mu.unwrap_or(self.id_mu),
                self.shift_id_sigma.unwrap_or(self.id_sigma),
            )?))
        } else {
            None
        };
        Ok((id, ood))
    }

    /// Resolve into a validated experiment. Without explicit shift targets
    /// a `change-at` moves the OOD law to N(−5, 4).
    pub fn build(&self) -> Result<ExperimentConfig> {
        let (id, ood) = self.sources()?;
        let mut phases = vec![StreamPhase {
            id_source: id.clone(),
            ood_source: ood.clone(),
            gamma: self.gamma,
            start_t: 1,
        }];
        if let Some(at) = self.change_at {
            let (new_id, mut new_ood) = self.shifted_sources()?;
            if new_id.is_none() && new_ood.is_none() {
                new_ood = Some(ScoreSource::Gaussian(GaussianSpec::new(-5.0, 4.0)?));
            }
            phases.push(StreamPhase {
                id_source: new_id.unwrap_or(id),
                ood_source: new_ood.unwrap_or(ood),
                gamma: self.gamma,
                start_t: at,
            });
        }
        let stream = StreamConfig {
            phases,
            horizon: self.horizon,
            seed: 0,
        };
        let auto = default_grid(&stream, self.grid_points.max(2))?;
        let grid = ThresholdGrid::with_points(
            self.grid_min.unwrap_or(auto.lambda_min()),
            self.grid_max.unwrap_or(auto.lambda_max()),
            self.grid_points,
        )?;
        let window = match self.window {
            Some(n) => WindowPolicy::sized(n)?,
            None => WindowPolicy::unbounded(),
        };
        let controller = ControllerConfig {
            alpha: self.alpha,
            delta: self.delta,
            p: self.p,
            grid,
            confidence: self.confidence(&grid),
            window,
            estimator: self.estimator,
            change_detection: self.detect,
            restart_on_change: self.restart,
            seed: 0,
        };
        let cfg = ExperimentConfig {
            stream,
            controller,
            seeds: self.seeds.clone(),
            eta_levels: self.eta.clone(),
            method: self.method,
            keep_rows: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

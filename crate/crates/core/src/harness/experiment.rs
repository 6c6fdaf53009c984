use crate::controller::{Controller, ControllerConfig, GroundTruthOracle};
use crate::error::{Error, Result};
use crate::grid::ThresholdGrid;
use crate::par::{self, Execution};
use crate::score_sources::{GaussianSpec, ScoreSource, ScoreStream, StreamConfig, StreamPhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Adaptive threshold controller.
    #[default]
    Adaptive,
    /// Fixed threshold at 95% TPR of the initial ID law.
    Tpr95,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Stream template; its seed is replaced per run.
    pub stream: StreamConfig,
    /// Controller template; its seed is derived per run.
    pub controller: ControllerConfig,
    pub seeds: Vec<u64>,
    pub eta_levels: Vec<f64>,
    pub method: Method,
    /// Keep every per-step row. Summaries are computed either way.
    pub keep_rows: bool,
}

/// Grid covering ±6σ of every Gaussian phase source, or the full range of
/// pool scores, with `points` points.
pub fn default_grid(stream: &StreamConfig, points: usize) -> Result<ThresholdGrid> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ph in &stream.phases {
        for (src, is_ood) in [(&ph.ood_source, true), (&ph.id_source, false)] {
            match src {
                ScoreSource::Gaussian(g) => {
                    if is_ood {
                        lo = lo.min(g.mu - 6.0 * g.sigma);
                    } else {
                        hi = hi.max(g.mu + 6.0 * g.sigma);
                    }
                }
                ScoreSource::Pool(p) => {
                    lo = lo.min(p[0]);
                    hi = hi.max(p[p.len() - 1]);
                }
            }
        }
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::config("cannot derive a threshold grid from the stream"));
    }
    ThresholdGrid::with_points(lo, hi, points)
}

impl ExperimentConfig {
    /// Stationary mixture of N(5.5, 4) ID and N(−6, 4) OOD scores with the
    /// default controller (α = 0.05, δ = 0.2, p = 0.2, heuristic LIL) on a
    /// 1001-point grid.
    pub fn synthetic(gamma: f64, horizon: u64, seeds: Vec<u64>) -> Result<Self> {
        let stream = StreamConfig::stationary(
            ScoreSource::Gaussian(GaussianSpec::new(5.5, 4.0)?),
            ScoreSource::Gaussian(GaussianSpec::new(-6.0, 4.0)?),
            gamma,
            horizon,
            0,
        );
        let grid = default_grid(&stream, 1001)?;
        Ok(ExperimentConfig {
            stream,
            controller: ControllerConfig::with_defaults(grid, 0),
            seeds,
            eta_levels: vec![0.01, 0.015, 0.02, 0.025],
            method: Method::Adaptive,
            keep_rows: true,
        })
    }

    /// Add a phase at `start_t` that swaps in new sources (keeping γ).
    pub fn with_shift(mut self, start_t: u64, id: Option<ScoreSource>, ood: Option<ScoreSource>) -> Self {
        let last = self.stream.phases.last().expect("stream has a phase").clone();
        self.stream.phases.push(StreamPhase {
            id_source: id.unwrap_or(last.id_source),
            ood_source: ood.unwrap_or(last.ood_source),
            gamma: last.gamma,
            start_t,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if let Some(eta) = self.eta_levels.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::config(format!("eta levels must lie in (0,1), got {eta}")));
        }
        self.stream.validate()?;
        self.controller.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub lambda_hat: f64,
    pub fpr_true: f64,
    pub tpr_true: f64,
    /// `None` before any OOD evidence exists.
    pub fpr_hat: Option<f64>,
    /// `None` for the fixed-threshold baseline.
    pub psi: Option<f64>,
    pub n_ood: u64,
    pub n_ood_imp: u64,
    pub queried_cum: u64,
    pub feasible: bool,
    pub change: bool,
    pub restart: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub horizon: u64,
    /// First step with a feasible threshold.
    pub t_f: Option<u64>,
    /// `(η, T_η-opt)`; `None` when the last violation falls in the final 1%
    /// of the horizon.
    pub t_eta: Vec<(f64, Option<u64>)>,
    pub max_post_feasible_fpr: Option<f64>,
    pub mean_queried_fraction: f64,
    /// Steps at which the change criterion fired.
    pub change_times: Vec<u64>,
    pub restarts: u64,
    pub grid_intervals: usize,
}

impl RunSummary {
    /// First detection at or after `t`.
    pub fn first_change_from(&self, t: u64) -> Option<u64> {
        self.change_times.iter().copied().find(|&c| c >= t)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

struct Tracker {
    horizon: u64,
    etas: Vec<f64>,
    last_violation: Vec<Option<u64>>,
    t_f: Option<u64>,
    max_post: Option<f64>,
    changes: Vec<u64>,
    last_queried: u64,
}

impl Tracker {
    fn new(horizon: u64, etas: &[f64]) -> Self {
        Tracker {
            horizon,
            etas: etas.to_vec(),
            last_violation: vec![None; etas.len()],
            t_f: None,
            max_post: None,
            changes: Vec::new(),
            last_queried: 0,
        }
    }

    fn observe(&mut self, row: &MetricsRow, fpr_at_optimum: f64) {
        if row.feasible && self.t_f.is_none() {
            self.t_f = Some(row.t);
        }
        if self.t_f.is_some() {
            self.max_post = Some(self.max_post.map_or(row.fpr_true, |m: f64| m.max(row.fpr_true)));
        }
        for (eta, last) in self.etas.iter().zip(self.last_violation.iter_mut()) {
            if fpr_at_optimum - row.fpr_true > *eta {
                *last = Some(row.t);
            }
        }
        if row.change {
            self.changes.push(row.t);
        }
        self.last_queried = row.queried_cum;
    }

    fn finish(self, seed: u64, restarts: u64, grid_intervals: usize) -> RunSummary {
        let cutoff = self.horizon - self.horizon / 100;
        let t_eta = self
            .etas
            .iter()
            .zip(&self.last_violation)
            .map(|(&eta, last)| {
                let t = match last {
                    None => Some(1),
                    Some(v) if *v > cutoff => None,
                    Some(v) => Some(v + 1),
                };
                (eta, t)
            })
            .collect();
        RunSummary {
            seed,
            horizon: self.horizon,
            t_f: self.t_f,
            t_eta,
            max_post_feasible_fpr: self.max_post,
            mean_queried_fraction: self.last_queried as f64 / self.horizon.max(1) as f64,
            change_times: self.changes,
            restarts,
            grid_intervals,
        }
    }
}

fn controller_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xC0FF_EE00_D15E_A5E5
}

/// True FPR at the optimum for each phase (α for Gaussian OOD laws).
fn phase_optima(stream: &StreamConfig, alpha: f64) -> Result<Vec<f64>> {
    stream
        .phases
        .iter()
        .map(|ph| {
            let lam = ph.ood_source.optimal_threshold(alpha)?;
            Ok(ph.ood_source.upper_tail(lam))
        })
        .collect()
}

fn phase_index(stream: &StreamConfig, t: u64) -> usize {
    stream.phases.partition_point(|p| p.start_t <= t).saturating_sub(1)
}

/// Drive one seed. Fails only on configuration problems.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    if cfg.method == Method::Tpr95 {
        return tpr95_baseline(cfg, seed);
    }
    let mut stream_cfg = cfg.stream.clone();
    stream_cfg.seed = seed;
    let optima = phase_optima(&stream_cfg, cfg.controller.alpha)?;
    let stream = ScoreStream::new(stream_cfg.clone())?;
    let mut ctl_cfg = cfg.controller.clone();
    ctl_cfg.seed = controller_seed(seed);
    let mut ctl = Controller::new(ctl_cfg)?;
    let mut oracle = GroundTruthOracle::default();

    let horizon = stream_cfg.horizon;
    let mut tracker = Tracker::new(horizon, &cfg.eta_levels);
    let mut rows = Vec::with_capacity(if cfg.keep_rows { horizon as usize } else { 0 });
    for sample in stream {
        let out = ctl
            .step(&sample, &mut oracle)
            .map_err(|e| Error::config(format!("simulation step failed: {e}")))?;
        let pi = phase_index(&stream_cfg, sample.t);
        let phase = &stream_cfg.phases[pi];
        let stats = ctl.stats();
        let row = MetricsRow {
            t: sample.t,
            lambda_hat: out.lambda_after,
            fpr_true: phase.ood_source.upper_tail(out.lambda_after),
            tpr_true: phase.id_source.upper_tail(out.lambda_after),
            fpr_hat: ctl.fpr_estimate_at_lambda(),
            psi: Some(ctl.psi()),
            n_ood: stats.n_ood as u64,
            n_ood_imp: stats.n_ood_importance as u64,
            queried_cum: ctl.queries(),
            feasible: out.feasible,
            change: out.change_detected,
            restart: out.restarted,
        };
        tracker.observe(&row, optima[pi]);
        if cfg.keep_rows {
            rows.push(row);
        }
    }
    let summary = tracker.finish(seed, ctl.restarts(), cfg.controller.grid.intervals());
    Ok(RunOutput { rows, summary })
}

/// Threshold at the 5th percentile of the initial ID law (95% TPR).
pub fn tpr95_threshold(stream: &StreamConfig) -> Result<f64> {
    let ph = stream
        .phases
        .first()
        .ok_or_else(|| Error::config("stream needs at least one phase"))?;
    ph.id_source.optimal_threshold(0.95)
}

/// Non-adaptive baseline: a fixed threshold for the whole run. Samples at
/// or below it are counted as sent to the expert.
pub fn tpr95_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mut stream_cfg = cfg.stream.clone();
    stream_cfg.seed = seed;
    let lambda = tpr95_threshold(&stream_cfg)?;
    let optima = phase_optima(&stream_cfg, cfg.controller.alpha)?;
    let horizon = stream_cfg.horizon;
    let mut tracker = Tracker::new(horizon, &cfg.eta_levels);
    let mut rows = Vec::new();
    let mut queried = 0u64;
    for sample in ScoreStream::new(stream_cfg.clone())? {
        if sample.score <= lambda {
            queried += 1;
        }
        let pi = phase_index(&stream_cfg, sample.t);
        let phase = &stream_cfg.phases[pi];
        let row = MetricsRow {
            t: sample.t,
            lambda_hat: lambda,
            fpr_true: phase.ood_source.upper_tail(lambda),
            tpr_true: phase.id_source.upper_tail(lambda),
            fpr_hat: None,
            psi: None,
            n_ood: 0,
            n_ood_imp: 0,
            queried_cum: queried,
            feasible: false,
            change: false,
            restart: false,
        };
        tracker.observe(&row, optima[pi]);
        if cfg.keep_rows {
            rows.push(row);
        }
    }
    Ok(RunOutput {
        rows,
        summary: tracker.finish(seed, 0, cfg.controller.grid.intervals()),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    run_experiment_with(Execution::Parallel, cfg)
}

/// Run every seed; seeds are independent and may run in parallel. Output
/// is in seed order regardless of `exec`.
pub fn run_experiment_with(exec: Execution, cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    par::map_indexed_with(exec, &cfg.seeds, |_, &seed| run_seed(cfg, seed))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendRow {
    pub t: u64,
    pub fpr_mean: f64,
    pub fpr_std: f64,
    pub tpr_mean: f64,
    pub tpr_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub trend: Vec<TrendRow>,
    /// First detection at or after `change_from`, per run.
    pub detection_times: Vec<Option<u64>>,
    /// Median with undetected runs counted as later than any detection.
    pub median_detection: Option<f64>,
    /// Mean over runs that detected.
    pub mean_detection: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median_with_missing(times: &[Option<u64>]) -> Option<f64> {
    let mut keys: Vec<f64> = times
        .iter()
        .map(|t| t.map_or(f64::INFINITY, |v| v as f64))
        .collect();
    keys.sort_by(f64::total_cmp);
    let n = keys.len();
    if n == 0 {
        return None;
    }
    let m = if n % 2 == 1 {
        keys[n / 2]
    } else {
        0.5 * (keys[n / 2 - 1] + keys[n / 2])
    };
    m.is_finite().then_some(m)
}

/// Pointwise mean/std (sample std) of the true FPR/TPR across runs and the
/// distribution of change-detection times from `change_from` on.
pub fn aggregate(runs: &[RunOutput], change_from: u64) -> Result<Aggregate> {
    if runs.len() < 2 {
        return Err(Error::config("aggregation needs at least two runs"));
    }
    let len = runs[0].rows.len();
    if runs.iter().any(|r| r.rows.len() != len) {
        return Err(Error::config("runs have mismatched horizons"));
    }
    let mut trend = Vec::with_capacity(len);
    let mut fpr = vec![0.0; runs.len()];
    let mut tpr = vec![0.0; runs.len()];
    for i in 0..len {
        for (j, r) in runs.iter().enumerate() {
            fpr[j] = r.rows[i].fpr_true;
            tpr[j] = r.rows[i].tpr_true;
        }
        let (fpr_mean, fpr_std) = mean_std(&fpr);
        let (tpr_mean, tpr_std) = mean_std(&tpr);
        trend.push(TrendRow {
            t: runs[0].rows[i].t,
            fpr_mean,
            fpr_std,
            tpr_mean,
            tpr_std,
        });
    }
    let detection_times: Vec<Option<u64>> = runs
        .iter()
        .map(|r| r.summary.first_change_from(change_from))
        .collect();
    let detected: Vec<f64> = detection_times.iter().flatten().map(|&t| t as f64).collect();
    let mean_detection = (!detected.is_empty()).then(|| detected.iter().sum::<f64>() / detected.len() as f64);
    Ok(Aggregate {
        trend,
        median_detection: median_with_missing(&detection_times),
        mean_detection,
        detection_times,
    })
}

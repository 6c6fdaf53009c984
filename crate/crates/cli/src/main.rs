use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fprctl::confidence::{constant_search, ConstantSearchConfig};
use fprctl::harness::{
    aggregate, format_g6, predicted_bounds, run_experiment, write_outputs, SimulateSettings,
};
use fprctl::Error;

#[derive(Parser)]
#[command(name = "fprctl", version, about = "Adaptive OOD thresholds with expert feedback and FPR control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller over a synthetic or file-backed score stream.
    Simulate(Box<SimulateArgs>),
    /// Monte-Carlo failure rates of the heuristic LIL width on a fair coin.
    ConstantsSearch(SearchArgs),
    /// Theoretical feasibility and optimality time envelopes.
    PredictBounds(BoundsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// key = value settings file; flags given here override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// window size in OOD records, or "none"
    #[arg(long)]
    window: Option<String>,
    /// lil, lil-heuristic, hoeffding or none
    #[arg(long)]
    ucb: Option<String>,
    /// seed count (0..n) or a comma-separated list
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    grid_min: Option<String>,
    #[arg(long)]
    grid_max: Option<String>,
    /// number of grid points (grid steps + 1)
    #[arg(long)]
    grid_points: Option<String>,
    #[arg(long)]
    change_at: Option<String>,
    /// run change detection
    #[arg(long)]
    detect: bool,
    /// restart after a detected change (implies --detect)
    #[arg(long)]
    restart: bool,
    #[arg(long)]
    scores_id: Option<String>,
    #[arg(long)]
    scores_ood: Option<String>,
    #[arg(long)]
    scores_ood_shift: Option<String>,
    /// adaptive or tpr95
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// any other setting, as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, value_delimiter = ',')]
    c1_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    c2_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    /// number of grid points (grid steps + 1)
    #[arg(long, default_value_t = 1001)]
    grid_points: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Parse { .. } | Error::Config(_) => 2,
    }
}

fn settings(args: &SimulateArgs) -> fprctl::Result<SimulateSettings> {
    let mut s = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            SimulateSettings::from_config_text(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                Error::Parse { line, msg, .. } => Error::Parse {
                    path: path.clone(),
                    line,
                    msg,
                },
                other => other,
            })?
        }
        None => SimulateSettings::default(),
    };
    let inline = [
        ("alpha", &args.alpha),
        ("delta", &args.delta),
        ("p", &args.p),
        ("gamma", &args.gamma),
        ("horizon", &args.horizon),
        ("window", &args.window),
        ("ucb", &args.ucb),
        ("seeds", &args.seeds),
        ("grid-min", &args.grid_min),
        ("grid-max", &args.grid_max),
        ("grid-points", &args.grid_points),
        ("change-at", &args.change_at),
        ("scores-id", &args.scores_id),
        ("scores-ood", &args.scores_ood),
        ("scores-ood-shift", &args.scores_ood_shift),
        ("method", &args.method),
        ("out", &args.out),
    ];
    for (key, value) in inline {
        if let Some(v) = value {
            s.apply(key, v)?;
        }
    }
    if args.detect {
        s.apply("detect", "true")?;
    }
    if args.restart {
        s.apply("restart", "true")?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        s.apply(k, v)?;
    }
    Ok(s)
}

fn simulate(args: &SimulateArgs) -> fprctl::Result<()> {
    let s = settings(args)?;
    let cfg = s.build()?;
    let runs = run_experiment(&cfg)?;
    let agg = if runs.len() >= 2 {
        Some(aggregate(&runs, s.change_at.unwrap_or(1))?)
    } else {
        None
    };
    write_outputs(&s.out, &runs, agg.as_ref())?;
    println!("seed  t_f  max_post_feasible_fpr  queried_fraction  changes");
    for r in &runs {
        let sm = &r.summary;
        println!(
            "{}  {}  {}  {}  {}",
            sm.seed,
            sm.t_f.map_or("NA".into(), |t| t.to_string()),
            sm.max_post_feasible_fpr.map_or("NA".into(), format_g6),
            format_g6(sm.mean_queried_fraction),
            sm.change_times.len()
        );
    }
    if let Some(agg) = &agg {
        if s.detect {
            println!(
                "median detection: {}",
                agg.median_detection.map_or("NA".into(), format_g6)
            );
        }
    }
    println!("wrote {}", s.out.display());
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> fprctl::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            fs::write(p, text).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn search(args: &SearchArgs) -> fprctl::Result<()> {
    let mut cfg = ConstantSearchConfig {
        trials: args.trials,
        horizon: args.horizon,
        seed: args.seed,
        ..ConstantSearchConfig::default()
    };
    if let Some(g) = &args.c1_grid {
        cfg.c1_grid = g.clone();
    }
    if let Some(g) = &args.c2_grid {
        cfg.c2_grid = g.clone();
    }
    if let Some(d) = &args.deltas {
        cfg.deltas = d.clone();
    }
    let rows = constant_search(&cfg)?;
    let mut text = String::from("c1,c2,delta,failure_fraction\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            format_g6(r.c1),
            format_g6(r.c2),
            format_g6(r.delta),
            format_g6(r.failure_fraction)
        ));
    }
    write_text(args.out.as_deref(), &text)
}

fn bounds(args: &BoundsArgs) -> fprctl::Result<()> {
    if args.grid_points < 2 {
        return Err(Error::Config("grid-points must be at least 2".into()));
    }
    let b = predicted_bounds(args.gamma, args.alpha, args.eta, args.delta, args.p, args.grid_points - 1)?;
    println!("t_feasibility,{}", format_g6(b.t_feasibility));
    println!("t_eta,{}", format_g6(b.t_eta));
    println!("n_feasibility,{}", format_g6(b.n_feasibility));
    println!("n_eta,{}", format_g6(b.n_eta));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ConstantsSearch(a) => search(a),
        Command::PredictBounds(a) => bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

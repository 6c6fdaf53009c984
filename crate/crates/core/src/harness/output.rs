use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{Aggregate, MetricsRow, RunOutput, RunSummary};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "t,lambda_hat,fpr_true,tpr_true,fpr_hat,psi,n_ood,n_ood_imp,queried_cum,feasible,change,restart";

/// Six significant digits, `%g` style: fixed notation for exponents in
/// `[-4, 6)`, scientific otherwise, trailing zeros dropped.
pub fn format_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_g6).unwrap_or_default()
}

fn opt_int(v: Option<u64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            format_g6(r.lambda_hat),
            format_g6(r.fpr_true),
            format_g6(r.tpr_true),
            opt_real(r.fpr_hat),
            opt_real(r.psi),
            r.n_ood,
            r.n_ood_imp,
            r.queried_cum,
            r.feasible as u8,
            r.change as u8,
            r.restart as u8
        );
    }
    write_file(path.as_ref(), &s)
}

/// Read a metrics file written by [`write_metrics`]. Reals come back
/// rounded to six significant digits.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "missing metrics header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if f.len() != 12 {
            return Err(err("expected 12 fields"));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| err("bad real"));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                real(s).map(Some)
            }
        };
        let int = |s: &str| s.parse::<u64>().map_err(|_| err("bad integer"));
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err("bad flag")),
        };
        rows.push(MetricsRow {
            t: int(f[0])?,
            lambda_hat: real(f[1])?,
            fpr_true: real(f[2])?,
            tpr_true: real(f[3])?,
            fpr_hat: opt(f[4])?,
            psi: opt(f[5])?,
            n_ood: int(f[6])?,
            n_ood_imp: int(f[7])?,
            queried_cum: int(f[8])?,
            feasible: flag(f[9])?,
            change: flag(f[10])?,
            restart: flag(f[11])?,
        });
    }
    Ok(rows)
}

pub fn write_summary(summaries: &[RunSummary], path: impl AsRef<Path>) -> Result<()> {
    let etas: Vec<f64> = summaries
        .first()
        .map(|s| s.t_eta.iter().map(|(e, _)| *e).collect())
        .unwrap_or_default();
    let mut s = String::from("seed,horizon,t_f");
    for e in &etas {
        let _ = write!(s, ",t_eta_{}", format_g6(*e));
    }
    s.push_str(",max_post_feasible_fpr,mean_queried_fraction,first_change,n_changes,restarts,grid_intervals\n");
    for r in summaries {
        let _ = write!(s, "{},{},{}", r.seed, r.horizon, opt_int(r.t_f));
        for (_, t) in &r.t_eta {
            let _ = write!(s, ",{}", opt_int(*t));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{},{},{}",
            r.max_post_feasible_fpr.map_or_else(|| "NA".to_string(), format_g6),
            format_g6(r.mean_queried_fraction),
            opt_int(r.change_times.first().copied()),
            r.change_times.len(),
            r.restarts,
            r.grid_intervals
        );
    }
    write_file(path.as_ref(), &s)
}

pub fn write_trend(agg: &Aggregate, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("t,fpr_mean,fpr_std,tpr_mean,tpr_std\n");
    for r in &agg.trend {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.t,
            format_g6(r.fpr_mean),
            format_g6(r.fpr_std),
            format_g6(r.tpr_mean),
            format_g6(r.tpr_std)
        );
    }
    write_file(path.as_ref(), &s)
}

/// Write `metrics_seed<k>.csv` per run, `summary.csv`, and `trend.csv`
/// (the latter only with two or more runs).
pub fn write_outputs(dir: impl AsRef<Path>, runs: &[RunOutput], agg: Option<&Aggregate>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in runs {
        write_metrics(&r.rows, dir.join(format!("metrics_seed{}.csv", r.summary.seed)))?;
    }
    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    write_summary(&summaries, dir.join("summary.csv"))?;
    if let Some(agg) = agg {
        write_trend(agg, dir.join("trend.csv"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(0.05), "0.05");
        assert_eq!(format_g6(1.0 / 3.0), "0.333333");
        assert_eq!(format_g6(29.5), "29.5");
        assert_eq!(format_g6(-1.0795), "-1.0795");
        assert_eq!(format_g6(123456.7), "123457");
        assert_eq!(format_g6(999999.7), "1e+06");
        assert_eq!(format_g6(1.5e-7), "1.5e-07");
        assert_eq!(format_g6(0.000123456789), "0.000123457");
        assert_eq!(format_g6(f64::INFINITY), "inf");
    }

    fn row(t: u64) -> MetricsRow {
        MetricsRow {
            t,
            lambda_hat: 29.5,
            fpr_true: 0.0412345678,
            tpr_true: 0.9,
            fpr_hat: None,
            psi: Some(f64::INFINITY),
            n_ood: 3,
            n_ood_imp: 1,
            queried_cum: t,
            feasible: false,
            change: t.is_multiple_of(2),
            restart: false,
        }
    }

    #[test]
    fn header_only_and_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
        write_metrics(&[row(1)], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
    }

    #[test]
    fn write_to_missing_dir_is_io_error() {
        let err = write_metrics(&[], "/nonexistent/dir/m.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn round6(v: f64) -> f64 {
        format_g6(v).parse().unwrap()
    }

    proptest! {
        #[test]
        fn metrics_round_trip(
            vals in prop::collection::vec(
                (-40.0f64..40.0, 0.0f64..1.0, 0.0f64..1.0, prop::option::of(0.0f64..3.0), prop::option::of(0.0f64..1.0), 0u64..100_000, any::<bool>()),
                0..30)
        ) {
            let rows: Vec<MetricsRow> = vals
                .iter()
                .enumerate()
                .map(|(i, &(lam, f, tp, fh, ps, n, b))| MetricsRow {
                    t: i as u64 + 1,
                    lambda_hat: lam,
                    fpr_true: f,
                    tpr_true: tp,
                    fpr_hat: fh,
                    psi: ps,
                    n_ood: n,
                    n_ood_imp: n / 3,
                    queried_cum: n + i as u64,
                    feasible: b,
                    change: !b,
                    restart: false,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            write_metrics(&rows, &p).unwrap();
            let back = read_metrics(&p).unwrap();
            let expect: Vec<MetricsRow> = rows
                .iter()
                .map(|r| MetricsRow {
                    lambda_hat: round6(r.lambda_hat),
                    fpr_true: round6(r.fpr_true),
                    tpr_true: round6(r.tpr_true),
                    fpr_hat: r.fpr_hat.map(round6),
                    psi: r.psi.map(round6),
                    ..*r
                })
                .collect();
            prop_assert_eq!(back, expect);
        }
    }
}

use std::fs;
use std::process::{Command, Output};

fn fprctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fprctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fprctl(&["simulate", "--seeds", "2", "--horizon", "3000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = fs::read_to_string(out.join("metrics_seed0.csv")).unwrap();
    let mut lines = m.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,lambda_hat,fpr_true,tpr_true,fpr_hat,psi,n_ood,n_ood_imp,queried_cum,feasible,change,restart"
    );
    assert_eq!(lines.count(), 3000);
    assert!(out.join("metrics_seed1.csv").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let trend = fs::read_to_string(out.join("trend.csv")).unwrap();
    assert_eq!(trend.lines().count(), 3001);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "# short hoeffding run\nucb = hoeffding\nhorizon = 2000  # steps\nseeds = 5,6\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = fprctl(&["simulate", "--config", cfg.to_str().unwrap(), "--horizon", "1500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = fs::read_to_string(out.join("metrics_seed6.csv")).unwrap();
    assert_eq!(m.lines().count(), 1501);
    assert!(!out.join("metrics_seed0.csv").exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = fprctl(&["simulate", "--seeds", "3", "--horizon", "2500", "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
    }
    for name in ["metrics_seed2.csv", "summary.csv", "trend.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn score_files_with_header_and_crlf() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("score,label\r\n");
    for i in 0..400 {
        let id = 5.0 + (i % 37) as f64 * 0.1;
        let ood = -5.0 + (i % 41) as f64 * 0.1;
        text.push_str(&format!("{id},1\r\n{ood},-1\r\n"));
    }
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, text).unwrap();
    let out = dir.path().join("out");
    let o = fprctl(&[
        "simulate",
        "--scores-id",
        scores.to_str().unwrap(),
        "--seeds",
        "1",
        "--horizon",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("metrics_seed0.csv").exists());
    assert!(!out.join("trend.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fprctl(&["simulate", "--alpha", "1.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = fprctl(&["simulate", "--ucb", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fprctl(&["simulate", "--ucb", "none", "--detect"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fprctl(&["simulate", "--config", "/definitely/not/here.cfg"]);
    assert_eq!(o.status.code(), Some(3));
    let o = fprctl(&["simulate", "--scores-ood", "/definitely/not/here.csv"]);
    assert_eq!(o.status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1.0,1\nabc,-1\n").unwrap();
    let o = fprctl(&["simulate", "--scores-ood", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "alpha = 0.05\nwindow\n").unwrap();
    let o = fprctl(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = fprctl(&["predict-bounds", "--gamma", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn constants_search_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cs.csv");
    let o = fprctl(&[
        "constants-search",
        "--c1-grid",
        "0.5,10",
        "--c2-grid",
        "0.75",
        "--deltas",
        "0.2",
        "--trials",
        "20",
        "--horizon",
        "500",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "c1,c2,delta,failure_fraction");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "10,0.75,0.2,0");
}

#[test]
fn predict_bounds_prints_four_values() {
    let o = fprctl(&["predict-bounds", "--gamma", "0.05"]);
    assert!(o.status.success());
    let slow = stdout(&o);
    let o = fprctl(&["predict-bounds", "--gamma", "0.2"]);
    let fast = stdout(&o);
    let tf = |s: &str| -> f64 {
        s.lines()
            .find_map(|l| l.strip_prefix("t_feasibility,"))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(slow.lines().count(), 4);
    assert!(tf(&slow) > tf(&fast));
}

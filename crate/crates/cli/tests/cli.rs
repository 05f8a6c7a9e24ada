use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kmcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmcf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kmcf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn simulate_writes_reproducible_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["simulate", "--model", "3b", "--T", "12", "--seed", "4", "--out", p(&a)]);
    ok(&["simulate", "--model", "3b", "--T", "12", "--seed", "4", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let h = header(&a);
    assert_eq!(h.len(), 1 + 1 + 10 + 1);
    assert_eq!((h[0].as_str(), h[1].as_str(), h[12].as_str()), ("t", "x0", "u"));
    assert_eq!(csv::Reader::from_path(&a).unwrap().records().count(), 12);
}

#[test]
fn cv_then_filter() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "kx_scale = [0.5, 1.0]\nky_scale = [0.5]\neps = [0.01]\ndelta = [0.001, 0.01]\n",
    )
    .unwrap();
    let cfg = dir.path().join("nested/cfg.toml");
    ok(&["cv", "--model", "1a", "--n", "40", "--grid", p(&grid), "--out", p(&cfg)]);
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("[params]") && text.contains("kx_bandwidth"));

    let trace = dir.path().join("trace.csv");
    let out = ok(&[
        "filter", "--model", "1a", "--n", "50", "--config", p(&cfg), "--seed", "2", "--trace", p(&trace), "--T", "20",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let reported: f64 = stdout.trim().strip_prefix("rmse ").unwrap().parse().unwrap();
    assert_eq!(header(&trace), ["t", "ess", "mean0", "mode0", "rmse_running", "step_ms"]);
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&trace).unwrap().records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 20);
    let last: f64 = rows[19][4].parse().unwrap();
    assert!((last - reported).abs() < 1e-12);
}

#[test]
fn filter_accepts_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    ok(&["simulate", "--model", "2b", "--T", "15", "--seed", "8", "--out", p(&traj)]);
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        "[params]\nkx_bandwidth = 1.0\nky_bandwidth = 1.0\neps = 0.01\ndelta = 0.01\n\n[filter]\nlow_rank = { tolerance = 1e-8 }\n",
    )
    .unwrap();
    let trace = dir.path().join("t.csv");
    ok(&[
        "filter", "--model", "2b", "--n", "30", "--config", p(&cfg), "--trace", p(&trace), "--observations", p(&traj),
    ]);
    assert_eq!(csv::Reader::from_path(&trace).unwrap().records().count(), 15);
}

#[test]
fn bench_commands_write_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let prior_cfg = dir.path().join("prior.toml");
    fs::write(&prior_cfg, "n = 20\nseeds = [0, 1]\nlambdas = [1e-6, 1.0]\n").unwrap();
    let prior_out = dir.path().join("prior.csv");
    ok(&["bench-prior", "--config", p(&prior_cfg), "--out", p(&prior_out)]);
    assert_eq!(header(&prior_out), ["lambda", "seed", "method", "err_P", "sum_w2", "err_Q"]);
    assert_eq!(csv::Reader::from_path(&prior_out).unwrap().records().count(), 12);

    let ssm_cfg = dir.path().join("ssm.toml");
    fs::write(
        &ssm_cfg,
        r#"models = ["1a"]
n = [20]
seeds = [0]
methods = ["kmcf", "kmcf_sub(10)", "naive"]
test_length = 10

[fixed]
kx_bandwidth = 1.0
ky_bandwidth = 1.0
eps = 0.01
delta = 0.01
"#,
    )
    .unwrap();
    let ssm_out = dir.path().join("ssm.csv");
    ok(&["bench-ssm", "--config", p(&ssm_cfg), "--out", p(&ssm_out)]);
    assert_eq!(
        header(&ssm_out),
        ["model", "n", "seed", "method", "rmse", "wall_ms", "kx_bw", "ky_bw", "eps", "delta"]
    );
    assert_eq!(csv::Reader::from_path(&ssm_out).unwrap().records().count(), 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert!(!kmcf(&["simulate", "--model", "5a", "--T", "3", "--out", p(&out)]).status.success());
    assert!(!kmcf(&["simulate", "--model", "1a", "--T", "0", "--out", p(&out)]).status.success());

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n = 20\nmystery = true\n").unwrap();
    let res = kmcf(&["bench-prior", "--config", p(&cfg), "--out", p(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("mystery"));

    let missing = dir.path().join("none.toml");
    assert!(!kmcf(&["bench-ssm", "--config", p(&missing), "--out", p(&out)]).status.success());
}

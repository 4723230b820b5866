use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rosbid(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rosbid"));
    cmd.args(args).env_remove("ROSBID_SEED");
    if let Some(s) = seed_env {
        cmd.env("ROSBID_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const MINIMAL: &str = r#"
policy = "approx_ros"
horizons = [50]
trials = 1
seed = 3

[distribution]
kind = "uniform_second_price"
"#;

fn run_in(dir: &Path, sub: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec![
        sub,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    rosbid(&args, None)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_run_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run_in(tmp.path(), "run", &cfg, "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("out/trials_T50.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "trial,seed,T,policy,reward,opt_value,regret,ros_slack,total_spend,K,max_mu,stopping_time"
    );
    assert_eq!(lines.len(), 2);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 3);
    assert_eq!(summary["oracle_method"]["50"], "fractional_lp");
    assert!(summary["library_version"].is_string());
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(!tmp.path().join("out/sweep.csv").exists());
}

#[test]
fn missing_rho_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &MINIMAL.replace("approx_ros", "strict_both"));
    let o = run_in(tmp.path(), "run", &cfg, "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho required"));
}

#[test]
fn unreadable_config_is_a_config_error() {
    let o = rosbid(&["run", "--config", "/nonexistent/rosbid.toml"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
policy = "strict_both"
horizons = [20, 200]
trials = 12
rho = 0.3
seed = 11
emit_trajectories = true

[distribution]
kind = "beta_second_price"
a_v = 2.0
b_v = 2.0
a_d = 2.0
b_d = 3.0
"#;
    let cfg = write_config(tmp.path(), body);
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let o = run_in(tmp.path(), "run", &cfg, name, &["--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir_bytes(&tmp.path().join("a"));
    assert!(a.iter().any(|(n, _)| n == "traj_trial11_T200.csv"));
    assert_eq!(a, dir_bytes(&tmp.path().join("b")));
    assert_eq!(a, dir_bytes(&tmp.path().join("c")));
    let traj = String::from_utf8(
        a.iter()
            .find(|(n, _)| n == "traj_trial0_T20.csv")
            .unwrap()
            .1
            .clone(),
    )
    .unwrap();
    assert_eq!(
        traj.lines().next().unwrap(),
        "t,v,bid,x,p,g,g_prime,lambda,mu,budget_remaining"
    );
}

#[test]
fn seed_env_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("env");
    let o = rosbid(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        Some("123"),
    );
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 123);
}

#[test]
fn sweep_writes_rows_and_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &MINIMAL
            .replace("horizons = [50]", "horizons = [30, 60, 120, 240]")
            .replace("trials = 1", "trials = 4"),
    );
    let o = run_in(tmp.path(), "sweep", &cfg, "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(
        lines[0],
        "T,mean_regret,std_regret,mean_violation,max_violation,slope"
    );
    assert_eq!(lines.len(), 5);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    assert!(summary["slope"].is_number());
}

#[test]
fn single_horizon_sweep_has_null_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run_in(tmp.path(), "sweep", &cfg, "out", &[]);
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    assert!(summary["slope"].is_null());
    let sweep = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    assert!(sweep.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn zero_trials_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &MINIMAL.replace("trials = 1", "trials = 0"));
    let o = run_in(tmp.path(), "sweep", &cfg, "out", &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_passes() {
    let o = rosbid(&["check"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for suite in ["truthfulness", "bregman", "lambda", "oracle"] {
        assert!(stdout.contains(suite), "{stdout}");
    }
}

#[test]
fn broken_auction_fails_check() {
    let o = rosbid(&["check", "--inject-broken-auction"], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truthfulness"));
}

#[test]
fn check_suite_filter() {
    let o = rosbid(&["check", "--suite", "oracle"], None);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("oracle"));
    assert!(!stdout.contains("truthfulness"));
    assert_eq!(
        rosbid(&["check", "--suite", "nope"], None).status.code(),
        Some(1)
    );
}

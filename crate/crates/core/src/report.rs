//! Output files: `summary.json`, `trials_T{T}.csv`, `traj_trial{i}_T{T}.csv`
//! and `sweep.csv`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::sim::{ExperimentReport, HorizonSummary, Trajectory, TrialMetrics};

pub const TRIALS_HEADER: [&str; 12] = [
    "trial",
    "seed",
    "T",
    "policy",
    "reward",
    "opt_value",
    "regret",
    "ros_slack",
    "total_spend",
    "K",
    "max_mu",
    "stopping_time",
];

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "t",
    "v",
    "bid",
    "x",
    "p",
    "g",
    "g_prime",
    "lambda",
    "mu",
    "budget_remaining",
];

pub const SWEEP_HEADER: [&str; 6] = [
    "T",
    "mean_regret",
    "std_regret",
    "mean_violation",
    "max_violation",
    "slope",
];

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed,
/// exponent form outside `1e-4 ≤ |x| < 1e17`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();

    if !(-4..17).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        let tail = tail.trim_end_matches('0');
        let e_sign = if exp < 0 { '-' } else { '+' };
        return if tail.is_empty() {
            format!("{sign}{head}e{e_sign}{:02}", exp.abs())
        } else {
            format!("{sign}{head}.{tail}e{e_sign}{:02}", exp.abs())
        };
    }
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let point = exp as usize + 1;
        format!("{}.{}", &digits[..point], &digits[point..])
    };
    let body = if body.contains('.') {
        body.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        body
    };
    format!("{sign}{body}")
}

fn opt_g17(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|k| k.to_string()).unwrap_or_default()
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> io::Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn trials_csv(policy: &str, trials: &[TrialMetrics]) -> io::Result<Vec<u8>> {
    csv_bytes(
        &TRIALS_HEADER,
        trials.iter().map(|m| {
            vec![
                m.trial.to_string(),
                m.seed.to_string(),
                m.horizon.to_string(),
                policy.to_string(),
                fmt_g17(m.reward),
                fmt_g17(m.opt_value),
                fmt_g17(m.regret_sample),
                fmt_g17(m.ros_slack),
                fmt_g17(m.total_spend),
                opt_int(m.first_phase_length),
                fmt_g17(m.max_mu),
                opt_int(m.stopping_time),
            ]
        }),
    )
}

pub fn trajectory_csv(traj: &Trajectory) -> io::Result<Vec<u8>> {
    csv_bytes(
        &TRAJECTORY_HEADER,
        traj.steps.iter().map(|o| {
            vec![
                o.t.to_string(),
                fmt_g17(o.value),
                fmt_g17(o.bid),
                fmt_g17(o.allocation),
                fmt_g17(o.price),
                fmt_g17(o.g),
                opt_g17(o.g_prime),
                fmt_g17(o.lambda),
                fmt_g17(o.mu),
                opt_g17(o.budget_remaining),
            ]
        }),
    )
}

/// One row per horizon; the slope column repeats the fit and is empty when
/// it cannot be computed.
pub fn sweep_csv(horizons: &[HorizonSummary], slope: Option<f64>) -> io::Result<Vec<u8>> {
    csv_bytes(
        &SWEEP_HEADER,
        horizons.iter().map(|h| {
            vec![
                h.horizon.to_string(),
                fmt_g17(h.mean_regret),
                fmt_g17(h.std_regret),
                fmt_g17(h.mean_violation),
                fmt_g17(h.max_violation),
                opt_g17(slope),
            ]
        }),
    )
}

#[derive(Serialize)]
struct Summary<'a> {
    library_version: &'static str,
    config_hash: &'a str,
    master_seed: u64,
    policy: &'a str,
    config: Value,
    beta_hat: f64,
    beta_warning: bool,
    oracle_method: Value,
    slope: Option<f64>,
    horizons: &'a [HorizonSummary],
}

pub fn summary_json(report: &ExperimentReport) -> Vec<u8> {
    let mut config = serde_json::to_value(&report.config).expect("config serializes");
    if let Some(obj) = config.as_object_mut() {
        obj.remove("output_dir");
    }
    let oracle_method: serde_json::Map<String, Value> = report
        .horizons
        .iter()
        .map(|h| (h.horizon.to_string(), json!(h.oracle_method.name())))
        .collect();
    let summary = Summary {
        library_version: env!("CARGO_PKG_VERSION"),
        config_hash: &report.config_hash,
        master_seed: report.config.seed,
        policy: report.config.policy.name(),
        config,
        beta_hat: report.beta_hat,
        beta_warning: report.beta_warning,
        oracle_method: Value::Object(oracle_method),
        slope: report.slope,
        horizons: &report.horizons,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes all result files for `report` into `dir` and returns their paths.
pub fn write_report(
    report: &ExperimentReport,
    dir: &Path,
    sweep: bool,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put("summary.json".into(), summary_json(report))?;
    let policy = report.config.policy.name();
    for (h, trials) in report.horizons.iter().zip(&report.trials) {
        put(
            format!("trials_T{}.csv", h.horizon),
            trials_csv(policy, trials)?,
        )?;
    }
    for traj in &report.trajectories {
        put(
            format!("traj_trial{}_T{}.csv", traj.trial, traj.horizon),
            trajectory_csv(traj)?,
        )?;
    }
    if sweep {
        put(
            "sweep.csv".into(),
            sweep_csv(&report.horizons, report.slope)?,
        )?;
    }
    Ok(written)
}

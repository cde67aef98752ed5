use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eh-policy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn single_slot_from_a_full_battery_earns_sqrt_five() {
    let out = eh(&[
        "simulate", "--policy", "ffp:theta=0.5", "--arrivals", "constant:e=2", "--battery", "10",
        "--utility", "sqrt", "--horizon", "1", "--trials", "1", "--seed", "0",
    ]);
    let v = json(&out);
    assert_eq!(v["mean_reward"].as_f64().unwrap(), 5f64.sqrt());
    assert!(v["timestamp"].is_u64());
}

#[test]
fn classify_and_gap_examples() {
    let v = json(&eh(&["classify", "--utility", "sqrt_log"]));
    assert_eq!(v["class"], "B");
    let v = json(&eh(&["gap", "--utility", "log_awgn", "--optimize-q"]));
    let bits = v["alpha_star_bits"].as_f64().unwrap();
    assert!((-0.74..=-0.70).contains(&bits), "{bits}");
}

#[test]
fn gap_for_sqrt_reports_negative_infinity() {
    let v = json(&eh(&["gap", "--utility", "sqrt", "--q", "0.5"]));
    assert_eq!(v["alpha"], "-inf");
    assert!(v["additive_lower_bound"].is_null());
    let out = eh(&["gap", "--utility", "sqrt", "--optimize-q"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(eh(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(eh(&["classify", "--utility", "sqrt", "--bogus"]).status.code(), Some(2));
    assert_eq!(eh(&["classify", "--utility", "cubic"]).status.code(), Some(2));
    let out = eh(&["bernoulli-opt", "--utility", "sqrt", "--p", "1.5", "--battery", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refill probability"));
    let out = eh(&["simulate", "--utility", "sqrt", "--arrivals", "uniform:lo=0,hi=2", "--battery", "2",
        "--policy", "bernoulli-opt"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(eh(&["--help"]).status.code(), Some(0));
    assert_eq!(eh(&["reproduce", "--criterion", "11"]).status.code(), Some(2));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let args = [
        "simulate", "--utility", "exp_sat:beta=2", "--arrivals", "discrete:v=0|1|3,p=0.2|0.5|0.3",
        "--battery", "3", "--horizon", "3000", "--trials", "12", "--seed", "99", "--deterministic",
    ];
    let a = eh(&args);
    let b = eh(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(!String::from_utf8_lossy(&a.stdout).contains("timestamp"));
    let mut other = args.to_vec();
    other[13] = "100";
    assert_ne!(eh(&other).stdout, a.stdout);
}

#[test]
fn config_file_supplies_flags_and_the_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "deterministic = true\n[bernoulli-opt]\nutility = \"sqrt\"\np = 0.5\nbattery = 1\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let v = json(&eh(&["--config", cfg, "bernoulli-opt"]));
    assert!((v["schedule"][0].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert!(v.get("timestamp").is_none());
    let v = json(&eh(&["--config", cfg, "bernoulli-opt", "--battery", "2"]));
    assert!((v["schedule"][0].as_f64().unwrap() - 1.5).abs() < 1e-9);

    std::fs::write(dir.path().join("bad.toml"), "[bernoulli-opt]\nwidth = 3\n").unwrap();
    let bad = dir.path().join("bad.toml");
    let out = eh(&["--config", bad.to_str().unwrap(), "bernoulli-opt", "--utility", "sqrt", "--p", "0.5",
        "--battery", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn csv_outputs_have_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    json(&eh(&["sweep", "--utility", "exp_sat", "--q", "0.5", "--mu", "1e1:1e6:log", "--emit-csv",
        sweep.to_str().unwrap()]));
    let rows = read_csv(&sweep);
    assert_eq!(rows[0], ["mu", "ffp_value", "upper", "deficit"]);
    assert_eq!(rows.len(), 7);

    let sim = dir.path().join("sim.csv");
    json(&eh(&["simulate", "--utility", "sqrt", "--arrivals", "bernoulli:p=0.5", "--battery", "1",
        "--horizon", "100", "--trials", "5", "--emit-csv", sim.to_str().unwrap()]));
    let rows = read_csv(&sim);
    assert_eq!(rows[0], ["trial", "mean"]);
    assert_eq!(rows.len(), 6);

    let dp = dir.path().join("dp.csv");
    let v = json(&eh(&["dp", "--utility", "sqrt", "--arrivals", "bernoulli:p=0.5", "--battery", "1",
        "--grid", "51", "--actions", "51", "--emit-csv", dp.to_str().unwrap()]));
    assert!(v["converged"].as_bool().unwrap());
    let rows = read_csv(&dp);
    assert_eq!(rows[0], ["b", "action"]);
    assert_eq!(rows.len(), 52);
}

#[test]
fn compare_orders_rows_and_matches_the_closed_form() {
    let v = json(&eh(&["compare", "--utility", "sqrt", "--arrivals", "bernoulli:p=0.5", "--battery", "1",
        "--deterministic"]));
    let rows = v["rows"].as_array().unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    let value_of = |name: &str| {
        rows.iter()
            .find(|r| r["policy"].as_str().unwrap().starts_with(name))
            .map(|r| r["value"].as_f64().unwrap())
            .unwrap()
    };
    let opt = value_of("bernoulli-opt");
    assert!((value_of("dp") - opt).abs() < 1e-3);
    assert!(value_of("ffp:theta=0.5") < opt);
    let best_ffp = rows.iter().find(|r| r["policy"] != "ffp:theta=0.5" && r["policy"].as_str().unwrap().starts_with("ffp")).unwrap();
    assert!((best_ffp["value"].as_f64().unwrap() - opt).abs() < 1e-9);
}

#[test]
fn compare_under_uniform_arrivals_stays_above_half() {
    let v = json(&eh(&["compare", "--utility", "log_awgn", "--arrivals", "uniform:lo=0,hi=10", "--battery", "10",
        "--horizon", "20000", "--trials", "30", "--grid", "101", "--actions", "101", "--deterministic"]));
    for row in v["rows"].as_array().unwrap() {
        assert!(row["ratio"].as_f64().unwrap() >= 0.5, "{row}");
    }
}

#[test]
fn optimize_fraction_for_sqrt() {
    let v = json(&eh(&["optimize-fraction", "--utility", "sqrt", "--arrivals", "bernoulli:p=0.5", "--battery",
        "1"]));
    assert!((v["theta_star"].as_f64().unwrap() - 0.75).abs() < 1e-2);
    assert_eq!(v["evaluator"], "renewal");
}

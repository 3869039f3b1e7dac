//! Runs the `mfc` binary and checks the output and exit-code contract.

use std::path::PathBuf;
use std::process::{Command, Output};

fn mfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfc"))
        .args(args)
        .env_remove("MFC_WORKERS")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfc-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, text: &str) -> String {
    let p = scratch(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn riccati_writes_csv_file() {
    let out = scratch("nu.csv");
    let o = mfc(&["riccati", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("t,nu\n"));
    assert_eq!(csv.lines().count(), 4098);
    assert!(csv.lines().last().unwrap().ends_with(",2e0"));
}

#[test]
fn banner_reports_seed_and_config() {
    let o = mfc(&["lqcheck", "--seed", "42", "--draws", "5"]);
    assert!(o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("seed=42"));
    assert!(err.contains("# seed = 42"));
    assert!(err.contains("# gamma1 = 0.1"));
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .starts_with("max_residual,"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mfc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mfc(&[]).status.code(), Some(2));
    let bad = write_config("bad.cfg", "M = 0\n");
    let o = mfc(&["riccati", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("`M`"));
    assert_eq!(
        mfc(&["riccati", "--config", "/nonexistent/mfc.cfg"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numerical_failure_exits_one() {
    // a tiny penalty makes the equation stiff; four RK4 steps overflow
    let cfg = write_config(
        "blow.cfg",
        "Phi = 0\ngamma1 = 1e-9\nT = 50\nriccati_steps = 4\n",
    );
    let o = mfc(&["riccati", "--config", &cfg]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn gradcheck_contract() {
    let o = mfc(&["gradcheck", "--seed", "7"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let last = out.lines().last().unwrap();
    let v: f64 = last
        .strip_prefix("max_rel_error,")
        .unwrap()
        .parse()
        .unwrap();
    assert!(v < 1e-5);
}

#[test]
fn converge_prints_slope_line() {
    let cfg = write_config("conv.cfg", "N = 200\nreps = 2\nM_list = 4, 8, 16\n");
    let o = mfc(&["converge", "--config", &cfg]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "M,h,value,reference,abs_error");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("slope,"));
}

#[test]
fn identical_runs_identical_bytes() {
    let cfg = write_config("train.cfg", "N = 40\nM = 8\nK = 5\nhidden = 16\nbeta = 1\n");
    let ckpt = scratch("net.txt");
    let a = mfc(&[
        "train",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let b = mfc(&["train", "--config", &cfg]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("iteration,cost,lr\n"));

    let sim = |workers: &str| {
        Command::new(env!("CARGO_BIN_EXE_mfc"))
            .args([
                "simulate",
                "--config",
                &cfg,
                "--policy",
                ckpt.to_str().unwrap(),
            ])
            .env("MFC_WORKERS", workers)
            .output()
            .unwrap()
    };
    let (one, four) = (sim("1"), sim("4"));
    assert!(
        one.status.success(),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    assert_eq!(one.stdout, four.stdout);
    assert!(String::from_utf8_lossy(&one.stdout).starts_with("t,mean_v,var_v,running_cost\n"));
}

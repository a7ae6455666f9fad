use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vcgmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcgmpc")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcgmpc(&["simulate", "--steps", "50", "--horizon", "10", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "costs.csv", "certificate.csv", "omega.svg", "delta.svg", "pv.svg"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 51);
}

#[test]
fn mechanism_writes_taxes_and_honours_no_tax() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcgmpc(&["mechanism", "--steps", "40", "--no-tax", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let taxes = fs::read_to_string(dir.path().join("taxes.csv")).unwrap();
    assert!(taxes.starts_with("step,p1,p2,K1,K2,pi1,pi2\n"));
    assert!(taxes.lines().skip(1).all(|l| l.split(',').skip(1).all(|v| v == "0")));
}

#[test]
fn repro_tables_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = vcgmpc(&["repro-tables", "--seed", "7", "--out", path(d.path())]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["table2.csv", "sensitivity.csv", "case1/trajectory.csv", "case2/costs.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[areas.1]\ninertia = -1.0\n").unwrap();
    let out = vcgmpc(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
    let out = vcgmpc(&["simulate", "--config", path(&dir.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = vcgmpc(&["simulate", "--horizon", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = vcgmpc(&["misreport", "--agent", "3", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn required_certificate_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcgmpc(&["bounds", "--horizon", "10", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    // The table is still written before failing.
    let csv = fs::read_to_string(dir.path().join("certificate.csv")).unwrap();
    assert!(csv.starts_with("T,alpha,rho,gamma,eps,valid,mpc_step_ms\n10,"));
}

#[test]
fn bounds_table_without_requirement_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcgmpc(&["bounds", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("certificate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn unstable_open_loop_exits_3() {
    // A single area with a negative-droop-like instability cannot be built (all
    // parameters must be positive), so force a blow-up with a huge disturbance
    // under a one-step horizon, which applies no control.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    let text = "[areas.1]\ninertia = 1.0\ndamping = 1.0\ncharging_time = 1.0\ndroop = 1.0\ngovernor_time = 1.0\n\
                [types.1]\nq = [1.0, 1.0, 1.0, 1.0]\nr = [1.0]\n[mpc]\nhorizon = 1\nsteps = 10\n\
                [network]\ndt = 0.1\ndiscretization = \"euler\"\n[disturbance.1]\nomega = 1e308\n";
    fs::write(&cfg, text).unwrap();
    let out = vcgmpc(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn misreport_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcgmpc(&["misreport", "--agent", "1", "--steps", "100", "--horizon", "10", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("misreport.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("on,1,") && lines[2].starts_with("off,1,"));
}

use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use lorawan_capture::cli::{execute, Cli, EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION_FAILED};
use lorawan_capture::model::{capacity, evaluate};
use lorawan_capture::scenario::Scenario;
use lorawan_capture::sweep::SweepResult;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lorawan-capture"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

const SMALL: &str = "[network]\nnum_motes = 100\n\
[simulation]\nduration_s = 20000.0\nwarmup_s = 200.0\nseeds = [1, 2, 3]\n\
[sweep]\nvalues = [0.0, 0.02, 0.1]\n";

fn write_small(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn model_command_on_shipped_scenarios() {
    let mut per = Vec::new();
    for name in ["eu_default_cr0.toml", "eu_default_crinf.toml"] {
        let out = bin()
            .args(["model", "--scenario"])
            .arg(shipped(name))
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(EXIT_OK),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text
            .starts_with("lambda_fps,per_model,per_sim_mean,per_sim_ci95,capacity_fps,validity\n"));
        let sweep = SweepResult::read_csv(text.as_bytes()).unwrap();
        assert_eq!(sweep.rows.len(), 20);
        let cap = capacity(&Scenario::load(&shipped(name)).unwrap().network);
        for r in &sweep.rows {
            assert!((r.capacity_fps - cap).abs() <= 1e-8 * cap);
            assert_eq!(
                r.validity.to_string() == "over_capacity",
                r.lambda_fps > r.capacity_fps
            );
        }
        per.push(
            sweep
                .rows
                .iter()
                .map(|r| r.per_model.unwrap())
                .collect::<Vec<_>>(),
        );
    }
    assert!(per[0].iter().zip(&per[1]).all(|(cr0, inf)| cr0 <= inf));
}

#[test]
fn single_zero_load_row() {
    let out = bin()
        .args(["model", "--load", "0", "--scenario"])
        .arg(shipped("eu_default_cr0.toml"))
        .output()
        .unwrap();
    let sweep = SweepResult::read_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.rows[0].per_model, Some(0.0));
}

#[test]
fn simulate_is_reproducible_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_small(dir.path());
    let run = |out: &Path, trace: &Path| {
        let status = bin()
            .args(["simulate", "--jobs", "2", "--scenario"])
            .arg(&scenario)
            .arg("--out")
            .arg(out)
            .arg("--trace")
            .arg(trace)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(EXIT_OK));
        (
            std::fs::read(out).unwrap(),
            std::fs::read_to_string(trace).unwrap(),
        )
    };
    let (a, trace) = run(&dir.path().join("a.csv"), &dir.path().join("a.trace"));
    let (b, _) = run(&dir.path().join("b.csv"), &dir.path().join("b.trace"));
    assert_eq!(a, b);
    let sweep = SweepResult::read_csv(a.as_slice()).unwrap();
    assert_eq!(sweep.rows[0].validity.to_string(), "no_attempts");
    assert!(sweep.rows[2].per_sim_mean.is_some());
    assert!(trace.starts_with("time,entity,event,channel,rate,outcome"));
}

#[test]
fn validate_passes_at_low_load_and_catches_a_broken_model() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_small(dir.path());
    let out = bin()
        .args(["validate", "--scenario"])
        .arg(&scenario)
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK), "{text}");
    assert!(text.contains("validation passed"));

    let cli = Cli::parse_from([
        "lorawan-capture",
        "validate",
        "--scenario",
        scenario.to_str().unwrap(),
    ]);
    let mut buf = Vec::new();
    let broken = |c: &lorawan_capture::config::NetworkConfig| {
        evaluate(c).map(|mut r| {
            r.per = (r.per + 0.2).min(1.0);
            r
        })
    };
    let code = execute(&cli, &mut buf, &broken).unwrap();
    assert_eq!(code, EXIT_VALIDATION_FAILED);
    assert!(String::from_utf8(buf)
        .unwrap()
        .contains("validation failed"));
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[network]\ncell_radius_m = 1e6\n").unwrap();
    let out = bin()
        .args(["capacity", "--scenario"])
        .arg(&p)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cell radius"));
}

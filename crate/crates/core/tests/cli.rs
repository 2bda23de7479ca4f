use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowadj"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn simulate_1d_pulse_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], &config("pulse1d.toml"), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snaps: Vec<_> = fs::read_dir(dir.path().join("snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 6);
    let drift = csv_column(&dir.path().join("mass.csv"), "relative_drift");
    assert_eq!(drift.len(), 101);
    assert!(drift.iter().all(|d| d.abs() < 1e-13));
    for f in ["resolved.toml", "run.json", "cost.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn missing_config_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let o = run(&["simulate"], &missing, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.toml"));
}

#[test]
fn bad_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nsystem = \"lorenz\"\n\n[numerics]\ndt = \"fast\"\n").unwrap();
    let o = run(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 5"), "{err}");
}

#[test]
fn verify_lorenz_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &config("lorenz.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn failed_verification_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    // a finite complex step sees the nonlinearity of the flow equations
    let text = fs::read_to_string(config("pulse1d.toml")).unwrap() + "\n[verify]\ncomplex_step = 0.1\n";
    fs::write(&cfg, text).unwrap();
    let o = run(&["verify"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL complex_step"));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn optimize_lorenz_history_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize"], &config("lorenz.toml"), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cost = csv_column(&dir.path().join("history.csv"), "cost");
    assert!(cost.len() > 2);
    assert!(cost.windows(2).all(|w| w[1] <= w[0]), "{cost:?}");
    assert!(cost.last().unwrap() < &cost[0]);
    assert!(dir.path().join("control.txt").exists());
}

#[test]
fn blowup_lorenz_agrees_then_bifurcates() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["blowup"], &config("lorenz.toml"), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gap = csv_column(&dir.path().join("blowup.csv"), "rel_gap");
    assert_eq!(gap.len(), 3);
    assert!(gap[0] < 1e-3 && gap[1] < 1e-3 && gap[2] > 1.0, "{gap:?}");
    assert!(dir.path().join("blowup_norms.csv").exists());
}

#[test]
fn resolved_config_reproduces_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let o = run(&["gradient"], &config("lorenz.toml"), &first);
    assert!(o.status.success());
    let o = run(&["gradient"], &first.join("resolved.toml"), &second);
    assert!(o.status.success());
    for f in ["gradient.txt", "cost.csv", "gradient_energy.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(first.join("resolved.toml")).unwrap(),
        fs::read(second.join("resolved.toml")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["lyapunov", "--seed", "9"], &config("lorenz.toml"), dir.path());
    assert!(o.status.success());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["command"], "lyapunov");
    assert!(dir.path().join("lyapunov.csv").exists());
}

#[test]
fn scaled_jet_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], &config("dns2d_scaled.toml"), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(dir.path().join("resolved.toml")).unwrap();
    assert!(resolved.starts_with("# scaled-from: DNS2D\n"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["provenance"], "scaled-from: DNS2D");
    let mut f = fs::File::open(dir.path().join("snapshots/snap_000020.afl")).unwrap();
    let (header, data) = flowadj::grid_field::read_snapshot(&mut f).unwrap();
    assert_eq!(header.values(), data.len());
    assert_eq!(data.len(), 64 * 80 * 4);
}

#[test]
fn flow_gradient_with_checkpoints_in_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("jet.toml");
    let text = fs::read_to_string(config("jet2d.toml"))
        .unwrap()
        .replace("checkpoint_stride = 10", "checkpoint_stride = 10\nto_file = true");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["gradient"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index = flowadj::timeloop::read_trajectory_index(&out.join("trajectory.afl")).unwrap();
    assert_eq!(index.len(), 5);
    let g = flowadj::config::read_values(&out.join("gradient.txt")).unwrap();
    assert_eq!(g.len(), 5 * 8 * 8);
    assert!(g.iter().any(|v| *v != 0.0));
}

#[test]
fn oversized_seed_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--seed", "18446744073709551615"], &config("lorenz.toml"), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!out.exists());
}

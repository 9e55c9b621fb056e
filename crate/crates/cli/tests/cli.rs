use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PLANAR: &str = r#"
name = "planar"
angle_unit = "degrees"
seed = 3

[potential]
kind = "quartic"

[geometry]
lx = 5.0
ly = 8.0
hx = 0.1

[boundary]
kind = "planar"
theta = 90.0
offset = 0.0

[checks.hamiltonian]
angles = [0.0]

[checks.modica]

[checks.levelset]
r_min_widths = 2.0
"#;

fn aclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &str, path: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    aclab(&args)
}

/// Raw value of a top-level scalar in `summary.json`.
fn summary_field(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.json")).unwrap();
    let pat = format!("\n  \"{key}\": ");
    let start = text.find(&pat).unwrap_or_else(|| panic!("no `{key}`")) + pat.len();
    text[start..]
        .split([',', '\n'])
        .next()
        .unwrap()
        .trim_matches('"')
        .to_string()
}

#[test]
fn verify_passes_and_never_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), PLANAR);
    let out = tmp.path().join("out");
    let a = run("verify", &path, &out, &[]);
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert_eq!(a.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.matches("PASS").count(), 3, "{stdout}");
    let b = run("verify", &path, &out, &["--seed", "11", "--threads", "1"]);
    assert_eq!(b.status.code(), Some(0));
    let first = out.join("planar/run-000");
    let second = out.join("planar/run-001");
    assert_eq!(summary_field(&first, "seed"), "3");
    assert_eq!(summary_field(&second, "seed"), "11");
    assert_eq!(summary_field(&first, "status"), "pass");
    for f in [
        "field.ac2",
        "field.ac2.json",
        "config.toml",
        "zero_set.csv",
        "reports/levelset.json",
    ] {
        assert!(first.join(f).exists(), "{f}");
    }
}

#[test]
fn missing_potential_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PLANAR.replace("[potential]\nkind = \"quartic\"\n", "");
    let path = scenario(tmp.path(), &text);
    let o = run("verify", &path, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("potential"), "{stderr}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn bad_toml_reports_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), &PLANAR.replace("lx = 5.0", "lx = = 5.0"));
    let o = run("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn failed_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PLANAR.replace(
        "[checks.levelset]",
        "[checks.levelset]\nangle_tol_deg = 1e-12\nbalance_tol = 1e-30",
    );
    let path = scenario(tmp.path(), &text);
    let o = run("verify", &path, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn solver_failure_exits_3_and_keeps_the_best_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{PLANAR}\n[solver]\nmax_iter = 2\nmax_flow_steps = 2\n\n[perturb]\namplitude = 0.5\n");
    let path = scenario(tmp.path(), &text);
    let o = run("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(tmp.path().join("out/planar/run-000/field_best.ac2").exists());
}

#[test]
fn profile1d_and_snapshot_levelset() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), PLANAR);
    let out = tmp.path().join("out");
    let p = run("profile1d", &path, &out, &[]);
    assert_eq!(p.status.code(), Some(0), "{}", String::from_utf8_lossy(&p.stdout));
    assert!(out.join("planar/run-000/profile.csv").exists());
    assert_eq!(run("solve", &path, &out, &[]).status.code(), Some(0));
    let snap = out.join("planar/run-001/field.ac2");
    let l = run("levelset", &path, &out, &["--snapshot", snap.to_str().unwrap()]);
    assert_eq!(l.status.code(), Some(0), "{}", String::from_utf8_lossy(&l.stdout));
    assert!(!out.join("planar/run-002/field.ac2").exists());
    assert!(out.join("planar/run-002/reports/levelset.json").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), PLANAR);
    let out = tmp.path().join("out");
    let o = run(
        "sweep",
        &path,
        &out,
        &["--param", "boundary.theta", "--values", "80,90,100"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = fs::read_to_string(out.join("planar/sweep-000/table.csv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("boundary.theta,status,exit_code"));
    assert!(header.contains("levelset.angle_error_deg"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.contains(",pass,0,")), "{table}");
}

#[test]
fn empty_sweep_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), PLANAR);
    let out = tmp.path().join("out");
    let o = run("sweep", &path, &out, &["--param", "boundary.theta", "--values", ""]);
    assert_eq!(o.status.code(), Some(0));
    let table = fs::read_to_string(out.join("planar/sweep-000/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn unknown_sweep_parameter_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario(tmp.path(), PLANAR);
    let o = run(
        "sweep",
        &path,
        &tmp.path().join("out"),
        &["--param", "geometry.hz", "--values", "0.1"],
    );
    assert_eq!(o.status.code(), Some(2));
}

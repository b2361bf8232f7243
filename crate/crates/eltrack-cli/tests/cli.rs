//! End-to-end checks of the binary: exit codes, output files, overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eltrack"))
}

fn bundled_scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/two_link_paper.toml")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn proposed_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = bundled_scenario();
    let out = run_in(
        dir.path(),
        &[
            "run",
            scenario.to_str().unwrap(),
            "--controller",
            "proposed",
            "--t-end",
            "1.0",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = dir.path().join("out/proposed/trajectory.csv");
    let summary = dir.path().join("out/proposed/summary.json");
    assert!(csv.exists() && summary.exists());
    let header = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        "t,q1,q2,qd1,qd2,qdot1,qdot2,e_norm,edot_norm,r_norm,tau1,tau2,tau_norm,dtau_norm,V,Vdot_analytic,margin_q,margin_qdot,margin_tau,theta_hat1,theta_hat2,theta_hat3"
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["controller"], "proposed");
    assert_eq!(json["outcome"]["status"], "completed");
}

#[test]
fn classical_violation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = bundled_scenario();
    let out = run_in(
        dir.path(),
        &[
            "run",
            scenario.to_str().unwrap(),
            "--controller",
            "classical",
            "--t-end",
            "1.0",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/classical/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["outcome"]["status"], "constraint_violation");
    assert_eq!(json["outcome"]["first_violation"]["channel"], "input");
}

#[test]
fn invalid_gain_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled_scenario())
        .unwrap()
        .replace("alpha = 0.6", "alpha = 0.7");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = run_in(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gain condition"), "stderr: {stderr}");
}

#[test]
fn barrier_breach_exits_three() {
    // An under-actuated pendulum held against gravity: the admissible torque
    // cannot keep the arm at the setpoint, so the filtered error reaches the
    // barrier radius and the run must abort loudly.
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
mode = "proposed"

[plant]
kind = "pendulum"
inertia = 1.0
damping = 0.1
gravity_torque = 5.0

[constraints]
beta1 = 3.0
beta2 = 3.0
tau_max = 0.5
alpha1 = 1.6
alpha2 = 0.1

[reference]
kind = "constant"
setpoint = [1.5707963267948966]

[gains]
alpha = 0.5
k1 = 8.0
gamma = 2.0
gamma_d = 1.0
gamma_2 = 1.0

[initial]
q = [1.5707963267948966]
qdot = [0.0]

[sim]
dt = 0.001
t_end = 10.0
"#;
    let path = dir.path().join("breach.toml");
    std::fs::write(&path, text).unwrap();
    let out = run_in(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/proposed/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["outcome"]["status"], "barrier_breach");
    assert!(json["outcome"]["failure"]
        .as_str()
        .unwrap()
        .contains("barrier"));
}

#[test]
fn numeric_blowup_exits_four() {
    // dt far beyond the stability limit: the integration diverges to infinity
    // and must be reported as a numeric failure, not silently logged.
    let dir = tempfile::tempdir().unwrap();
    let scenario = bundled_scenario();
    let out = run_in(
        dir.path(),
        &[
            "run",
            scenario.to_str().unwrap(),
            "--controller",
            "classical",
            "--dt",
            "0.5",
            "--t-end",
            "200",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn compare_writes_reports_and_exits_by_the_proposed_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = bundled_scenario();
    // 7 s covers t = 2 pi, where the reference velocity supremum exceeds its
    // declared bound and the warning must fire
    let out = run_in(
        dir.path(),
        &[
            "compare",
            scenario.to_str().unwrap(),
            "--t-end",
            "7.0",
            "--figures",
        ],
    );
    // the classical arm violates, but compare exits by the proposed run
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/comparison.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["proposed_within_constraints"], true);
    assert_eq!(json["shared_k1"], true);
    assert_eq!(
        json["classical"]["outcome"]["status"],
        "constraint_violation"
    );
    for file in [
        "out/proposed/trajectory.csv",
        "out/proposed/figures/fig1_filtered_error.csv",
        "out/classical/figures/fig5_input.csv",
        "out/classical/summary.json",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("warning"),
        "reference suprema warning expected: {stdout}"
    );
}

#[test]
fn missing_scenario_file_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "no_such_scenario.toml"]);
    assert_eq!(out.status.code(), Some(5));
}

//! Scenario loading, CSV emission, comparison workflow, and the bundled
//! benchmark's regression anchors.

use std::path::PathBuf;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use eltrack::runner::{
    csv_header, emit_csv, emit_figures, emit_summary, load_scenario, run_compare, Arm, Mode,
    RunSummary, Scenario,
};
use eltrack::sim::RunStatus;

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/two_link_paper.toml")
}

fn bundled_text() -> String {
    std::fs::read_to_string(scenario_path()).unwrap()
}

fn with_t_end(text: &str, t_end: f64) -> Scenario {
    Scenario::from_toml(&text.replace("t_end = 30.0", &format!("t_end = {t_end}"))).unwrap()
}

#[test]
fn bundled_scenario_carries_the_benchmark_values() {
    let scenario = load_scenario(scenario_path()).unwrap();
    let file = scenario.file();
    assert_eq!(scenario.mode(), Mode::Both);
    assert_eq!(
        (
            file.constraints.beta1,
            file.constraints.beta2,
            file.constraints.tau_max
        ),
        (3.6, 2.1, 5.0)
    );
    assert_eq!(
        (file.constraints.alpha1, file.constraints.alpha2),
        (2.0, 0.6)
    );
    assert_eq!(file.gains.alpha, 0.6);
    assert_eq!(file.gains.k1, 10.0);
    assert_eq!(file.gains.gamma, 10.0);
    assert_eq!(file.gains.gamma_d, 5.0);
    assert_eq!(file.gains.gamma_2, 5.0);
    assert_eq!(file.classical.unwrap().gamma_c, 100.0);
    match &file.plant {
        eltrack::runner::PlantSection::TwoLink {
            p1,
            p2,
            p3,
            fd1,
            fd2,
        } => {
            assert_eq!((*p1, *p2, *p3), (3.473, 0.196, 0.242));
            assert_eq!((*fd1, *fd2), (5.3, 1.1));
        }
        other => panic!("unexpected plant section {other:?}"),
    }
    assert_eq!(file.sim.dt, 1e-3);
    assert_eq!(file.sim.t_end, 30.0);
}

#[test]
fn bundled_scenario_is_byte_stable() {
    // regression anchor: any edit to the benchmark scenario must be deliberate
    let digest = Sha256::digest(bundled_text().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(
        hex,
        "c2750229765ced6aea1c74aa70880f14fa9f4967e9fa2b5ef4a8b5ff6341e2ee"
    );
}

#[test]
fn csv_round_trips_at_full_precision() {
    let scenario = with_t_end(&bundled_text(), 0.05);
    let artifacts = scenario.run(Arm::Proposed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    emit_csv(&artifacts.log, 2, 3, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_header(2, 3));
    let mut count = 0;
    for (line, row) in lines.zip(&artifacts.log.rows) {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 22);
        assert_eq!(fields[0], row.t);
        assert_eq!(fields[1], row.q[0]);
        assert_eq!(fields[7], row.e.norm());
        assert_eq!(fields[9], row.r.norm());
        assert_eq!(fields[12], row.tau.norm());
        assert_eq!(fields[14], row.lyapunov);
        assert_eq!(fields[15], row.lyapunov_rate);
        assert_eq!(fields[21], row.theta_hat[2]);
        count += 1;
    }
    assert_eq!(count, artifacts.log.rows.len());
}

#[test]
fn empty_horizon_emits_header_plus_one_row() {
    let scenario = with_t_end(&bundled_text(), 0.0);
    let artifacts = scenario.run(Arm::Proposed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    emit_csv(&artifacts.log, 2, 3, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(artifacts.outcome.status, RunStatus::Completed);
}

#[test]
fn comparison_reports_the_expected_contrast() {
    let scenario = with_t_end(&bundled_text(), 2.0);
    let (report, proposed, classical) = run_compare(&scenario).unwrap();
    assert!(report.proposed_within_constraints);
    assert!(report.shared_k1);
    assert_eq!(proposed.outcome.status, RunStatus::Completed);
    assert_eq!(classical.outcome.status, RunStatus::ConstraintViolation);
    assert!(report.classical.outcome.first_violation.is_some());
    // identical initial conditions for both arms
    assert_eq!(proposed.log.rows[0].q, classical.log.rows[0].q);
    assert_eq!(proposed.log.rows[0].qdot, classical.log.rows[0].qdot);
}

#[test]
fn compare_requires_both_mode() {
    let text = bundled_text().replace("mode = \"both\"", "mode = \"classical\"");
    let scenario = Scenario::from_toml(&text).unwrap();
    let err = run_compare(&scenario).unwrap_err();
    assert!(err.to_string().contains("mode = \"both\""), "{err}");
}

#[test]
fn classical_only_summary_has_no_proposed_fields() {
    let text = bundled_text().replace("mode = \"both\"", "mode = \"classical\"");
    let scenario = with_t_end(&text, 0.5);
    let artifacts = scenario.run(Arm::Classical).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.json");
    emit_summary(&RunSummary::new(Arm::Classical, &artifacts), &path).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(json["controller"], "classical");
    assert!(json.get("proposed").is_none());
    assert!(json["outcome"]["peak_tau_norm"].is_f64());
    assert!(json["feasibility"]["bounds"]["kappa"].is_f64());
}

// With the input bound effectively removed and the state bounds pushed far
// out, the barrier weight collapses and the extra machinery stays quiescent;
// the two controllers must then produce the same trajectories.
#[test]
fn unconstrained_limit_reduces_the_proposed_controller_to_the_classical_one() {
    let text = bundled_text()
        .replace("beta1 = 3.6", "beta1 = 1.0e7")
        .replace("beta2 = 2.1", "beta2 = 1.0e7")
        .replace("tau_max = 5.0", "tau_max = 1.0e9")
        .replace("gamma_c = 100.0", "gamma_c = 10.0");
    let scenario = with_t_end(&text, 10.0);
    let (_, proposed, classical) = run_compare(&scenario).unwrap();
    assert_eq!(proposed.outcome.status, RunStatus::Completed);
    assert_eq!(classical.outcome.status, RunStatus::Completed);

    let mut divergence = 0.0f64;
    for (p, c) in proposed.log.rows.iter().zip(&classical.log.rows) {
        divergence = divergence
            .max((&p.q - &c.q).amax())
            .max((&p.qdot - &c.qdot).amax())
            .max((&p.theta_hat - &c.theta_hat).amax())
            .max((&p.tau - &c.tau).amax());
        // the input-constraint machinery must be fully quiescent
        assert_eq!(p.delta_tau, DVector::zeros(2));
    }
    assert!(divergence < 1e-8, "trajectories diverged by {divergence}");
}

#[test]
fn figure_slices_cover_all_five_figures() {
    let scenario = with_t_end(&bundled_text(), 0.05);
    let artifacts = scenario.run(Arm::Proposed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_figures(
        &artifacts.log,
        &artifacts.feasibility.bounds,
        &scenario.file().constraints,
        dir.path(),
    )
    .unwrap();
    for name in [
        "fig1_filtered_error.csv",
        "fig2_tracking_error.csv",
        "fig3_position.csv",
        "fig4_velocity.csv",
        "fig5_input.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), artifacts.log.rows.len() + 1, "{name}");
    }
    let fig1 = std::fs::read_to_string(dir.path().join("fig1_filtered_error.csv")).unwrap();
    assert!(fig1.lines().next().unwrap() == "t,r_norm,kappa");
}

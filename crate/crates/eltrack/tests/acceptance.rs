//! Acceptance suite for the two-link benchmark scenario.
//!
//! Each test prints one `criterion N: PASS` line (visible with
//! `cargo test --test acceptance -- --nocapture`); every tolerance is pinned
//! here in code. The two 30 s benchmark runs are shared across criteria.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eltrack::controller::{saturate, ControllerState};
use eltrack::feasibility::{alpha_gain_limit, derive_error_bounds, ConstraintSpec};
use eltrack::plant::{regressor_bias, PlantModel, PlantState, RefSample, TwoLinkArm};
use eltrack::runner::{load_scenario, Arm, Scenario};
use eltrack::sim::{Integrator, ProposedLoop, RunArtifacts, RunStatus};

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/two_link_paper.toml")
}

fn scenario() -> &'static Scenario {
    static SCENARIO: OnceLock<Scenario> = OnceLock::new();
    SCENARIO.get_or_init(|| load_scenario(scenario_path()).expect("bundled scenario loads"))
}

fn proposed_run() -> &'static (RunArtifacts, Duration) {
    static RUN: OnceLock<(RunArtifacts, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let artifacts = scenario().run(Arm::Proposed).expect("proposed run");
        (artifacts, start.elapsed())
    })
}

fn classical_run() -> &'static RunArtifacts {
    static RUN: OnceLock<RunArtifacts> = OnceLock::new();
    RUN.get_or_init(|| scenario().run(Arm::Classical).expect("classical run"))
}

#[test]
fn criterion_1_benchmark_reproduction() {
    let (artifacts, elapsed) = proposed_run();
    let o = &artifacts.outcome;
    let kappa = artifacts.feasibility.bounds.kappa;
    assert_eq!(kappa, 0.5625);
    assert_eq!(o.status, RunStatus::Completed);
    assert!(
        o.first_violation.is_none(),
        "unexpected violation: {:?}",
        o.first_violation
    );
    assert!(o.peak_r_norm < kappa, "peak |r| {} >= kappa", o.peak_r_norm);
    assert!(o.peak_e_norm < 1.6, "peak |e| {}", o.peak_e_norm);
    assert!(o.peak_edot_norm < 1.5, "peak |edot| {}", o.peak_edot_norm);
    assert!(o.peak_q_norm < 3.6, "peak |q| {}", o.peak_q_norm);
    assert!(o.peak_qdot_norm < 2.1, "peak |qdot| {}", o.peak_qdot_norm);
    assert!(
        o.peak_tau_norm <= 5.0 + 1e-9,
        "peak |tau| {}",
        o.peak_tau_norm
    );
    assert!(elapsed.as_secs_f64() < 10.0, "run took {elapsed:?}");
    println!(
        "criterion 1 (benchmark reproduction): PASS — peak |r| {:.4} < {kappa}, |e| {:.4} < 1.6, \
         |edot| {:.4} < 1.5, |q| {:.4} < 3.6, |qdot| {:.4} < 2.1, |tau| {:.4} <= 5 ({elapsed:?})",
        o.peak_r_norm,
        o.peak_e_norm,
        o.peak_edot_norm,
        o.peak_q_norm,
        o.peak_qdot_norm,
        o.peak_tau_norm
    );
}

#[test]
fn criterion_2_classical_contrast() {
    let artifacts = classical_run();
    let o = &artifacts.outcome;
    assert_eq!(o.status, RunStatus::ConstraintViolation);
    let violation = o
        .first_violation
        .expect("classical run must violate a margin");
    // frozen regression values: the unclamped baseline demands |tau| > 5
    // from the very first sample
    assert_eq!(violation.channel, eltrack::sim::ConstraintChannel::Input);
    assert_eq!(violation.t, 0.0);
    assert!(
        o.peak_tau_norm > 5.0,
        "peak |tau| {} should exceed 5",
        o.peak_tau_norm
    );
    println!(
        "criterion 2 (classical contrast): PASS — first violation at t = {} on {:?}, peak |tau| {:.4}",
        violation.t, violation.channel, o.peak_tau_norm
    );
}

#[test]
fn criterion_3_lyapunov_monotonicity() {
    let (artifacts, _) = proposed_run();
    let o = &artifacts.outcome;
    let rows = &artifacts.log.rows;
    let dt = scenario().file().sim.dt;

    // discrete monotonicity at the pinned tolerance
    assert!(
        o.v_monotone,
        "V increased by {} > tol {}",
        o.max_v_increase, o.tol_v
    );

    // the closed-form rate is negative semidefinite on the whole grid, and is
    // exactly the logged analytic rate wherever saturation is inactive
    for row in rows {
        assert!(row.lyapunov_rate_closed_form <= 0.0, "t = {}", row.t);
        if row.delta_tau.norm() == 0.0 {
            assert_eq!(
                row.lyapunov_rate, row.lyapunov_rate_closed_form,
                "t = {}",
                row.t
            );
        }
    }

    // analytic rate vs centered finite differences of logged V: 5% relative
    // wherever |V'| > 1e-6
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for k in 1..rows.len() - 1 {
        let fd = (rows[k + 1].lyapunov - rows[k - 1].lyapunov) / (2.0 * dt);
        let analytic = rows[k].lyapunov_rate;
        if analytic.abs() > 1e-6 {
            let rel = (fd - analytic).abs() / analytic.abs();
            assert!(
                rel <= 0.05,
                "t = {}: fd {} vs analytic {} (rel {rel})",
                rows[k].t,
                fd,
                analytic
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 10_000, "only {checked} samples had |V'| > 1e-6");
    println!(
        "criterion 3 (Lyapunov monotonicity): PASS — max V increase {:.3e} <= tol {:.3e}, \
         V' matches FD within 5% on {checked} samples (worst {:.3e})",
        o.max_v_increase, o.tol_v, worst
    );
}

#[test]
fn criterion_4_convergence_proxy() {
    let (artifacts, _) = proposed_run();
    let o = &artifacts.outcome;
    let rows = &artifacts.log.rows;
    // frozen regression bounds (first successful run: |e(30)| = 1.87e-2,
    // |r(30)| = 1.52e-3), both within the required 0.05
    const FROZEN_E: f64 = 0.025;
    const FROZEN_R: f64 = 0.005;
    const _: () = assert!(FROZEN_E <= 0.05 && FROZEN_R <= 0.05);
    let final_r = rows.last().unwrap().r.norm();
    assert!(o.final_e_norm <= FROZEN_E, "|e(30)| = {}", o.final_e_norm);
    assert!(final_r <= FROZEN_R, "|r(30)| = {}", final_r);
    let peak_e_5s = rows
        .iter()
        .take_while(|r| r.t <= 5.0)
        .map(|r| r.e.norm())
        .fold(0.0f64, f64::max);
    assert!(
        o.final_e_norm <= 0.1 * peak_e_5s,
        "|e(30)| = {} exceeds 10% of the [0, 5] s peak {}",
        o.final_e_norm,
        peak_e_5s
    );
    println!(
        "criterion 4 (convergence proxy): PASS — |e(30)| {:.3e} <= {FROZEN_E}, |r(30)| {:.3e} <= {FROZEN_R}, \
         terminal/peak ratio {:.3}%",
        o.final_e_norm,
        final_r,
        100.0 * o.final_e_norm / peak_e_5s
    );
}

// Independent reconstruction of the two-link force terms for criterion 5;
// deliberately re-derived here rather than calling the plant's own `forces`.
fn oracle_full_rhs(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot_d: &DVector<f64>,
    edot: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    let (p1, p2, p3, fd1, fd2) = (3.473, 0.196, 0.242, 5.3, 1.1);
    let (c2, s2) = (q[1].cos(), q[1].sin());
    let m = DMatrix::from_row_slice(2, 2, &[p1 + 2.0 * p3 * c2, p2 + p3 * c2, p2 + p3 * c2, p2]);
    let vm = DMatrix::from_row_slice(
        2,
        2,
        &[
            -p3 * s2 * qdot[1],
            -p3 * s2 * (qdot[0] + qdot[1]),
            p3 * s2 * qdot[0],
            0.0,
        ],
    );
    let friction = DVector::from_column_slice(&[fd1 * qdot[0], fd2 * qdot[1]]);
    let rhs = -(vm * qdot) - friction - &m * qddot_d + &m * (edot * alpha);
    m.lu().solve(&rhs).expect("oracle inertia invertible")
}

#[test]
fn criterion_5_regressor_oracle() {
    let plant = TwoLinkArm::benchmark();
    let theta = plant.unknown_params();
    let alpha = 0.6;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    while count < 1000 {
        let q = DVector::from_fn(2, |_, _| rng.random_range(-2.6..2.6));
        let qdot = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
        // stay inside the safe set
        if q.norm() >= 3.6 || qdot.norm() >= 2.1 {
            continue;
        }
        count += 1;
        let state = PlantState::new(q.clone(), qdot.clone()).unwrap();
        let reference = RefSample {
            q: DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
            qdot: DVector::from_fn(2, |_, _| rng.random_range(-0.6..0.6)),
            qddot: DVector::from_fn(2, |_, _| rng.random_range(-0.7..0.7)),
        };
        let edot = &qdot - &reference.qdot;
        let lhs = plant.regressor(&state) * &theta + regressor_bias(&reference, &edot, alpha);
        let rhs = oracle_full_rhs(&q, &qdot, &reference.qddot, &edot, alpha);
        let gap = (lhs - rhs).norm();
        worst = worst.max(gap);
        assert!(gap < 1e-10, "residual {gap} at q = {q:?}, qdot = {qdot:?}");
    }
    println!(
        "criterion 5 (regressor oracle): PASS — 1000 safe-set states, worst residual {worst:.3e}"
    );
}

#[test]
fn criterion_6_saturation_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut saturated_cases = 0usize;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8usize);
        let tau_max = rng.random_range(0.05..50.0f64);
        let limit = tau_max / (n as f64).sqrt();
        // mix magnitudes so both regimes appear
        let scale = if rng.random_bool(0.5) {
            limit * 0.9
        } else {
            limit * 4.0
        };
        let v = DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
        let (tau, dtau) = saturate(&v, tau_max);
        assert!(
            tau.norm() <= tau_max + 1e-12,
            "norm bound failed: {} > {tau_max}",
            tau.norm()
        );
        let unsaturated = v.iter().all(|vi| vi.abs() <= limit);
        assert_eq!(dtau.iter().all(|d| *d == 0.0), unsaturated);
        if !unsaturated {
            saturated_cases += 1;
        }
        for i in 0..n {
            assert!(tau[i] * v[i] >= 0.0, "sign flip in channel {i}");
        }
    }
    assert!(
        saturated_cases > 1000,
        "want plenty of saturated cases, got {saturated_cases}"
    );
    println!(
        "criterion 6 (saturation suite): PASS — 10000 randomized cases, {saturated_cases} saturated"
    );
}

#[test]
fn criterion_7_feasibility_algebra() {
    let spec = ConstraintSpec {
        beta1: 3.6,
        beta2: 2.1,
        tau_max: 5.0,
        alpha1: 2.0,
        alpha2: 0.6,
    };
    let bounds = derive_error_bounds(&spec, 0.6).unwrap();
    assert_eq!(bounds.delta1, 1.6);
    assert_eq!(bounds.delta2, 1.5);
    assert_eq!(bounds.kappa, 0.5625);
    assert!(bounds.gain_ok);
    let limit = alpha_gain_limit();
    assert!(derive_error_bounds(&spec, limit - 1e-12).unwrap().gain_ok);
    assert!(!derive_error_bounds(&spec, limit + 1e-12).unwrap().gain_ok);
    println!(
        "criterion 7 (feasibility algebra): PASS — delta1 = 1.6, delta2 = 1.5, kappa = 0.5625 exact; \
         gain flag flips at {limit:.12} within 1e-12"
    );
}

#[test]
fn criterion_8_integrator_order() {
    let scenario = scenario();
    let plant = scenario.build_plant();
    let reference = scenario.reference();
    let gains = scenario.controller_gains().unwrap();
    let spec = scenario.file().constraints;
    let lp = ProposedLoop {
        plant: plant.as_ref(),
        reference: &reference,
        gains: &gains,
        tau_max: spec.tau_max,
    };
    let state0 = PlantState::new(
        DVector::from_row_slice(&scenario.file().initial.q),
        DVector::from_row_slice(&scenario.file().initial.qdot),
    )
    .unwrap();
    let cs0 = ControllerState::initialize(plant.as_ref(), &state0.q, None).unwrap();
    let y0 = lp.pack(&state0, &cs0);

    let integrate = |start: &DVector<f64>, t0: f64, t1: f64, dt: f64| -> DVector<f64> {
        let steps = ((t1 - t0) / dt).round() as usize;
        let mut y = start.clone();
        for k in 0..steps {
            y = lp
                .step(t0 + k as f64 * dt, &y, dt, Integrator::Rk4)
                .unwrap();
        }
        y
    };

    // The clamp exit near t = 0.04 s is a kink in the derivative field; a
    // self-convergence measurement across it reads the O(dt^2) event error,
    // not the integrator order. The order is measured on the smooth flow by
    // branching all runs from the scenario state at t = 1 s; the start-layer
    // accuracy is pinned separately in absolute terms.
    let y1 = integrate(&y0, 0.0, 1.0, 1e-4);
    let a = integrate(&y1, 1.0, 3.0, 4e-3);
    let b = integrate(&y1, 1.0, 3.0, 2e-3);
    let c = integrate(&y1, 1.0, 3.0, 1e-3);
    let d = integrate(&y1, 1.0, 3.0, 5e-4);
    let gap_ab = (a - &b).norm();
    let gap_bc = (&b - &c).norm();
    let gap_cd = (&c - d).norm();
    let ratio1 = gap_ab / gap_bc;
    let ratio2 = gap_bc / gap_cd;
    assert!(ratio1 >= 12.0, "halving 4e-3 -> 2e-3 gave ratio {ratio1}");
    assert!(ratio2 >= 12.0, "halving 2e-3 -> 1e-3 gave ratio {ratio2}");

    let start_gap = (integrate(&y0, 0.0, 2.0, 2e-3) - integrate(&y0, 0.0, 2.0, 1e-3)).norm();
    assert!(start_gap < 1e-4, "start-layer self-difference {start_gap}");

    println!(
        "criterion 8 (integrator order): PASS — halving ratios {ratio1:.2}, {ratio2:.2} (>= 12); \
         start-layer gap {start_gap:.3e} < 1e-4"
    );
}

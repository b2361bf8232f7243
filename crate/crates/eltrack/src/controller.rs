//! The saturated barrier-based adaptive controller and the classical baseline.
//!
//! Signals: `e = q - q_d`, `r = e' + alpha e`. The auxiliary input
//! `v = M (-(Y theta_hat + b) - K1 r)` is clamped per channel at
//! `tau_max / sqrt(n)`, which keeps `||tau|| <= tau_max`. The saturation
//! deficit `dtau = tau - v` drives an auxiliary system
//! `r1' = -K1 r1 + K2 dtau`; its mismatch `r_d = r - r1` enters the adaptive
//! laws together with the barrier weight `w = 1 / (kappa^2 - r^T r)`:
//!
//! ```text
//! theta_hat' =  Gamma   Y^T (w r + r_d)
//! Kd'        = -Gamma_d (w r + r_d) dtau^T
//! K2'        = -Gamma_2 (w r) dtau^T
//! ```
//!
//! All laws are written in the column-consistent orientation under which the
//! cross terms of the composite Lyapunov function cancel; the test suite
//! certifies that cancellation numerically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feasibility::alpha_gain_limit;
use crate::plant::{ensure_finite, regressor_bias, PlantModel, PlantState, RefSample};

/// Relative guard band on the barrier radius: the barrier weight is refused
/// once `||r|| >= kappa (1 - BARRIER_GUARD)`. Under a valid gain/IC setup the
/// guard is unreachable, so hitting it indicates an integration or
/// configuration problem and must abort the run.
pub const BARRIER_GUARD: f64 = 1e-9;

/// Gains of the proposed controller. `k1` is a constant positive-definite
/// feedback gain; `gamma`, `gamma_d`, `gamma_2` are the adaptation gains;
/// `kappa` is the barrier radius derived from the constraint spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k1: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gamma_d: DMatrix<f64>,
    pub gamma_2: DMatrix<f64>,
    pub alpha: f64,
    pub kappa: f64,
}

fn require_spd(mat: &DMatrix<f64>, name: &str) -> Result<()> {
    if !mat.is_square() {
        return Err(Error::config(format!("{name} must be square")));
    }
    let scale = mat.amax().max(1.0);
    if (mat - mat.transpose()).amax() > 1e-12 * scale {
        return Err(Error::config(format!("{name} must be symmetric")));
    }
    if mat.clone().cholesky().is_none() {
        return Err(Error::config(format!("{name} must be positive definite")));
    }
    Ok(())
}

fn require_gain_condition(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < alpha_gain_limit()) {
        return Err(Error::config(format!(
            "filter gain condition requires 0 < alpha < (-1 + sqrt(5))/2 ~= {:.6}, got {alpha}",
            alpha_gain_limit()
        )));
    }
    Ok(())
}

impl ControllerGains {
    pub fn new(
        k1: DMatrix<f64>,
        gamma: DMatrix<f64>,
        gamma_d: DMatrix<f64>,
        gamma_2: DMatrix<f64>,
        alpha: f64,
        kappa: f64,
    ) -> Result<Self> {
        require_spd(&k1, "K1")?;
        require_spd(&gamma, "Gamma")?;
        require_spd(&gamma_d, "Gamma_d")?;
        require_spd(&gamma_2, "Gamma_2")?;
        require_gain_condition(alpha)?;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::config(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if k1.nrows() != gamma_d.nrows() || k1.nrows() != gamma_2.nrows() {
            return Err(Error::Dimension {
                context: "K1, Gamma_d and Gamma_2 must share the plant dimension".into(),
            });
        }
        Ok(Self {
            k1,
            gamma,
            gamma_d,
            gamma_2,
            alpha,
            kappa,
        })
    }

    /// Scalar-times-identity gains, the form used by scenario files.
    #[allow(clippy::too_many_arguments)]
    pub fn isotropic(
        n: usize,
        m: usize,
        k1: f64,
        gamma: f64,
        gamma_d: f64,
        gamma_2: f64,
        alpha: f64,
        kappa: f64,
    ) -> Result<Self> {
        Self::new(
            DMatrix::identity(n, n) * k1,
            DMatrix::identity(m, m) * gamma,
            DMatrix::identity(n, n) * gamma_d,
            DMatrix::identity(n, n) * gamma_2,
            alpha,
            kappa,
        )
    }

    pub fn dof(&self) -> usize {
        self.k1.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Adapted quantities of the proposed controller.
///
/// `kd` and `k2` honor `Kd(0) = M(q0)^-1 - K2(0)` with `K2(0) = 0` at
/// initialization; afterwards both evolve only through their adaptive laws.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta_hat: DVector<f64>,
    pub kd: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub r1: DVector<f64>,
}

impl ControllerState {
    /// `theta_hat` defaults to zero when no estimate is supplied.
    pub fn initialize(
        plant: &dyn PlantModel,
        q0: &DVector<f64>,
        theta_hat0: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = plant.dof();
        let m_count = plant.param_count();
        let inertia = plant.inertia(q0);
        let g0 = inertia
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularInertia {
                det: inertia.determinant(),
            })?;
        let theta_hat = theta_hat0.unwrap_or_else(|| DVector::zeros(m_count));
        if theta_hat.len() != m_count {
            return Err(Error::Dimension {
                context: format!(
                    "theta_hat has {} entries for a model with {} parameters",
                    theta_hat.len(),
                    m_count
                ),
            });
        }
        ensure_finite(&theta_hat, "theta_hat")?;
        Ok(Self {
            theta_hat,
            kd: g0,
            k2: DMatrix::zeros(n, n),
            r1: DVector::zeros(n),
        })
    }
}

/// Filtered tracking error `r = e' + alpha e`.
pub fn filtered_error(e: &DVector<f64>, edot: &DVector<f64>, alpha: f64) -> DVector<f64> {
    edot + e * alpha
}

/// Auxiliary input `v = M (-(Y theta_hat + bias) - K1 r)`.
pub fn auxiliary_input(
    y: &DMatrix<f64>,
    bias: &DVector<f64>,
    theta_hat: &DVector<f64>,
    r: &DVector<f64>,
    k1: &DMatrix<f64>,
    inertia: &DMatrix<f64>,
) -> DVector<f64> {
    inertia * (-(y * theta_hat + bias) - k1 * r)
}

/// Per-channel clamp at `tau_max / sqrt(n)`; returns `(tau, tau - v)`.
///
/// `sgn(0)` is taken as 0, so the map is continuous at `v = 0`, and
/// `||tau|| <= tau_max` holds for every input.
pub fn saturate(v: &DVector<f64>, tau_max: f64) -> (DVector<f64>, DVector<f64>) {
    let limit = tau_max / (v.len() as f64).sqrt();
    let tau = v.map(|vi| vi.clamp(-limit, limit));
    let delta_tau = &tau - v;
    (tau, delta_tau)
}

/// Barrier weight `w = 1 / (kappa^2 - r^T r)`; errors inside the guard band.
pub fn barrier_weight(r: &DVector<f64>, kappa: f64) -> Result<f64> {
    let r_norm = r.norm();
    if r_norm >= kappa * (1.0 - BARRIER_GUARD) {
        return Err(Error::BarrierBreach { r_norm, kappa });
    }
    Ok(1.0 / (kappa * kappa - r.dot(r)))
}

/// Time derivatives of the adapted quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDerivatives {
    pub theta_hat_dot: DVector<f64>,
    pub kd_dot: DMatrix<f64>,
    pub k2_dot: DMatrix<f64>,
    pub r1_dot: DVector<f64>,
}

/// Evaluates the adaptive laws and the auxiliary error dynamics
/// `r1' = -K1 r1 + K2 dtau` at the current signals.
pub fn proposed_step_derivatives(
    cs: &ControllerState,
    r: &DVector<f64>,
    y: &DMatrix<f64>,
    delta_tau: &DVector<f64>,
    gains: &ControllerGains,
) -> Result<ControllerDerivatives> {
    let w = barrier_weight(r, gains.kappa)?;
    let r_d = r - &cs.r1;
    let weighted = r * w + &r_d; // w r + r_d
    let theta_hat_dot = &gains.gamma * (y.transpose() * &weighted);
    let kd_dot = -(&gains.gamma_d * (&weighted * delta_tau.transpose()));
    let k2_dot = -(&gains.gamma_2 * ((r * w) * delta_tau.transpose()));
    let r1_dot = -(&gains.k1 * &cs.r1) + &cs.k2 * delta_tau;
    Ok(ControllerDerivatives {
        theta_hat_dot,
        kd_dot,
        k2_dot,
        r1_dot,
    })
}

/// Intermediate signals of one control evaluation, surfaced for logging.
#[derive(Debug, Clone)]
pub struct ControlDiagnostics {
    pub e: DVector<f64>,
    pub edot: DVector<f64>,
    pub r: DVector<f64>,
    pub r_d: DVector<f64>,
    pub w: f64,
    pub v: DVector<f64>,
    pub y: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Full control evaluation of the proposed controller: tracking errors,
/// regressor, auxiliary input, and saturation.
pub fn proposed_control(
    cs: &ControllerState,
    state: &PlantState,
    reference: &RefSample,
    gains: &ControllerGains,
    plant: &dyn PlantModel,
    tau_max: f64,
) -> Result<(DVector<f64>, DVector<f64>, ControlDiagnostics)> {
    let e = &state.q - &reference.q;
    let edot = &state.qdot - &reference.qdot;
    let r = filtered_error(&e, &edot, gains.alpha);
    let w = barrier_weight(&r, gains.kappa)?;
    let y = plant.regressor(state);
    let bias = regressor_bias(reference, &edot, gains.alpha);
    let inertia = plant.inertia(&state.q);
    let v = auxiliary_input(&y, &bias, &cs.theta_hat, &r, &gains.k1, &inertia);
    let (tau, delta_tau) = saturate(&v, tau_max);
    let r_d = &r - &cs.r1;
    Ok((
        tau,
        delta_tau,
        ControlDiagnostics {
            e,
            edot,
            r,
            r_d,
            w,
            v,
            y,
            bias,
        },
    ))
}

/// Gains of the classical baseline. `k1` and `alpha` are shared with the
/// proposed controller in comparison runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalGains {
    pub k1: DMatrix<f64>,
    pub gamma_c: DMatrix<f64>,
    pub alpha: f64,
}

impl ClassicalGains {
    pub fn new(k1: DMatrix<f64>, gamma_c: DMatrix<f64>, alpha: f64) -> Result<Self> {
        require_spd(&k1, "K1")?;
        require_spd(&gamma_c, "Gamma_c")?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!(
                "filter gain alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self { k1, gamma_c, alpha })
    }

    pub fn isotropic(n: usize, m: usize, k1: f64, gamma_c: f64, alpha: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(n, n) * k1,
            DMatrix::identity(m, m) * gamma_c,
            alpha,
        )
    }
}

/// Classical adaptive baseline: `tau_c = M (-(Y theta_hat_c + bias) - K1 r)`
/// with gradient adaptation `theta_hat_c' = Gamma_c Y^T r`. No barrier, no
/// saturation.
pub fn classical_control(
    theta_hat_c: &DVector<f64>,
    state: &PlantState,
    reference: &RefSample,
    gains: &ClassicalGains,
    plant: &dyn PlantModel,
) -> (DVector<f64>, DVector<f64>) {
    let e = &state.q - &reference.q;
    let edot = &state.qdot - &reference.qdot;
    let r = filtered_error(&e, &edot, gains.alpha);
    let y = plant.regressor(state);
    let bias = regressor_bias(reference, &edot, gains.alpha);
    let inertia = plant.inertia(&state.q);
    let tau = auxiliary_input(&y, &bias, theta_hat_c, &r, &gains.k1, &inertia);
    let theta_hat_dot = &gains.gamma_c * (y.transpose() * r);
    (tau, theta_hat_dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::TwoLinkArm;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn scalar_gains(kappa: f64) -> ControllerGains {
        ControllerGains::isotropic(1, 1, 1.0, 1.0, 1.0, 1.0, 0.5, kappa).unwrap()
    }

    #[test]
    fn filtered_error_formula() {
        assert_relative_eq!(
            filtered_error(&dvector![0.0], &dvector![0.0], 0.6),
            dvector![0.0]
        );
        assert_relative_eq!(
            filtered_error(&dvector![1.0, 0.0], &dvector![0.0, 1.0], 0.6),
            dvector![0.6, 1.0]
        );
    }

    #[test]
    fn auxiliary_input_scalar_case() {
        // M = 2, Y theta_hat + bias = 3, K1 = 10, r = 0.1 -> v = 2 (-3 - 1) = -8
        let v = auxiliary_input(
            &dmatrix![1.0],
            &dvector![1.0],
            &dvector![2.0],
            &dvector![0.1],
            &dmatrix![10.0],
            &dmatrix![2.0],
        );
        assert_relative_eq!(v, dvector![-8.0], epsilon = 1e-14);
    }

    #[test]
    fn auxiliary_input_is_zero_at_the_quiescent_point() {
        let v = auxiliary_input(
            &dmatrix![0.3, 0.1; 0.2, 0.4],
            &dvector![0.0, 0.0],
            &dvector![0.0, 0.0],
            &dvector![0.0, 0.0],
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
        );
        assert_relative_eq!(v, dvector![0.0, 0.0]);
    }

    #[test]
    fn auxiliary_input_is_jointly_linear_in_estimate_and_error() {
        let y = dmatrix![0.3, 0.1; 0.2, 0.4];
        let bias = dvector![0.5, -0.2];
        let k1 = DMatrix::identity(2, 2) * 3.0;
        let m = dmatrix![2.0, 0.3; 0.3, 1.0];
        let eval =
            |theta: &DVector<f64>, r: &DVector<f64>| auxiliary_input(&y, &bias, theta, r, &k1, &m);
        let base = eval(&dvector![0.0, 0.0], &dvector![0.0, 0.0]);
        let a = eval(&dvector![1.0, -2.0], &dvector![0.4, 0.2]);
        let b = eval(&dvector![-0.5, 0.7], &dvector![-0.1, 0.9]);
        let combined = eval(
            &dvector![1.0 - 0.5, -2.0 + 0.7],
            &dvector![0.4 - 0.1, 0.2 + 0.9],
        );
        assert_relative_eq!(
            &combined - &base,
            (&a - &base) + (&b - &base),
            epsilon = 1e-12
        );
    }

    #[test]
    fn saturation_passes_through_small_inputs() {
        let (tau, dtau) = saturate(&dvector![1.0, -1.0], 5.0);
        assert_relative_eq!(tau, dvector![1.0, -1.0]);
        assert_relative_eq!(dtau, dvector![0.0, 0.0]);
    }

    #[test]
    fn saturation_clamps_one_channel() {
        let (tau, dtau) = saturate(&dvector![4.0, -1.0], 5.0);
        let limit = 5.0 / 2.0_f64.sqrt();
        assert_relative_eq!(tau, dvector![limit, -1.0], epsilon = 1e-14);
        assert_relative_eq!(dtau, dvector![limit - 4.0, 0.0], epsilon = 1e-14);
        assert!(tau.norm() <= 5.0);
    }

    #[test]
    fn saturation_is_continuous_at_zero() {
        let (tau, dtau) = saturate(&dvector![0.0, 0.0], 5.0);
        assert_relative_eq!(tau, dvector![0.0, 0.0]);
        assert_relative_eq!(dtau, dvector![0.0, 0.0]);
    }

    #[test]
    fn unsaturated_regime_decouples_the_input_constraint_machinery() {
        let gains = scalar_gains(1.0);
        let cs = ControllerState {
            theta_hat: dvector![0.3],
            kd: dmatrix![0.5],
            k2: dmatrix![0.2],
            r1: dvector![0.0],
        };
        let d =
            proposed_step_derivatives(&cs, &dvector![0.4], &dmatrix![2.0], &dvector![0.0], &gains)
                .unwrap();
        assert_relative_eq!(d.kd_dot, dmatrix![0.0]);
        assert_relative_eq!(d.k2_dot, dmatrix![0.0]);
        assert_relative_eq!(d.r1_dot, dvector![0.0]);
        assert!(d.theta_hat_dot[0].abs() > 0.0);
    }

    #[test]
    fn adaptation_is_quiescent_at_the_origin() {
        let gains = scalar_gains(1.0);
        let cs = ControllerState {
            theta_hat: dvector![0.3],
            kd: dmatrix![0.5],
            k2: dmatrix![0.2],
            r1: dvector![0.0],
        };
        let d =
            proposed_step_derivatives(&cs, &dvector![0.0], &dmatrix![2.0], &dvector![0.0], &gains)
                .unwrap();
        assert_relative_eq!(d.theta_hat_dot, dvector![0.0]);
        assert_relative_eq!(d.kd_dot, dmatrix![0.0]);
        assert_relative_eq!(d.k2_dot, dmatrix![0.0]);
        assert_relative_eq!(d.r1_dot, dvector![0.0]);
    }

    #[test]
    fn scalar_adaptive_law_example() {
        // kappa = 1, r = 0.5, r1 = 0.1, all gains 1, Y = 2, dtau = -0.3:
        // w = 4/3, r_d = 0.4, theta_hat' = 32/15, Kd' = 0.32, K2' = 0.2
        let gains = ControllerGains::isotropic(1, 1, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let cs = ControllerState {
            theta_hat: dvector![0.0],
            kd: dmatrix![0.0],
            k2: dmatrix![0.0],
            r1: dvector![0.1],
        };
        let d =
            proposed_step_derivatives(&cs, &dvector![0.5], &dmatrix![2.0], &dvector![-0.3], &gains)
                .unwrap();
        assert_relative_eq!(d.theta_hat_dot, dvector![32.0 / 15.0], epsilon = 1e-14);
        assert_relative_eq!(d.kd_dot, dmatrix![0.32], epsilon = 1e-14);
        assert_relative_eq!(d.k2_dot, dmatrix![0.2], epsilon = 1e-14);
        assert_relative_eq!(d.r1_dot, dvector![-0.1], epsilon = 1e-14);
    }

    #[test]
    fn barrier_guard_rejects_filtered_errors_at_the_radius() {
        let gains = scalar_gains(0.5625);
        let cs = ControllerState {
            theta_hat: dvector![0.0],
            kd: dmatrix![0.0],
            k2: dmatrix![0.0],
            r1: dvector![0.0],
        };
        let err = proposed_step_derivatives(
            &cs,
            &dvector![0.5625],
            &dmatrix![1.0],
            &dvector![0.0],
            &gains,
        )
        .unwrap_err();
        match err {
            Error::BarrierBreach { r_norm, kappa } => {
                assert_eq!(r_norm, 0.5625);
                assert_eq!(kappa, 0.5625);
            }
            other => panic!("expected barrier breach, got {other:?}"),
        }
        // inside the guard band counts as a breach too
        assert!(barrier_weight(&dvector![0.5625 * (1.0 - 1e-10)], 0.5625).is_err());
        assert!(barrier_weight(&dvector![0.5], 0.5625).is_ok());
    }

    #[test]
    fn perfect_tracking_with_true_parameters_cancels_the_plant_forces() {
        let plant = TwoLinkArm::benchmark();
        let state = PlantState::new(dvector![0.4, 1.0], dvector![0.3, -0.2]).unwrap();
        let reference = RefSample {
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            qddot: dvector![0.0, 0.0],
        };
        let gains = ControllerGains::isotropic(2, 3, 10.0, 10.0, 5.0, 5.0, 0.6, 0.5625).unwrap();
        let cs = ControllerState {
            theta_hat: plant.unknown_params(),
            kd: DMatrix::zeros(2, 2),
            k2: DMatrix::zeros(2, 2),
            r1: dvector![0.0, 0.0],
        };
        let (tau, dtau, diag) =
            proposed_control(&cs, &state, &reference, &gains, &plant, 1e9).unwrap();
        assert_relative_eq!(diag.r, dvector![0.0, 0.0], epsilon = 1e-14);
        assert_relative_eq!(dtau, dvector![0.0, 0.0]);
        let qdd = crate::plant::plant_acceleration(&plant, &state, &tau).unwrap();
        assert!(
            qdd.norm() < 1e-12,
            "acceleration {} should vanish",
            qdd.norm()
        );
    }

    #[test]
    fn control_norm_never_exceeds_the_input_bound() {
        let plant = TwoLinkArm::benchmark();
        let gains = ControllerGains::isotropic(2, 3, 10.0, 10.0, 5.0, 5.0, 0.6, 0.5625).unwrap();
        let cs = ControllerState::initialize(&plant, &dvector![0.0, 2.0], None).unwrap();
        let state = PlantState::new(dvector![0.3, 1.8], dvector![0.5, -0.4]).unwrap();
        let reference = RefSample {
            q: dvector![0.0, 2.0],
            qdot: dvector![0.5, 0.0],
            qddot: dvector![0.0, -0.125],
        };
        let (tau, _, _) = proposed_control(&cs, &state, &reference, &gains, &plant, 5.0).unwrap();
        assert!(tau.norm() <= 5.0 + 1e-12);
    }

    #[test]
    fn huge_input_bound_behaves_as_unsaturated() {
        let plant = TwoLinkArm::benchmark();
        let gains = ControllerGains::isotropic(2, 3, 10.0, 10.0, 5.0, 5.0, 0.6, 0.5625).unwrap();
        let cs = ControllerState::initialize(&plant, &dvector![0.0, 2.0], None).unwrap();
        let state = PlantState::new(dvector![0.3, 1.8], dvector![0.5, -0.4]).unwrap();
        let reference = RefSample {
            q: dvector![0.0, 2.0],
            qdot: dvector![0.5, 0.0],
            qddot: dvector![0.0, -0.125],
        };
        let (_, dtau, _) = proposed_control(&cs, &state, &reference, &gains, &plant, 1e12).unwrap();
        assert_relative_eq!(dtau, dvector![0.0, 0.0]);
    }

    #[test]
    fn classical_adaptation_stops_when_the_filtered_error_vanishes() {
        let plant = TwoLinkArm::benchmark();
        let gains = ClassicalGains::isotropic(2, 3, 10.0, 100.0, 0.6).unwrap();
        let state = PlantState::new(dvector![0.2, 0.5], dvector![0.1, -0.3]).unwrap();
        let reference = RefSample {
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            qddot: dvector![0.4, 0.1],
        };
        let (_, theta_dot) =
            classical_control(&dvector![0.0, 0.0, 0.0], &state, &reference, &gains, &plant);
        assert_relative_eq!(theta_dot, dvector![0.0, 0.0, 0.0], epsilon = 1e-14);
    }

    #[test]
    fn classical_scalar_adaptation_rate() {
        // engineered pendulum state with Y = (2, 0) and r = 0.5:
        // theta_hat_c' = Gamma_c Y^T r = (100, 0)
        let plant = crate::plant::Pendulum::new(1.0, 0.3, 0.7);
        let gains = ClassicalGains::isotropic(1, 2, 10.0, 100.0, 0.6).unwrap();
        let state = PlantState::new(dvector![0.0], dvector![-2.0]).unwrap();
        let reference = RefSample {
            q: dvector![0.0],
            qdot: dvector![-2.5],
            qddot: dvector![0.0],
        };
        assert_relative_eq!(plant.regressor(&state), dmatrix![2.0, 0.0]);
        let (_, theta_dot) =
            classical_control(&dvector![0.0, 0.0], &state, &reference, &gains, &plant);
        assert_relative_eq!(theta_dot, dvector![100.0, 0.0], epsilon = 1e-12);
    }

    #[test]
    fn classical_input_equals_proposed_auxiliary_input_for_identical_estimates() {
        let plant = TwoLinkArm::benchmark();
        let theta_hat = dvector![0.1, 2.0, 0.4];
        let state = PlantState::new(dvector![0.3, 1.2], dvector![0.4, -0.1]).unwrap();
        let reference = RefSample {
            q: dvector![0.1, 1.0],
            qdot: dvector![0.2, 0.1],
            qddot: dvector![-0.3, 0.2],
        };
        let cg = ClassicalGains::isotropic(2, 3, 10.0, 100.0, 0.6).unwrap();
        let pg = ControllerGains::isotropic(2, 3, 10.0, 10.0, 5.0, 5.0, 0.6, 10.0).unwrap();
        let cs = ControllerState {
            theta_hat: theta_hat.clone(),
            kd: DMatrix::zeros(2, 2),
            k2: DMatrix::zeros(2, 2),
            r1: dvector![0.0, 0.0],
        };
        let (tau_c, _) = classical_control(&theta_hat, &state, &reference, &cg, &plant);
        let (_, _, diag) = proposed_control(&cs, &state, &reference, &pg, &plant, 1e12).unwrap();
        assert_relative_eq!(tau_c, diag.v, epsilon = 1e-12);
    }

    #[test]
    fn gain_validation_rejects_alpha_above_the_limit() {
        let err = ControllerGains::isotropic(2, 3, 10.0, 10.0, 5.0, 5.0, 0.7, 0.5).unwrap_err();
        assert!(err.to_string().contains("gain condition"));
    }

    #[test]
    fn gain_validation_rejects_indefinite_matrices() {
        let err = ControllerGains::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            DMatrix::identity(3, 3),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            0.5,
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("positive definite"));
    }

    proptest! {
        #[test]
        fn filtered_error_triangle_inequality(
            e in proptest::collection::vec(-10.0f64..10.0, 1..6),
            edot_seed in proptest::collection::vec(-10.0f64..10.0, 1..6),
            alpha in 0.01f64..2.0,
        ) {
            let n = e.len().min(edot_seed.len());
            let e = DVector::from_row_slice(&e[..n]);
            let edot = DVector::from_row_slice(&edot_seed[..n]);
            let r = filtered_error(&e, &edot, alpha);
            prop_assert!(r.norm() <= edot.norm() + alpha * e.norm() + 1e-12);
        }

        #[test]
        fn saturation_properties(
            v in proptest::collection::vec(-100.0f64..100.0, 1..8),
            tau_max in 0.1f64..50.0,
        ) {
            let v = DVector::from_row_slice(&v);
            let limit = tau_max / (v.len() as f64).sqrt();
            let (tau, dtau) = saturate(&v, tau_max);
            // norm bound
            prop_assert!(tau.norm() <= tau_max + 1e-12);
            // dtau = 0 iff every channel is unsaturated
            let unsaturated = v.iter().all(|vi| vi.abs() <= limit);
            prop_assert_eq!(dtau.iter().all(|d| *d == 0.0), unsaturated);
            // per-channel sign preservation
            for i in 0..v.len() {
                prop_assert!(tau[i] * v[i] >= 0.0);
            }
        }
    }
}

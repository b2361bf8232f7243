//! Euler-Lagrange plant models and their regressor decompositions.
//!
//! Plants have the form `M(q) q'' + Vm(q, q') q' + Gr(q) + Fd q' = tau` with a
//! known inertia matrix `M` and unknown force channels. Each model supplies a
//! regressor `Y` so that `Y theta` captures exactly the unknown part of
//! `M^-1 (-Vm q' - Fd q' - Gr)`; controllers estimate `theta` online and never
//! read the true values.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Generalized positions and velocities of an n-link system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl PlantState {
    /// Both vectors must have the same length and finite entries.
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        if q.len() != qdot.len() {
            return Err(Error::Dimension {
                context: format!("q has {} entries but qdot has {}", q.len(), qdot.len()),
            });
        }
        ensure_finite(&q, "q")?;
        ensure_finite(&qdot, "qdot")?;
        Ok(Self { q, qdot })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

pub(crate) fn ensure_finite(v: &DVector<f64>, quantity: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            quantity: quantity.to_string(),
        })
    }
}

/// One sample of the desired trajectory: `(q_d, q_d', q_d'')`.
#[derive(Debug, Clone)]
pub struct RefSample {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
}

/// Smooth reference trajectories with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceTrajectory {
    /// `q_d[i](t) = amplitude[i] * sin(frequency[i] * t + phase[i])`.
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    },
    /// Fixed setpoint; both derivatives are zero.
    Constant { setpoint: Vec<f64> },
}

impl ReferenceTrajectory {
    pub fn dof(&self) -> usize {
        match self {
            ReferenceTrajectory::Sinusoid { amplitude, .. } => amplitude.len(),
            ReferenceTrajectory::Constant { setpoint } => setpoint.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceTrajectory::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                if amplitude.is_empty() {
                    return Err(Error::config("reference: amplitude must not be empty"));
                }
                if amplitude.len() != frequency.len() || amplitude.len() != phase.len() {
                    return Err(Error::Dimension {
                        context: format!(
                            "reference: amplitude ({}), frequency ({}) and phase ({}) must have equal lengths",
                            amplitude.len(),
                            frequency.len(),
                            phase.len()
                        ),
                    });
                }
                let all = amplitude.iter().chain(frequency).chain(phase);
                if all.clone().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        quantity: "reference parameters".into(),
                    });
                }
                Ok(())
            }
            ReferenceTrajectory::Constant { setpoint } => {
                if setpoint.is_empty() {
                    return Err(Error::config("reference: setpoint must not be empty"));
                }
                if setpoint.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        quantity: "reference setpoint".into(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, t: f64) -> RefSample {
        match self {
            ReferenceTrajectory::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let n = amplitude.len();
                let mut q = DVector::zeros(n);
                let mut qdot = DVector::zeros(n);
                let mut qddot = DVector::zeros(n);
                for i in 0..n {
                    let (a, f) = (amplitude[i], frequency[i]);
                    let arg = f * t + phase[i];
                    q[i] = a * arg.sin();
                    qdot[i] = a * f * arg.cos();
                    qddot[i] = -a * f * f * arg.sin();
                }
                RefSample { q, qdot, qddot }
            }
            ReferenceTrajectory::Constant { setpoint } => {
                let n = setpoint.len();
                RefSample {
                    q: DVector::from_row_slice(setpoint),
                    qdot: DVector::zeros(n),
                    qddot: DVector::zeros(n),
                }
            }
        }
    }

    /// Largest `||q_d||` and `||q_d'||` over the grid `t = 0, dt, ..., t_end`.
    pub fn suprema_on_grid(&self, t_end: f64, dt: f64) -> (f64, f64) {
        let mut sup_q: f64 = 0.0;
        let mut sup_qdot: f64 = 0.0;
        let steps = grid_steps(t_end, dt);
        for k in 0..=steps {
            let s = self.sample(k as f64 * dt);
            sup_q = sup_q.max(s.q.norm());
            sup_qdot = sup_qdot.max(s.qdot.norm());
        }
        (sup_q, sup_qdot)
    }
}

/// Number of integrator steps covering `[0, t_end]` with step `dt`.
pub(crate) fn grid_steps(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) + 1e-9).floor().max(0.0) as usize
}

/// A plant registered with the toolkit.
///
/// `forces` evaluates with the true physical parameters and is reserved for the
/// simulation side; controllers only consume `inertia` and `regressor`.
pub trait PlantModel: Send + Sync {
    /// Number of generalized coordinates n.
    fn dof(&self) -> usize;
    /// Number of unknown parameters m.
    fn param_count(&self) -> usize;
    /// Generalized inertia matrix `M(q)`, symmetric positive definite.
    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// Lumped non-inertial generalized force `Vm(q, q') q' + Fd q' + Gr(q)`.
    fn forces(&self, state: &PlantState) -> DVector<f64>;
    /// Regressor `Y` (n x m) with `Y theta = M^-1 (-Vm q' - Fd q' - Gr)` for
    /// the true parameter vector theta. Depends only on measurable signals.
    fn regressor(&self, state: &PlantState) -> DMatrix<f64>;
    /// True parameter vector theta; diagnostics and test oracles only.
    fn unknown_params(&self) -> DVector<f64>;
}

/// Joint acceleration from the manipulator equation:
/// solves `M(q) q'' = tau - (Vm q' + Fd q' + Gr)`.
pub fn plant_acceleration(
    plant: &dyn PlantModel,
    state: &PlantState,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    if tau.len() != state.dof() {
        return Err(Error::Dimension {
            context: format!(
                "tau has {} entries for a {}-dof plant",
                tau.len(),
                state.dof()
            ),
        });
    }
    ensure_finite(tau, "tau")?;
    let m = plant.inertia(&state.q);
    let rhs = tau - plant.forces(state);
    m.clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularInertia {
            det: m.determinant(),
        })
}

/// Known bias paired with the regressor: `b = -q_d'' + alpha e'`, so that
/// `Y theta + b = M^-1 (-Vm q' - Fd q' - Gr - M q_d'' + M alpha e')`.
///
/// The bias has no unknown factor, so it is carried outside `Y` and the
/// adaptive laws see only `Y`.
pub fn regressor_bias(reference: &RefSample, edot: &DVector<f64>, alpha: f64) -> DVector<f64> {
    edot * alpha - &reference.qddot
}

/// Planar two-link manipulator with viscous joint friction.
///
/// ```text
/// M(q)  = [ p1 + 2 p3 c2   p2 + p3 c2 ]      Vm(q, q') = [ -p3 s2 q2'   -p3 s2 (q1' + q2') ]
///         [ p2 + p3 c2     p2         ]                  [  p3 s2 q1'    0                 ]
/// ```
/// with `c2 = cos(q2)`, `s2 = sin(q2)`, friction `diag(fd1, fd2) q'` and no
/// gravity term. The controller estimates `theta = (p3, fd1, fd2)` through the
/// force channels; the inertia structure is known, so `p3` also appears there.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLinkArm {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub fd1: f64,
    pub fd2: f64,
}

impl TwoLinkArm {
    pub fn new(p1: f64, p2: f64, p3: f64, fd1: f64, fd2: f64) -> Self {
        Self {
            p1,
            p2,
            p3,
            fd1,
            fd2,
        }
    }

    /// Parameter set of the bundled `two_link_paper` benchmark scenario.
    pub fn benchmark() -> Self {
        Self::new(3.473, 0.196, 0.242, 5.3, 1.1)
    }

    /// Centripetal-Coriolis matrix `Vm(q, q')`.
    pub fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        let s2 = q[1].sin();
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -self.p3 * s2 * qdot[1],
                -self.p3 * s2 * (qdot[0] + qdot[1]),
                self.p3 * s2 * qdot[0],
                0.0,
            ],
        )
    }
}

impl PlantModel for TwoLinkArm {
    fn dof(&self) -> usize {
        2
    }

    fn param_count(&self) -> usize {
        3
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let c2 = q[1].cos();
        let off = self.p2 + self.p3 * c2;
        DMatrix::from_row_slice(2, 2, &[self.p1 + 2.0 * self.p3 * c2, off, off, self.p2])
    }

    fn forces(&self, state: &PlantState) -> DVector<f64> {
        let friction =
            DVector::from_column_slice(&[self.fd1 * state.qdot[0], self.fd2 * state.qdot[1]]);
        self.coriolis(&state.q, &state.qdot) * &state.qdot + friction
    }

    fn regressor(&self, state: &PlantState) -> DMatrix<f64> {
        let s2 = state.q[1].sin();
        let (q1d, q2d) = (state.qdot[0], state.qdot[1]);
        // Columns of U with U theta = -Vm q' - Fd q'; Y solves M Y = U.
        let u = DMatrix::from_row_slice(
            2,
            3,
            &[
                s2 * (2.0 * q1d * q2d + q2d * q2d),
                -q1d,
                0.0,
                -s2 * q1d * q1d,
                0.0,
                -q2d,
            ],
        );
        self.inertia(&state.q)
            .lu()
            .solve(&u)
            .expect("two-link inertia matrix is positive definite")
    }

    fn unknown_params(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.p3, self.fd1, self.fd2])
    }
}

/// Single-link pendulum `j q'' + b q' + mgl sin(q) = tau`.
///
/// Second registered model; exercises the n = 1, m = 2 shape where the gravity
/// channel is unknown (`theta = (b, mgl)`, inertia `j` known).
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub inertia: f64,
    pub damping: f64,
    pub gravity_torque: f64,
}

impl Pendulum {
    pub fn new(inertia: f64, damping: f64, gravity_torque: f64) -> Self {
        Self {
            inertia,
            damping,
            gravity_torque,
        }
    }
}

impl PlantModel for Pendulum {
    fn dof(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        2
    }

    fn inertia(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia)
    }

    fn forces(&self, state: &PlantState) -> DVector<f64> {
        DVector::from_element(
            1,
            self.damping * state.qdot[0] + self.gravity_torque * state.q[0].sin(),
        )
    }

    fn regressor(&self, state: &PlantState) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            1,
            2,
            &[
                -state.qdot[0] / self.inertia,
                -state.q[0].sin() / self.inertia,
            ],
        )
    }

    fn unknown_params(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.damping, self.gravity_torque])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> TwoLinkArm {
        TwoLinkArm::benchmark()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PlantState {
        let q = DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
        let qdot = DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
        PlantState::new(q, qdot).unwrap()
    }

    #[test]
    fn state_rejects_non_finite_and_mismatched_inputs() {
        assert!(matches!(
            PlantState::new(dvector![f64::NAN, 0.0], dvector![0.0, 0.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            PlantState::new(dvector![0.0], dvector![0.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn inertia_at_origin() {
        let m = arm().inertia(&dvector![0.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[3.957, 0.438, 0.438, 0.196]);
        assert_relative_eq!(m, expected, epsilon = 1e-12);
        // 2x2 eigenvalues via trace/determinant: both positive
        let (tr, det) = (m.trace(), m.determinant());
        let disc = (tr * tr - 4.0 * det).sqrt();
        assert!((tr - disc) / 2.0 > 0.0);
    }

    #[test]
    fn inertia_at_right_angle_drops_p3_terms() {
        let m = arm().inertia(&dvector![0.0, std::f64::consts::FRAC_PI_2]);
        let expected = DMatrix::from_row_slice(2, 2, &[3.473, 0.196, 0.196, 0.196]);
        assert_relative_eq!(m, expected, epsilon = 1e-12);
    }

    #[test]
    fn inertia_is_symmetric_and_positive_definite_over_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut min_eig = f64::INFINITY;
        let mut max_eig: f64 = 0.0;
        for _ in 0..10_000 {
            let q = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            let m = arm().inertia(&q);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
            let (tr, det) = (m.trace(), m.determinant());
            let disc = (tr * tr - 4.0 * det).sqrt();
            min_eig = min_eig.min((tr - disc) / 2.0);
            max_eig = max_eig.max((tr + disc) / 2.0);
        }
        // numerical stand-ins for the inertia bounds m1, m2
        assert!(min_eig >= 1e-6);
        assert!(min_eig <= max_eig);
    }

    #[test]
    fn forces_vanish_at_rest() {
        let state = PlantState::new(dvector![0.3, -1.2], dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(arm().forces(&state), dvector![0.0, 0.0], epsilon = 1e-15);
    }

    #[test]
    fn forces_hand_evaluated_sample() {
        let state = PlantState::new(
            dvector![0.0, std::f64::consts::FRAC_PI_2],
            dvector![1.0, 0.0],
        )
        .unwrap();
        assert_relative_eq!(arm().forces(&state), dvector![5.3, 0.242], epsilon = 1e-12);
    }

    #[test]
    fn coriolis_product_is_linear_in_the_multiplied_velocity() {
        let q = dvector![0.4, 1.1];
        let qdot_args = dvector![0.7, -0.3];
        let vm = arm().coriolis(&q, &qdot_args);
        let u = dvector![0.2, 0.9];
        assert_relative_eq!(&vm * (2.0 * &u), (&vm * &u) * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn acceleration_is_zero_at_unforced_rest() {
        let state = PlantState::new(dvector![0.5, 0.5], dvector![0.0, 0.0]).unwrap();
        let qdd = plant_acceleration(&arm(), &state, &dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(qdd, dvector![0.0, 0.0], epsilon = 1e-15);
    }

    #[test]
    fn acceleration_matches_closed_form_two_by_two_inverse() {
        let state = PlantState::new(dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap();
        let qdd = plant_acceleration(&arm(), &state, &dvector![1.0, 0.0]).unwrap();
        // [[3.957, 0.438], [0.438, 0.196]]^-1 (1, 0), inverted by hand
        let det = 3.957 * 0.196 - 0.438 * 0.438;
        assert_relative_eq!(qdd, dvector![0.196 / det, -0.438 / det], epsilon = 1e-12);
    }

    #[test]
    fn acceleration_rejects_non_finite_torque() {
        let state = PlantState::new(dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap();
        assert!(matches!(
            plant_acceleration(&arm(), &state, &dvector![f64::INFINITY, 0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn manipulator_equation_residual_is_tiny_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let state = random_state(&mut rng, 2, 3.0);
            let tau = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let qdd = plant_acceleration(&arm(), &state, &tau).unwrap();
            let residual = arm().inertia(&state.q) * qdd + arm().forces(&state) - tau;
            assert!(residual.norm() < 1e-10, "residual {}", residual.norm());
        }
    }

    // Oracle for the regressor decomposition: evaluates the right-hand side
    // M^-1 (-Vm q' - Fd q' - Gr - M qdd_d + M alpha e') directly from the true
    // parameters, independent of `regressor`.
    fn full_rhs(
        plant: &dyn PlantModel,
        state: &PlantState,
        reference: &RefSample,
        alpha: f64,
    ) -> DVector<f64> {
        let m = plant.inertia(&state.q);
        let edot = &state.qdot - &reference.qdot;
        let rhs = -plant.forces(state) - &m * &reference.qddot + &m * (edot * alpha);
        m.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn regressor_reconstructs_unknown_dynamics_for_both_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let models: [(Box<dyn PlantModel>, usize); 2] = [
            (Box::new(arm()), 2),
            (Box::new(Pendulum::new(1.7, 0.4, 2.2)), 1),
        ];
        for (plant, n) in &models {
            for _ in 0..1000 {
                let state = random_state(&mut rng, *n, 2.0);
                let reference = RefSample {
                    q: DVector::from_fn(*n, |_, _| rng.random_range(-1.0..1.0)),
                    qdot: DVector::from_fn(*n, |_, _| rng.random_range(-1.0..1.0)),
                    qddot: DVector::from_fn(*n, |_, _| rng.random_range(-1.0..1.0)),
                };
                let alpha = 0.6;
                let y = plant.regressor(&state);
                assert_eq!((y.nrows(), y.ncols()), (*n, plant.param_count()));
                let edot = &state.qdot - &reference.qdot;
                let lhs = y * plant.unknown_params() + regressor_bias(&reference, &edot, alpha);
                let rhs = full_rhs(plant.as_ref(), &state, &reference, alpha);
                assert!((lhs - rhs).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn regressor_bias_carries_the_parameter_free_part() {
        // theta = 0 leaves only b = -qdd_d + alpha e'
        let reference = RefSample {
            q: dvector![0.0, 0.0],
            qdot: dvector![0.0, 0.0],
            qddot: dvector![0.3, -0.1],
        };
        let edot = dvector![1.0, 2.0];
        let b = regressor_bias(&reference, &edot, 0.5);
        assert_relative_eq!(b, dvector![0.5 - 0.3, 1.0 + 0.1], epsilon = 1e-15);
    }

    #[test]
    fn regressor_with_matched_state_reduces_to_force_channels() {
        // q = q_d, q' = q_d', qdd_d = 0 makes e' = 0 and b = 0
        let state = PlantState::new(dvector![0.2, 1.4], dvector![0.8, -0.5]).unwrap();
        let reference = RefSample {
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            qddot: dvector![0.0, 0.0],
        };
        let plant = arm();
        let edot = &state.qdot - &reference.qdot;
        let b = regressor_bias(&reference, &edot, 0.6);
        assert_relative_eq!(b, dvector![0.0, 0.0], epsilon = 1e-15);
        let lhs = plant.regressor(&state) * plant.unknown_params();
        let m = plant.inertia(&state.q);
        let rhs = m.lu().solve(&(-plant.forces(&state))).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn sinusoid_reference_derivatives_are_consistent() {
        let reference = ReferenceTrajectory::Sinusoid {
            amplitude: vec![0.5, 2.0],
            frequency: vec![1.0, 0.25],
            phase: vec![0.0, std::f64::consts::FRAC_PI_2],
        };
        reference.validate().unwrap();
        // finite differences of q_d match qdot_d / qddot_d
        let h = 1e-6;
        for &t in &[0.0, 0.7, 3.3, 12.9] {
            let s = reference.sample(t);
            let plus = reference.sample(t + h);
            let minus = reference.sample(t - h);
            let fd_vel = (&plus.q - &minus.q) / (2.0 * h);
            let fd_acc = (&plus.qdot - &minus.qdot) / (2.0 * h);
            assert!((fd_vel - &s.qdot).norm() < 1e-8);
            assert!((fd_acc - &s.qddot).norm() < 1e-8);
        }
    }

    #[test]
    fn reference_validation_catches_length_mismatch() {
        let reference = ReferenceTrajectory::Sinusoid {
            amplitude: vec![1.0, 2.0],
            frequency: vec![1.0],
            phase: vec![0.0, 0.0],
        };
        assert!(matches!(reference.validate(), Err(Error::Dimension { .. })));
    }
}

//! Safe sets, transformed error bounds, and pre-run feasibility checks.
//!
//! The state constraints `||q|| < beta1`, `||q'|| < beta2` are strict; the
//! input constraint `||tau|| <= tau_max` is closed. With declared reference
//! bounds `alpha1 < beta1` and `alpha2 < beta2` the constraints transfer to the
//! tracking error through `delta_i = beta_i - alpha_i`, and the filtered error
//! must stay inside the barrier radius `kappa = alpha delta / (1 + alpha)` with
//! `delta = min(delta1, delta2)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{PlantState, ReferenceTrajectory};

/// User-defined norm bounds for the safe sets plus the declared reference
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    /// Position bound (strict): `||q|| < beta1`.
    pub beta1: f64,
    /// Velocity bound (strict): `||q'|| < beta2`.
    pub beta2: f64,
    /// Input bound (closed): `||tau|| <= tau_max`.
    pub tau_max: f64,
    /// Declared reference position bound, `0 < alpha1 < beta1`.
    pub alpha1: f64,
    /// Declared reference velocity bound, `0 < alpha2 < beta2`.
    pub alpha2: f64,
}

impl ConstraintSpec {
    /// Checks the strict inequalities; each failure names the inequality.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("tau_max", self.tau_max),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    quantity: format!("constraints.{name}"),
                });
            }
        }
        if self.alpha1 <= 0.0 {
            return Err(Error::config(format!(
                "constraints.alpha1: expected 0 < alpha1, got {}",
                self.alpha1
            )));
        }
        if self.alpha1 >= self.beta1 {
            return Err(Error::config(format!(
                "constraints.alpha1: the reference bound must satisfy alpha1 < beta1 strictly (alpha1 = {}, beta1 = {})",
                self.alpha1, self.beta1
            )));
        }
        if self.alpha2 <= 0.0 {
            return Err(Error::config(format!(
                "constraints.alpha2: expected 0 < alpha2, got {}",
                self.alpha2
            )));
        }
        if self.alpha2 >= self.beta2 {
            return Err(Error::config(format!(
                "constraints.alpha2: the reference bound must satisfy alpha2 < beta2 strictly (alpha2 = {}, beta2 = {})",
                self.alpha2, self.beta2
            )));
        }
        if self.tau_max <= 0.0 {
            return Err(Error::config(format!(
                "constraints.tau_max: expected tau_max > 0, got {}",
                self.tau_max
            )));
        }
        Ok(())
    }
}

/// Upper limit on the filter gain: `(-1 + sqrt(5)) / 2`.
pub fn alpha_gain_limit() -> f64 {
    (5.0_f64.sqrt() - 1.0) / 2.0
}

/// Error-space bounds derived from a constraint spec and a filter gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBounds {
    pub alpha: f64,
    /// `beta1 - alpha1`
    pub delta1: f64,
    /// `beta2 - alpha2`
    pub delta2: f64,
    /// `min(delta1, delta2)`
    pub delta: f64,
    /// Barrier radius `alpha delta / (1 + alpha)`.
    pub kappa: f64,
    /// Whether `0 < alpha < (-1 + sqrt(5)) / 2`.
    pub gain_ok: bool,
}

/// Derives `delta1`, `delta2`, `delta` and `kappa` and evaluates the gain
/// condition.
pub fn derive_error_bounds(spec: &ConstraintSpec, alpha: f64) -> Result<ErrorBounds> {
    spec.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!(
            "filter gain alpha must be positive, got {alpha}"
        )));
    }
    let delta1 = spec.beta1 - spec.alpha1;
    let delta2 = spec.beta2 - spec.alpha2;
    let delta = delta1.min(delta2);
    // evaluated as delta / (1 + alpha) * alpha so benchmark-style decimal
    // inputs reproduce their exact decimal kappa in f64
    let kappa = delta / (1.0 + alpha) * alpha;
    Ok(ErrorBounds {
        alpha,
        delta1,
        delta2,
        delta,
        kappa,
        gain_ok: alpha < alpha_gain_limit(),
    })
}

/// Which initial-condition bound failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IcBound {
    /// `||e(0)|| < kappa`
    PositionError,
    /// `||e'(0)|| < delta2`
    VelocityError,
    /// `||e'(0) + alpha e(0)|| < kappa`
    FilteredError,
}

/// Result of the initial-condition check, with the distance to each bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcCheck {
    pub pass: bool,
    /// `kappa - ||e(0)||`
    pub margin_e0: f64,
    /// `delta2 - ||e'(0)||`
    pub margin_edot0: f64,
    /// `kappa - ||r(0)||`
    pub margin_r0: f64,
    pub failed: Vec<IcBound>,
}

/// Pass iff `||e(0)|| < kappa`, `||e'(0)|| < delta2` and `||r(0)|| < kappa`
/// with `r(0) = e'(0) + alpha e(0)`.
///
/// The `r(0)` bound is strictly stronger than the `e'(0)` one whenever
/// `delta2 > kappa`, which is why it is checked separately.
pub fn check_initial_conditions(
    e0: &DVector<f64>,
    edot0: &DVector<f64>,
    bounds: &ErrorBounds,
) -> IcCheck {
    let r0 = edot0 + e0 * bounds.alpha;
    let margin_e0 = bounds.kappa - e0.norm();
    let margin_edot0 = bounds.delta2 - edot0.norm();
    let margin_r0 = bounds.kappa - r0.norm();
    let mut failed = Vec::new();
    if margin_e0 <= 0.0 {
        failed.push(IcBound::PositionError);
    }
    if margin_edot0 <= 0.0 {
        failed.push(IcBound::VelocityError);
    }
    if margin_r0 <= 0.0 {
        failed.push(IcBound::FilteredError);
    }
    IcCheck {
        pass: failed.is_empty(),
        margin_e0,
        margin_edot0,
        margin_r0,
        failed,
    }
}

/// Distance to each constraint boundary; see the violation predicates for the
/// open/closed distinction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margins {
    /// `beta1 - ||q||`
    pub position: f64,
    /// `beta2 - ||q'||`
    pub velocity: f64,
    /// `tau_max - ||tau||`
    pub input: f64,
}

impl Margins {
    /// State bounds are strict; a margin of exactly zero is a violation.
    pub fn position_violated(&self) -> bool {
        self.position <= 0.0
    }

    pub fn velocity_violated(&self) -> bool {
        self.velocity <= 0.0
    }

    /// The input bound is closed; zero margin is still admissible.
    pub fn input_violated(&self) -> bool {
        self.input < 0.0
    }

    pub fn any_violated(&self) -> bool {
        self.position_violated() || self.velocity_violated() || self.input_violated()
    }
}

/// Margins of a state/input pair against the safe sets.
pub fn constraint_margins(
    state: &PlantState,
    tau: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Margins {
    Margins {
        position: spec.beta1 - state.q.norm(),
        velocity: spec.beta2 - state.qdot.norm(),
        input: spec.tau_max - tau.norm(),
    }
}

/// Measured reference suprema against the declared bounds.
///
/// Sampled on the simulation grid, not derived symbolically. A failed flag is
/// reported as a warning by the runner; the declared `alpha1`, `alpha2` stay in
/// force for the feasibility algebra either way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceCheck {
    pub sup_q: f64,
    pub sup_qdot: f64,
    /// `sup_q <= alpha1`
    pub position_ok: bool,
    /// `sup_qdot <= alpha2`
    pub velocity_ok: bool,
}

/// Samples the reference over `[0, t_end]` with step `dt` and compares the
/// measured suprema with the declared bounds.
pub fn check_reference(
    reference: &ReferenceTrajectory,
    spec: &ConstraintSpec,
    t_end: f64,
    dt: f64,
) -> ReferenceCheck {
    let (sup_q, sup_qdot) = reference.suprema_on_grid(t_end, dt);
    ReferenceCheck {
        sup_q,
        sup_qdot,
        position_ok: sup_q <= spec.alpha1,
        velocity_ok: sup_qdot <= spec.alpha2,
    }
}

/// Everything the pre-run gate established, serialized into run summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub bounds: ErrorBounds,
    pub ic: IcCheck,
    pub reference: ReferenceCheck,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn benchmark_spec() -> ConstraintSpec {
        ConstraintSpec {
            beta1: 3.6,
            beta2: 2.1,
            tau_max: 5.0,
            alpha1: 2.0,
            alpha2: 0.6,
        }
    }

    #[test]
    fn benchmark_bounds_are_exact() {
        let b = derive_error_bounds(&benchmark_spec(), 0.6).unwrap();
        assert_eq!(b.delta1, 1.6);
        assert_eq!(b.delta2, 1.5);
        assert_eq!(b.delta, 1.5);
        assert_eq!(b.kappa, 0.5625);
        assert!(b.gain_ok);
    }

    #[test]
    fn gain_condition_rejects_alpha_above_the_limit() {
        let b = derive_error_bounds(&benchmark_spec(), 0.7).unwrap();
        assert!(!b.gain_ok);
        assert!(0.7 > alpha_gain_limit());
    }

    #[test]
    fn gain_condition_flips_at_the_limit() {
        let limit = alpha_gain_limit();
        assert!(
            derive_error_bounds(&benchmark_spec(), limit - 1e-12)
                .unwrap()
                .gain_ok
        );
        assert!(
            !derive_error_bounds(&benchmark_spec(), limit + 1e-12)
                .unwrap()
                .gain_ok
        );
    }

    #[test]
    fn degenerate_spec_names_the_failed_inequality() {
        let spec = ConstraintSpec {
            beta1: 2.0,
            ..benchmark_spec()
        };
        let err = derive_error_bounds(&spec, 0.6).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha1 < beta1"), "unexpected message: {msg}");
    }

    #[test]
    fn zero_initial_error_passes_with_full_margins() {
        let b = derive_error_bounds(&benchmark_spec(), 0.6).unwrap();
        let ic = check_initial_conditions(&dvector![0.0, 0.0], &dvector![0.0, 0.0], &b);
        assert!(ic.pass);
        assert_relative_eq!(ic.margin_e0, b.kappa);
        assert_relative_eq!(ic.margin_edot0, b.delta2);
        assert_relative_eq!(ic.margin_r0, b.kappa);
    }

    #[test]
    fn position_error_just_below_kappa_passes_and_above_fails() {
        let b = derive_error_bounds(&benchmark_spec(), 0.6).unwrap();
        let pass = check_initial_conditions(&dvector![0.56, 0.0], &dvector![0.0, 0.0], &b);
        assert!(pass.pass);
        let fail = check_initial_conditions(&dvector![0.57, 0.0], &dvector![0.0, 0.0], &b);
        assert!(!fail.pass);
        assert_eq!(fail.failed, vec![IcBound::PositionError]);
    }

    #[test]
    fn filtered_error_bound_is_stricter_than_the_velocity_bound() {
        let b = derive_error_bounds(&benchmark_spec(), 0.6).unwrap();
        // ||e'(0)|| = 0.6 < delta2 yet r(0) = e'(0) breaks the kappa bound
        let ic = check_initial_conditions(&dvector![0.0, 0.0], &dvector![0.6, 0.0], &b);
        assert!(!ic.pass);
        assert_eq!(ic.failed, vec![IcBound::FilteredError]);
    }

    #[test]
    fn margins_at_the_origin_equal_the_constraint_levels() {
        let state = PlantState::new(dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap();
        let m = constraint_margins(&state, &dvector![0.0, 0.0], &benchmark_spec());
        assert_eq!((m.position, m.velocity, m.input), (3.6, 2.1, 5.0));
        assert!(!m.any_violated());
    }

    #[test]
    fn state_bound_is_strict_but_input_bound_is_closed() {
        let state = PlantState::new(dvector![3.6, 0.0], dvector![0.0, 0.0]).unwrap();
        let m = constraint_margins(&state, &dvector![5.0, 0.0], &benchmark_spec());
        assert_eq!(m.position, 0.0);
        assert!(m.position_violated());
        assert_eq!(m.input, 0.0);
        assert!(!m.input_violated());
    }

    #[test]
    fn velocity_transfer_factor_stays_below_one_across_the_admissible_range() {
        // (alpha^2 + 2 alpha) / (1 + alpha) < 1 for every admissible alpha
        let limit = alpha_gain_limit();
        for k in 1..1000 {
            let alpha = limit * k as f64 / 1000.0;
            let factor = (alpha * alpha + 2.0 * alpha) / (1.0 + alpha);
            assert!(factor < 1.0, "alpha = {alpha} gives factor {factor}");
        }
    }

    #[test]
    fn reference_suprema_flag_only_the_violated_bound() {
        let reference = ReferenceTrajectory::Sinusoid {
            amplitude: vec![0.5, 2.0],
            frequency: vec![1.0, 0.25],
            phase: vec![0.0, std::f64::consts::FRAC_PI_2],
        };
        let check = check_reference(&reference, &benchmark_spec(), 30.0, 1e-3);
        assert!(check.position_ok, "sup_q = {}", check.sup_q);
        assert!(!check.velocity_ok, "sup_qdot = {}", check.sup_qdot);
        assert!(check.sup_qdot > 0.7 && check.sup_qdot < 0.71);
    }

    proptest! {
        #[test]
        fn kappa_is_always_below_delta(
            beta1 in 0.2f64..50.0,
            beta2 in 0.2f64..50.0,
            gap1 in 0.01f64..0.99,
            gap2 in 0.01f64..0.99,
            alpha in 0.01f64..20.0,
        ) {
            let spec = ConstraintSpec {
                beta1,
                beta2,
                tau_max: 1.0,
                alpha1: beta1 * gap1,
                alpha2: beta2 * gap2,
            };
            let b = derive_error_bounds(&spec, alpha).unwrap();
            prop_assert!(b.kappa > 0.0);
            prop_assert!(b.kappa < b.delta);
        }

        #[test]
        fn bounds_grow_weakly_with_beta1(
            beta1 in 1.0f64..10.0,
            bump in 0.0f64..5.0,
            alpha in 0.05f64..0.6,
        ) {
            let spec = ConstraintSpec { beta1, beta2: 2.1, tau_max: 5.0, alpha1: 0.5, alpha2: 0.6 };
            let wider = ConstraintSpec { beta1: beta1 + bump, ..spec };
            let a = derive_error_bounds(&spec, alpha).unwrap();
            let b = derive_error_bounds(&wider, alpha).unwrap();
            prop_assert!(b.delta1 >= a.delta1);
            prop_assert!(b.delta >= a.delta);
            prop_assert!(b.kappa >= a.kappa);
        }
    }
}

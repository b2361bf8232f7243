//! Scenario files, batch execution, comparison runs, and CSV/report emission.
//!
//! A scenario is a single TOML file with explicit keys for every physical
//! value; only the `[sim]` grid section has defaults. The trajectory CSV
//! column contract is fixed:
//!
//! ```text
//! t, q1..qn, qd1..qdn, qdot1..qdotn, e_norm, edot_norm, r_norm,
//! tau1..taun, tau_norm, dtau_norm, V, Vdot_analytic,
//! margin_q, margin_qdot, margin_tau, theta_hat1..theta_hatm
//! ```
//!
//! with every number printed to 17 significant digits, enough to round-trip
//! f64 exactly.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{ClassicalGains, ControllerGains};
use crate::error::{Error, Result};
use crate::feasibility::{derive_error_bounds, ConstraintSpec, ErrorBounds, FeasibilityReport};
use crate::plant::{Pendulum, PlantModel, ReferenceTrajectory, TwoLinkArm};
use crate::sim::{
    run_classical, run_proposed, RunArtifacts, RunOutcome, RunSetup, SimConfig, TrajectoryLog,
};

/// Which controller(s) a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Proposed,
    Classical,
    Both,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Proposed => "proposed",
            Mode::Classical => "classical",
            Mode::Both => "both",
        };
        f.write_str(name)
    }
}

/// A single controller arm of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Proposed,
    Classical,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Proposed => "proposed",
            Arm::Classical => "classical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSection {
    TwoLink {
        p1: f64,
        p2: f64,
        p3: f64,
        fd1: f64,
        fd2: f64,
    },
    Pendulum {
        inertia: f64,
        damping: f64,
        gravity_torque: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSection {
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    },
    Constant {
        setpoint: Vec<f64>,
    },
}

/// Scalar gains; each expands to `value * I` of the appropriate size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    pub alpha: f64,
    pub k1: f64,
    pub gamma: f64,
    pub gamma_d: f64,
    pub gamma_2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalSection {
    pub gamma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<f64>>,
}

/// Parsed scenario file. Construction goes through [`Scenario`], which
/// validates every cross-field invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mode: Mode,
    pub plant: PlantSection,
    pub constraints: ConstraintSpec,
    pub reference: ReferenceSection,
    pub gains: GainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical: Option<ClassicalSection>,
    pub initial: InitialSection,
    #[serde(default)]
    pub sim: SimConfig,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    file: ScenarioFile,
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        validate(&file)?;
        Ok(Self { file })
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    /// Canonical serialized form; `from_toml` followed by `canonical_toml` is
    /// idempotent.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(&self.file).expect("scenario serializes")
    }

    pub fn mode(&self) -> Mode {
        self.file.mode
    }

    pub fn dof(&self) -> usize {
        match &self.file.plant {
            PlantSection::TwoLink { .. } => 2,
            PlantSection::Pendulum { .. } => 1,
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.file.plant {
            PlantSection::TwoLink { .. } => 3,
            PlantSection::Pendulum { .. } => 2,
        }
    }

    pub fn build_plant(&self) -> Box<dyn PlantModel> {
        match &self.file.plant {
            PlantSection::TwoLink {
                p1,
                p2,
                p3,
                fd1,
                fd2,
            } => Box::new(TwoLinkArm::new(*p1, *p2, *p3, *fd1, *fd2)),
            PlantSection::Pendulum {
                inertia,
                damping,
                gravity_torque,
            } => Box::new(Pendulum::new(*inertia, *damping, *gravity_torque)),
        }
    }

    pub fn reference(&self) -> ReferenceTrajectory {
        match &self.file.reference {
            ReferenceSection::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => ReferenceTrajectory::Sinusoid {
                amplitude: amplitude.clone(),
                frequency: frequency.clone(),
                phase: phase.clone(),
            },
            ReferenceSection::Constant { setpoint } => ReferenceTrajectory::Constant {
                setpoint: setpoint.clone(),
            },
        }
    }

    pub fn error_bounds(&self) -> Result<ErrorBounds> {
        derive_error_bounds(&self.file.constraints, self.file.gains.alpha)
    }

    pub fn controller_gains(&self) -> Result<ControllerGains> {
        let g = &self.file.gains;
        ControllerGains::isotropic(
            self.dof(),
            self.param_count(),
            g.k1,
            g.gamma,
            g.gamma_d,
            g.gamma_2,
            g.alpha,
            self.error_bounds()?.kappa,
        )
    }

    pub fn classical_gains(&self) -> Result<ClassicalGains> {
        let section = self.file.classical.ok_or_else(|| {
            Error::config("classical: section required for classical or comparison runs")
        })?;
        ClassicalGains::isotropic(
            self.dof(),
            self.param_count(),
            self.file.gains.k1,
            section.gamma_c,
            self.file.gains.alpha,
        )
    }

    fn run_setup<'a>(
        &'a self,
        plant: &'a dyn PlantModel,
        reference: &'a ReferenceTrajectory,
    ) -> RunSetup<'a> {
        RunSetup {
            plant,
            reference,
            constraints: &self.file.constraints,
            q0: DVector::from_row_slice(&self.file.initial.q),
            qdot0: DVector::from_row_slice(&self.file.initial.qdot),
            theta_hat0: self
                .file
                .initial
                .theta_hat
                .as_ref()
                .map(|v| DVector::from_row_slice(v)),
            sim: self.file.sim,
        }
    }

    /// Runs one controller arm of this scenario.
    pub fn run(&self, arm: Arm) -> Result<RunArtifacts> {
        let plant = self.build_plant();
        let reference = self.reference();
        let setup = self.run_setup(plant.as_ref(), &reference);
        match arm {
            Arm::Proposed => run_proposed(&setup, &self.controller_gains()?),
            Arm::Classical => run_classical(&setup, &self.classical_gains()?),
        }
    }
}

fn validate(file: &ScenarioFile) -> Result<()> {
    let n = match &file.plant {
        PlantSection::TwoLink { .. } => 2,
        PlantSection::Pendulum { .. } => 1,
    };
    let m = match &file.plant {
        PlantSection::TwoLink { .. } => 3,
        PlantSection::Pendulum { .. } => 2,
    };

    for (name, value) in plant_params(&file.plant) {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                quantity: format!("plant.{name}"),
            });
        }
    }

    file.constraints.validate()?;

    let reference_dof = match &file.reference {
        ReferenceSection::Sinusoid {
            amplitude,
            frequency,
            phase,
        } => {
            if amplitude.len() != frequency.len() || amplitude.len() != phase.len() {
                return Err(Error::config(
                    "reference: amplitude, frequency and phase must have equal lengths",
                ));
            }
            amplitude.len()
        }
        ReferenceSection::Constant { setpoint } => setpoint.len(),
    };
    if reference_dof != n {
        return Err(Error::config(format!(
            "reference: expected {n} channels for the selected plant, got {reference_dof}"
        )));
    }

    let bounds = derive_error_bounds(&file.constraints, file.gains.alpha)?;
    if !bounds.gain_ok {
        return Err(Error::config(format!(
            "gains.alpha = {} violates the filter gain condition 0 < alpha < (-1 + sqrt(5))/2 ~= {:.6}",
            file.gains.alpha,
            crate::feasibility::alpha_gain_limit()
        )));
    }
    for (name, value) in [
        ("k1", file.gains.k1),
        ("gamma", file.gains.gamma),
        ("gamma_d", file.gains.gamma_d),
        ("gamma_2", file.gains.gamma_2),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::config(format!(
                "gains.{name}: expected a positive value, got {value}"
            )));
        }
    }

    if file.initial.q.len() != n || file.initial.qdot.len() != n {
        return Err(Error::config(format!(
            "initial: q and qdot must each have {n} entries for the selected plant"
        )));
    }
    if file
        .initial
        .q
        .iter()
        .chain(&file.initial.qdot)
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite {
            quantity: "initial state".into(),
        });
    }
    if let Some(theta) = &file.initial.theta_hat {
        if theta.len() != m {
            return Err(Error::config(format!(
                "initial.theta_hat: expected {m} entries for the selected plant, got {}",
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "initial.theta_hat".into(),
            });
        }
    }

    match file.mode {
        Mode::Proposed => {}
        Mode::Classical | Mode::Both => {
            let section = file.classical.as_ref().ok_or_else(|| {
                Error::config(format!(
                    "mode = \"{}\" requires a [classical] section",
                    file.mode
                ))
            })?;
            if !(section.gamma_c > 0.0 && section.gamma_c.is_finite()) {
                return Err(Error::config(format!(
                    "classical.gamma_c: expected a positive value, got {}",
                    section.gamma_c
                )));
            }
        }
    }

    file.sim.validate()?;
    Ok(())
}

fn plant_params(plant: &PlantSection) -> Vec<(&'static str, f64)> {
    match plant {
        PlantSection::TwoLink {
            p1,
            p2,
            p3,
            fd1,
            fd2,
        } => vec![
            ("p1", *p1),
            ("p2", *p2),
            ("p3", *p3),
            ("fd1", *fd1),
            ("fd2", *fd2),
        ],
        PlantSection::Pendulum {
            inertia,
            damping,
            gravity_torque,
        } => vec![
            ("inertia", *inertia),
            ("damping", *damping),
            ("gravity_torque", *gravity_torque),
        ],
    }
}

/// Machine-readable record of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub controller: &'static str,
    pub feasibility: FeasibilityReport,
    pub outcome: RunOutcome,
}

impl RunSummary {
    pub fn new(arm: Arm, artifacts: &RunArtifacts) -> Self {
        Self {
            controller: arm.name(),
            feasibility: artifacts.feasibility.clone(),
            outcome: artifacts.outcome.clone(),
        }
    }
}

/// Juxtaposed outcome of a proposed-vs-classical comparison run.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub proposed: RunSummary,
    pub classical: RunSummary,
    /// The baseline reuses `K1` and `alpha` from `[gains]`.
    pub shared_k1: bool,
    /// True iff the proposed run completed without any constraint violation.
    pub proposed_within_constraints: bool,
}

/// Runs both controllers from identical initial conditions (in parallel) and
/// juxtaposes the outcomes. Requires `mode = "both"`.
pub fn run_compare(scenario: &Scenario) -> Result<(ComparisonReport, RunArtifacts, RunArtifacts)> {
    if scenario.mode() != Mode::Both {
        return Err(Error::config(format!(
            "compare requires mode = \"both\", scenario declares \"{}\"",
            scenario.mode()
        )));
    }
    let (proposed, classical) = std::thread::scope(|scope| {
        let p = scope.spawn(|| scenario.run(Arm::Proposed));
        let c = scope.spawn(|| scenario.run(Arm::Classical));
        (
            p.join().expect("proposed run panicked"),
            c.join().expect("classical run panicked"),
        )
    });
    let proposed = proposed?;
    let classical = classical?;
    let report = ComparisonReport {
        proposed: RunSummary::new(Arm::Proposed, &proposed),
        classical: RunSummary::new(Arm::Classical, &classical),
        shared_k1: true,
        proposed_within_constraints: proposed.outcome.status == crate::sim::RunStatus::Completed,
    };
    Ok((report, proposed, classical))
}

/// 17 significant digits; round-trips f64 exactly.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header of the trajectory CSV for an n-dof, m-parameter run.
pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((1..=n).map(|i| format!("q{i}")));
    cols.extend((1..=n).map(|i| format!("qd{i}")));
    cols.extend((1..=n).map(|i| format!("qdot{i}")));
    cols.extend(["e_norm".into(), "edot_norm".into(), "r_norm".into()]);
    cols.extend((1..=n).map(|i| format!("tau{i}")));
    cols.extend([
        "tau_norm".into(),
        "dtau_norm".into(),
        "V".into(),
        "Vdot_analytic".into(),
        "margin_q".into(),
        "margin_qdot".into(),
        "margin_tau".into(),
    ]);
    cols.extend((1..=m).map(|i| format!("theta_hat{i}")));
    cols.join(",")
}

/// Writes the trajectory CSV per the column contract.
pub fn emit_csv(log: &TrajectoryLog, n: usize, m: usize, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", csv_header(n, m))?;
    for row in &log.rows {
        let mut fields: Vec<String> = Vec::with_capacity(11 + 4 * n + m);
        fields.push(fmt17(row.t));
        fields.extend(row.q.iter().map(|x| fmt17(*x)));
        fields.extend(row.q_d.iter().map(|x| fmt17(*x)));
        fields.extend(row.qdot.iter().map(|x| fmt17(*x)));
        fields.push(fmt17(row.e.norm()));
        fields.push(fmt17(row.edot.norm()));
        fields.push(fmt17(row.r.norm()));
        fields.extend(row.tau.iter().map(|x| fmt17(*x)));
        fields.push(fmt17(row.tau.norm()));
        fields.push(fmt17(row.delta_tau.norm()));
        fields.push(fmt17(row.lyapunov));
        fields.push(fmt17(row.lyapunov_rate));
        fields.push(fmt17(row.margins.position));
        fields.push(fmt17(row.margins.velocity));
        fields.push(fmt17(row.margins.input));
        fields.extend(row.theta_hat.iter().map(|x| fmt17(*x)));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a run summary as pretty-printed JSON.
pub fn emit_summary(summary: &RunSummary, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    Ok(())
}

/// Writes a comparison report as pretty-printed JSON.
pub fn emit_comparison(report: &ComparisonReport, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    Ok(())
}

/// Writes per-figure CSV slices (filtered error, tracking error, positions,
/// velocities, input) with their constraint levels, for external plotting.
pub fn emit_figures(
    log: &TrajectoryLog,
    bounds: &ErrorBounds,
    spec: &ConstraintSpec,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let n = log.rows.first().map_or(0, |r| r.q.len());

    let slice = |name: &str,
                 header: Vec<String>,
                 rows: &dyn Fn(&crate::sim::LogRow) -> Vec<f64>|
     -> Result<()> {
        let file = fs::File::create(dir.join(name))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", header.join(","))?;
        for row in &log.rows {
            let fields: Vec<String> = rows(row).into_iter().map(fmt17).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    };

    slice(
        "fig1_filtered_error.csv",
        vec!["t".into(), "r_norm".into(), "kappa".into()],
        &|r| vec![r.t, r.r.norm(), bounds.kappa],
    )?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("e{i}")));
    header.extend(["e_norm".into(), "delta1".into()]);
    slice("fig2_tracking_error.csv", header, &|r| {
        let mut v = vec![r.t];
        v.extend(r.e.iter().copied());
        v.push(r.e.norm());
        v.push(bounds.delta1);
        v
    })?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.extend((1..=n).map(|i| format!("qd{i}")));
    header.extend(["q_norm".into(), "beta1".into()]);
    slice("fig3_position.csv", header, &|r| {
        let mut v = vec![r.t];
        v.extend(r.q.iter().copied());
        v.extend(r.q_d.iter().copied());
        v.push(r.q.norm());
        v.push(spec.beta1);
        v
    })?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("qdot{i}")));
    header.extend((1..=n).map(|i| format!("qdotd{i}")));
    header.extend(["qdot_norm".into(), "beta2".into()]);
    slice("fig4_velocity.csv", header, &|r| {
        let mut v = vec![r.t];
        v.extend(r.qdot.iter().copied());
        v.extend(r.qdot_d.iter().copied());
        v.push(r.qdot.norm());
        v.push(spec.beta2);
        v
    })?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("tau{i}")));
    header.extend(["tau_norm".into(), "tau_max".into()]);
    slice("fig5_input.csv", header, &|r| {
        let mut v = vec![r.t];
        v.extend(r.tau.iter().copied());
        v.push(r.tau.norm());
        v.push(spec.tau_max);
        v
    })?;

    Ok(())
}

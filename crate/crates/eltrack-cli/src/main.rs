//! Command-line runner for constrained adaptive tracking scenarios.
//!
//! Exit codes: 0 completed with no violations, 2 constraint violation,
//! 3 barrier breach, 4 numeric failure, 5 configuration or parse error,
//! 1 I/O or other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eltrack::runner::{
    emit_comparison, emit_csv, emit_figures, emit_summary, load_scenario, run_compare, Arm, Mode,
    RunSummary, Scenario,
};
use eltrack::sim::{RunArtifacts, RunStatus};
use eltrack::Error;

#[derive(Parser)]
#[command(
    name = "eltrack",
    about = "Simulate adaptive tracking controllers for Euler-Lagrange systems under state and input constraints",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Proposed,
    Classical,
    Both,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Scenario file (TOML)
    scenario: PathBuf,
    /// Output directory (default: out)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the integration step (s)
    #[arg(long)]
    dt: Option<f64>,
    /// Override the horizon (s)
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Also write per-figure CSV slices
    #[arg(long)]
    figures: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller(s) selected by the scenario (or --controller)
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the scenario's controller mode
        #[arg(long)]
        controller: Option<ControllerArg>,
    },
    /// Run both controllers from identical initial conditions and compare
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Completed => 0,
        RunStatus::ConstraintViolation => 2,
        RunStatus::BarrierBreach => 3,
        RunStatus::NumericFailure => 4,
    }
}

fn error_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::Dimension { .. } | Error::NonFinite { .. } => 5,
        _ => 1,
    }
}

fn describe(arm: Arm, artifacts: &RunArtifacts) {
    let o = &artifacts.outcome;
    println!(
        "{}: {:?} | peak |r| {:.4} | peak |e| {:.4} | peak |q| {:.4} | peak |qdot| {:.4} | peak |tau| {:.4}",
        arm.name(),
        o.status,
        o.peak_r_norm,
        o.peak_e_norm,
        o.peak_q_norm,
        o.peak_qdot_norm,
        o.peak_tau_norm,
    );
    if let Some(v) = &o.first_violation {
        println!(
            "{}: first violation at t = {:.3} s on the {:?} channel",
            arm.name(),
            v.t,
            v.channel
        );
    }
    if let Some(f) = &o.failure {
        println!("{}: aborted: {f}", arm.name());
    }
    let reference = &artifacts.feasibility.reference;
    if !reference.position_ok {
        println!(
            "{}: warning: measured reference supremum |q_d| = {:.6} exceeds the declared alpha1",
            arm.name(),
            reference.sup_q
        );
    }
    if !reference.velocity_ok {
        println!(
            "{}: warning: measured reference supremum |q_d'| = {:.6} exceeds the declared alpha2",
            arm.name(),
            reference.sup_qdot
        );
    }
}

fn write_run_outputs(
    arm: Arm,
    artifacts: &RunArtifacts,
    scenario: &Scenario,
    out_dir: &Path,
    figures: bool,
) -> Result<(), Error> {
    let dir = out_dir.join(arm.name());
    std::fs::create_dir_all(&dir)?;
    emit_csv(
        &artifacts.log,
        scenario.dof(),
        scenario.param_count(),
        dir.join("trajectory.csv"),
    )?;
    emit_summary(&RunSummary::new(arm, artifacts), dir.join("summary.json"))?;
    if figures {
        emit_figures(
            &artifacts.log,
            &artifacts.feasibility.bounds,
            &scenario.file().constraints,
            dir.join("figures"),
        )?;
    }
    println!("{}: outputs in {}", arm.name(), dir.display());
    Ok(())
}

fn apply_overrides(
    scenario: Scenario,
    dt: Option<f64>,
    t_end: Option<f64>,
) -> Result<Scenario, Error> {
    if dt.is_none() && t_end.is_none() {
        return Ok(scenario);
    }
    let mut file = scenario.file().clone();
    if let Some(dt) = dt {
        file.sim.dt = dt;
    }
    if let Some(t_end) = t_end {
        file.sim.t_end = t_end;
    }
    Scenario::from_file(file)
}

fn cmd_run(common: &CommonArgs, controller: Option<ControllerArg>) -> Result<u8, Error> {
    let scenario = apply_overrides(load_scenario(&common.scenario)?, common.dt, common.t_end)?;
    let arms: Vec<Arm> = match controller {
        Some(ControllerArg::Proposed) => vec![Arm::Proposed],
        Some(ControllerArg::Classical) => vec![Arm::Classical],
        Some(ControllerArg::Both) => vec![Arm::Proposed, Arm::Classical],
        None => match scenario.mode() {
            Mode::Proposed => vec![Arm::Proposed],
            Mode::Classical => vec![Arm::Classical],
            Mode::Both => vec![Arm::Proposed, Arm::Classical],
        },
    };
    let mut code = 0u8;
    for arm in arms {
        let artifacts = scenario.run(arm)?;
        describe(arm, &artifacts);
        write_run_outputs(arm, &artifacts, &scenario, &common.out, common.figures)?;
        code = code.max(status_code(artifacts.outcome.status));
    }
    Ok(code)
}

fn cmd_compare(common: &CommonArgs) -> Result<u8, Error> {
    let scenario = apply_overrides(load_scenario(&common.scenario)?, common.dt, common.t_end)?;
    let (report, proposed, classical) = run_compare(&scenario)?;
    describe(Arm::Proposed, &proposed);
    describe(Arm::Classical, &classical);
    std::fs::create_dir_all(&common.out)?;
    write_run_outputs(
        Arm::Proposed,
        &proposed,
        &scenario,
        &common.out,
        common.figures,
    )?;
    write_run_outputs(
        Arm::Classical,
        &classical,
        &scenario,
        &common.out,
        common.figures,
    )?;
    emit_comparison(&report, common.out.join("comparison.json"))?;
    println!(
        "comparison: proposed within constraints: {} | classical first violation: {}",
        report.proposed_within_constraints,
        report
            .classical
            .outcome
            .first_violation
            .map_or("none".to_string(), |v| format!(
                "t = {:.3} s ({:?})",
                v.t, v.channel
            )),
    );
    // exit reflects the proposed run only; the baseline is expected to violate
    Ok(status_code(proposed.outcome.status))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, controller } => cmd_run(common, *controller),
        Command::Compare { common } => cmd_compare(common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(error_code(&err))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use switchdwell::runner::run_scenario;
use switchdwell::scenario::{load_scenario_text, parse_scenario_with, Overrides, Scenario};
use switchdwell::{Error, Result};

/// Dwell times and trajectory verification for switched systems.
#[derive(Parser)]
#[command(name = "switchdwell", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise dwell table, mu(eps) and the global dwell time
    Dwell(Common),
    /// Simulate every signal from every initial point
    Simulate(Common),
    /// Trapping and convergence checks on simulated trajectories
    Verify(Common),
    /// Sampled Lyapunov certificate check
    Certify(Common),
    /// Direct versus detour travel time
    Triangle(Common),
    /// Trajectory, region and switch-point CSVs for plotting
    PlotData(Common),
    /// Every analysis the scenario requests
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or builtin:<example1|example2|sharpness|attractor>
    #[arg(long)]
    scenario: String,
    /// Output directory
    #[arg(long, default_value = "switchdwell-out")]
    out: PathBuf,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn only(s: &mut Scenario, keep: impl Fn(&mut switchdwell::scenario::Analyses)) {
    let a = &mut s.analysis;
    a.certify = false;
    a.dwell = false;
    a.simulate = false;
    a.trapping = false;
    a.convergence = false;
    a.triangle = false;
    a.tube = false;
    a.plot_data = false;
    keep(a);
}

fn prepare(cmd: &Command) -> Result<(Scenario, &Common)> {
    let common = match cmd {
        Command::Dwell(c)
        | Command::Simulate(c)
        | Command::Verify(c)
        | Command::Certify(c)
        | Command::Triangle(c)
        | Command::PlotData(c)
        | Command::Run(c) => c,
    };
    let text = load_scenario_text(&common.scenario)?;
    let overrides = Overrides {
        eps: common.eps,
        step: common.step,
        seed: common.seed,
    };
    let mut s = parse_scenario_with(&text, overrides)?;
    let requested = s.analysis.clone();
    match cmd {
        Command::Dwell(_) => only(&mut s, |a| a.dwell = true),
        Command::Simulate(_) => only(&mut s, |a| a.simulate = true),
        Command::Verify(_) => only(&mut s, |a| {
            a.trapping = requested.trapping || !requested.convergence;
            a.convergence = requested.convergence;
            a.tube = requested.tube;
        }),
        Command::Certify(_) => only(&mut s, |a| a.certify = true),
        Command::Triangle(_) => {
            if s.analysis.triangle_modes.is_none() {
                let labels: Vec<_> = s.system.labels().cloned().collect();
                if labels.len() < 3 {
                    return Err(Error::InvalidArgument("triangle analysis needs three modes".into()));
                }
                s.analysis.triangle_modes = Some([labels[0].clone(), labels[1].clone(), labels[2].clone()]);
            }
            only(&mut s, |a| a.triangle = true)
        }
        Command::PlotData(_) => {
            if s.system.dimension() != 2 {
                return Err(Error::UnsupportedDimension(s.system.dimension()));
            }
            only(&mut s, |a| a.plot_data = true)
        }
        Command::Run(_) => {}
    }
    if s.analysis.needs_trajectories() && (s.signals.is_empty() || s.initial.is_empty()) {
        return Err(Error::InvalidArgument(
            "the scenario needs a signal and an initial point for this command".into(),
        ));
    }
    Ok((s, common))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = prepare(&cli.command).and_then(|(s, common)| run_scenario(&s, &common.out));
    match result {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("switchdwell: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

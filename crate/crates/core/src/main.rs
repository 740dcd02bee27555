use clap::{Args, Parser, Subcommand};
use cwlab::cli::{self, RunConfig};
use std::path::PathBuf;

/// Numerical laboratory for locally damped coupled wave equations.
#[derive(Parser)]
#[command(name = "cwlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a run manifest to reproduce.
    scenario: PathBuf,
    /// Worker threads for independent scan points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides the scenario and CWLAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Horizon override in time units.
    #[arg(long)]
    horizon: Option<f64>,
    /// Gramian shift override for hum-control (diagnostic).
    #[arg(long)]
    tikhonov: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the damped system and record the energy trace.
    Simulate(Common),
    /// Simulate, then fit the exponential decay of E and E_m.
    DecayFit(Common),
    /// Dense eigenvalues and spectral abscissa of the generator.
    Spectrum(Common),
    /// Resolvent norms along the imaginary axis.
    ResolventScan(Common),
    /// Sampled geometric control condition check on the damping region.
    GccCheck(Common),
    /// Piecewise multipliers condition check on the damping region.
    PmgcCheck(Common),
    /// Observability-ratio floor over seeded random data.
    Observability(Common),
    /// Synthesize an exact control and verify the closed loop.
    HumControl(Common),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep exit code 1 for usage errors; 2 is the hypothesis-failure code
            let _ = e.print();
            std::process::exit(if e.use_stderr() { cli::EXIT_USAGE } else { 0 });
        }
    };
    let (sub, common) = match cli.command {
        Command::Simulate(c) => (cli::Subcommand::Simulate, c),
        Command::DecayFit(c) => (cli::Subcommand::DecayFit, c),
        Command::Spectrum(c) => (cli::Subcommand::Spectrum, c),
        Command::ResolventScan(c) => (cli::Subcommand::ResolventScan, c),
        Command::GccCheck(c) => (cli::Subcommand::GccCheck, c),
        Command::PmgcCheck(c) => (cli::Subcommand::PmgcCheck, c),
        Command::Observability(c) => (cli::Subcommand::Observability, c),
        Command::HumControl(c) => (cli::Subcommand::HumControl, c),
    };
    let code = cli::run(&RunConfig {
        jobs: common.jobs,
        out_override: common.out,
        horizon_override: common.horizon,
        tikhonov_override: common.tikhonov,
        ..RunConfig::new(sub, common.scenario)
    });
    std::process::exit(code);
}

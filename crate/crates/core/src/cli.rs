//! Subcommand dispatch and reproducible outputs: CSV traces, scan curves,
//! plot scripts, and run manifests.
//!
//! Every run writes a `run_manifest.toml` embedding the fully resolved
//! scenario; pointing the same subcommand at the manifest reproduces the CSV
//! outputs byte for byte. Floats are written in shortest round-trip decimal
//! form for exactly that reason.
//!
//! Exit codes: 0 success, 1 usage/parse/validation, 2 hypothesis-check
//! failure, 3 solver failure.

use crate::control::{self, ControlError, HumContext};
use crate::discretization::SolveError;
use crate::dynamics::{self, fit_decay, FitKind, SimulationOutput};
use crate::geometry::{check_hypotheses, gcc_check, pmgc_check, GccReport, DEFAULT_RAYS_1D, DEFAULT_RAYS_2D};
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::spectral::{
    assemble_generator, resolvent_scan_jobs, spectral_abscissa, spectrum, SpectralError,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Environment variable overriding the scenario's output directory.
pub const OUT_ENV: &str = "CWLAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    DecayFit,
    Spectrum,
    ResolventScan,
    GccCheck,
    PmgcCheck,
    Observability,
    HumControl,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::DecayFit => "decay-fit",
            Subcommand::Spectrum => "spectrum",
            Subcommand::ResolventScan => "resolvent-scan",
            Subcommand::GccCheck => "gcc-check",
            Subcommand::PmgcCheck => "pmgc-check",
            Subcommand::Observability => "observability",
            Subcommand::HumControl => "hum-control",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub scenario_path: PathBuf,
    pub jobs: usize,
    /// Overrides both the scenario's output directory and `CWLAB_OUT`.
    pub out_override: Option<PathBuf>,
    /// Overrides the scenario horizon (recorded in the manifest).
    pub horizon_override: Option<f64>,
    /// Overrides the Gramian shift for `hum-control`.
    pub tikhonov_override: Option<f64>,
}

impl RunConfig {
    pub fn new(subcommand: Subcommand, scenario_path: PathBuf) -> Self {
        RunConfig {
            subcommand,
            scenario_path,
            jobs: 1,
            out_override: None,
            horizon_override: None,
            tikhonov_override: None,
        }
    }
}

/// Dispatches one subcommand; returns the process exit code.
pub fn run(config: &RunConfig) -> i32 {
    match run_inner(config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Usage(_) | RunError::Io { .. } => EXIT_USAGE,
            RunError::Solve(_) | RunError::Spectral(_) => EXIT_SOLVER,
            RunError::Dynamics(dynamics::DynamicsError::Solve(_)) => EXIT_SOLVER,
            RunError::Dynamics(_) => EXIT_USAGE,
            RunError::Control(_) => EXIT_SOLVER,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn run_inner(config: &RunConfig) -> Result<i32, RunError> {
    let mut scenario = parse_scenario(&config.scenario_path)?;
    if let Some(h) = config.horizon_override {
        scenario.horizon = h;
    }
    if let Some(eps) = config.tikhonov_override {
        scenario.tolerances.tikhonov = eps;
    }
    let issues = scenario.validate();
    if !issues.is_empty() {
        return Err(RunError::Scenario(ScenarioError::Validation(issues)));
    }
    let out_dir = resolve_out_dir(config, &scenario);
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let started = Instant::now();

    let (code, step_count) = match config.subcommand {
        Subcommand::Simulate => cmd_simulate(&scenario, &out_dir)?,
        Subcommand::DecayFit => cmd_decay_fit(&scenario, &out_dir)?,
        Subcommand::Spectrum => cmd_spectrum(&scenario, &out_dir)?,
        Subcommand::ResolventScan => cmd_resolvent_scan(&scenario, &out_dir, config.jobs)?,
        Subcommand::GccCheck => cmd_gcc_check(&scenario, &out_dir)?,
        Subcommand::PmgcCheck => cmd_pmgc_check(&scenario, &out_dir)?,
        Subcommand::Observability => cmd_observability(&scenario, &out_dir)?,
        Subcommand::HumControl => cmd_hum_control(&scenario, &out_dir)?,
    };

    write_manifest(
        &out_dir,
        config.subcommand,
        &scenario,
        step_count,
        started.elapsed().as_millis(),
        config.jobs,
    )?;
    Ok(code)
}

fn resolve_out_dir(config: &RunConfig, scenario: &Scenario) -> PathBuf {
    if let Some(dir) = &config.out_override {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(&scenario.output_dir)
}

fn hypothesis_gate(scenario: &Scenario, fatal: bool) -> Result<Option<i32>, RunError> {
    let setup = scenario.build();
    let partition = scenario.pmgc.as_ref().map(|p| p.partition());
    let report = check_hypotheses(
        &setup.coeffs.b,
        &setup.coeffs.c,
        partition.as_ref(),
        &setup.grid,
    )
    .expect("fields share the scenario grid");
    if !report.holds() {
        let msg = format!(
            "hypothesis check: damping_active={} coupling_active={} inclusion={} partition_clearance={:?}",
            report.damping_active, report.coupling_active, report.inclusion, report.partition_clearance
        );
        if fatal {
            eprintln!("{msg}");
            return Ok(Some(EXIT_HYPOTHESIS));
        }
        eprintln!("warning: {msg}");
    }
    Ok(None)
}

fn cmd_simulate(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    hypothesis_gate(scenario, false)?;
    let setup = scenario.build();
    let initial = scenario.initial_state(&setup.grid);
    let out = dynamics::simulate(scenario, &initial)?;
    write_energy_csv(out_dir, &out)?;
    println!(
        "simulate: {} steps, E(0) = {}, E(T) = {}",
        out.n_steps,
        out.trace.energy.first().unwrap_or(&0.0),
        out.trace.energy.last().unwrap_or(&0.0)
    );
    Ok((EXIT_OK, out.n_steps))
}

fn cmd_decay_fit(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    hypothesis_gate(scenario, false)?;
    let setup = scenario.build();
    let initial = scenario.initial_state(&setup.grid);
    let out = dynamics::simulate(scenario, &initial)?;
    write_energy_csv(out_dir, &out)?;
    let window = dynamics::default_fit_window(scenario.horizon);
    let mut text = String::new();
    let _ = writeln!(text, "window_start = {}", window.0);
    let _ = writeln!(text, "window_end = {}", window.1);
    for (label, kind) in [("strong", FitKind::Strong), ("mixed", FitKind::Mixed)] {
        match fit_decay(&out.trace, kind, window) {
            Ok(fit) => {
                let _ = writeln!(text, "{label}.theta = {}", fit.theta);
                let _ = writeln!(text, "{label}.m = {}", fit.m_factor);
                let _ = writeln!(text, "{label}.residual_rms = {}", fit.residual_rms);
                let _ = writeln!(text, "{label}.decay_observed = {}", fit.decay_observed);
            }
            Err(e) => {
                let _ = writeln!(text, "{label}.error = \"{e}\"");
            }
        }
    }
    let path = out_dir.join("decay_fit.txt");
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    print!("{text}");
    Ok((EXIT_OK, out.n_steps))
}

fn cmd_spectrum(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    let setup = scenario.build();
    let gen = assemble_generator(&setup.grid, &setup.coeffs, &setup.lap, setup.space)?;
    let mut eigs = spectrum(&gen)?;
    eigs.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let abscissa = spectral_abscissa(&eigs);
    let mut csv = String::from("re,im\n");
    for z in &eigs {
        let _ = writeln!(csv, "{},{}", z.re, z.im);
    }
    let path = out_dir.join("spectrum.csv");
    std::fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    write_plot_script(
        out_dir,
        "spectrum.csv",
        "spectrum of the generator",
        "plot \"spectrum.csv\" using 1:2 with points title \"eigenvalues\"",
        false,
    )?;
    println!("spectrum: {} eigenvalues, abscissa = {abscissa}", eigs.len());
    Ok((EXIT_OK, eigs.len()))
}

fn cmd_resolvent_scan(
    scenario: &Scenario,
    out_dir: &Path,
    jobs: usize,
) -> Result<(i32, usize), RunError> {
    let setup = scenario.build();
    let gen = assemble_generator(&setup.grid, &setup.coeffs, &setup.lap, setup.space)?;
    let curve = resolvent_scan_jobs(
        &gen,
        scenario.resolvent.beta_max,
        scenario.resolvent.n_points,
        jobs,
    )?;
    let mut csv = String::from("beta,norm,flagged\n");
    for i in 0..curve.betas.len() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            curve.betas[i],
            if curve.flagged[i] {
                "nan".to_string()
            } else {
                format!("{}", curve.norms[i])
            },
            curve.flagged[i]
        );
    }
    let path = out_dir.join("resolvent.csv");
    std::fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    write_plot_script(
        out_dir,
        "resolvent.csv",
        "resolvent norm along the imaginary axis",
        "plot \"resolvent.csv\" using 1:2 with lines title \"|R(i beta)|\"",
        true,
    )?;
    println!(
        "resolvent-scan: sup = {} over beta in [0, {}], {} flagged points",
        curve.sup,
        scenario.resolvent.beta_max,
        curve.flagged.iter().filter(|f| **f).count()
    );
    Ok((EXIT_OK, curve.betas.len()))
}

fn cmd_gcc_check(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    let region = scenario.damping.region();
    let horizon = scenario.gcc.time.unwrap_or(scenario.horizon);
    let n_rays = scenario.gcc.n_rays.unwrap_or(if scenario.domain.dim() == 1 {
        DEFAULT_RAYS_1D
    } else {
        DEFAULT_RAYS_2D
    });
    let report = gcc_check(&region, &scenario.domain, scenario.a, horizon, n_rays);
    write_gcc_report(out_dir, &report, horizon)?;
    if report.holds {
        println!(
            "gcc-check: holds over {} rays, empirical entry time {}",
            report.rays_traced, report.max_entry_time
        );
        Ok((EXIT_OK, report.rays_traced))
    } else {
        eprintln!(
            "gcc-check: fails; offending ray origin = ({}, {}), direction = ({}, {}), {} rays never enter",
            report.worst_ray.origin[0],
            report.worst_ray.origin[1],
            report.worst_ray.direction[0],
            report.worst_ray.direction[1],
            report.rays_missed
        );
        Ok((EXIT_HYPOTHESIS, report.rays_traced))
    }
}

fn cmd_pmgc_check(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    let Some(spec) = &scenario.pmgc else {
        return Err(RunError::Usage(
            "pmgc-check needs a [pmgc] section in the scenario".to_string(),
        ));
    };
    let setup = scenario.build();
    let partition = spec.partition();
    let region = scenario.damping.region();
    let ok = pmgc_check(&region, &scenario.domain, &partition, &setup.grid)
        .expect("scenario grid matches its domain");
    let path = out_dir.join("pmgc_report.txt");
    let text = format!(
        "pmgc_holds = {ok}\nepsilon = {}\nsubdomains = {}\n",
        spec.epsilon,
        spec.subdomains.len()
    );
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    println!("pmgc-check: {}", if ok { "holds" } else { "fails" });
    Ok((if ok { EXIT_OK } else { EXIT_HYPOTHESIS }, setup.grid.len()))
}

fn cmd_observability(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    if let Some(code) = hypothesis_gate(scenario, true)? {
        return Ok((code, 0));
    }
    let Some(seed) = scenario.seed else {
        return Err(RunError::Usage(
            "observability sampling is randomized: the scenario must set `seed`".to_string(),
        ));
    };
    let study = control::observability_floor(
        scenario,
        seed,
        scenario.observability.n_random,
        scenario.observability.n_power,
    )?;
    let mut csv = String::from("index,kind,ratio\n");
    for (i, r) in study.ratios.iter().enumerate() {
        let kind = if i < study.n_random { "random" } else { "power" };
        let _ = writeln!(csv, "{i},{kind},{r}");
    }
    let path = out_dir.join("observability.csv");
    std::fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    println!(
        "observability: min ratio {} over {} samples",
        study.min_ratio,
        study.ratios.len()
    );
    Ok((EXIT_OK, study.ratios.len()))
}

fn cmd_hum_control(scenario: &Scenario, out_dir: &Path) -> Result<(i32, usize), RunError> {
    if let Some(code) = hypothesis_gate(scenario, true)? {
        return Ok((code, 0));
    }
    let ctx = HumContext::new(scenario);
    let u0 = scenario.initial_state(&ctx.setup.grid);
    let mut report = control::hum_solve_shifted(
        &ctx,
        &u0,
        scenario.tolerances.hum,
        scenario.tolerances.hum_maxiter,
        scenario.tolerances.tikhonov,
    )?;
    let residual = control::verify_control_ctx(&ctx, &u0, &report.control)?;
    report.terminal_residual = Some(residual);

    let mut csv = String::from("t");
    for &i in &report.control.support {
        let p = ctx.setup.grid.coords(i);
        if ctx.setup.grid.dim() == 1 {
            let _ = write!(csv, ",n{i}_x{}", p[0]);
        } else {
            let _ = write!(csv, ",n{i}_x{}_y{}", p[0], p[1]);
        }
    }
    csv.push('\n');
    for (t, row) in report.control.times.iter().zip(&report.control.control) {
        let _ = write!(csv, "{t}");
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let path = out_dir.join("control.csv");
    std::fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    write_plot_script(
        out_dir,
        "control.csv",
        "synthesized control at the first support node",
        "plot \"control.csv\" using 1:2 with lines title \"control\"",
        false,
    )?;

    let mut text = String::new();
    let _ = writeln!(text, "iterations = {}", report.iterations);
    let _ = writeln!(
        text,
        "final_residual = {}",
        report.residual_history.last().unwrap_or(&0.0)
    );
    let _ = writeln!(text, "observability_ratio = {}", report.observability_ratio);
    let _ = writeln!(text, "terminal_residual = {residual}");
    let rpath = out_dir.join("gramian_report.txt");
    std::fs::write(&rpath, &text).map_err(|e| io_err(&rpath, e))?;
    print!("{text}");
    Ok((EXIT_OK, ctx.n_steps()))
}

fn write_energy_csv(out_dir: &Path, out: &SimulationOutput) -> Result<(), RunError> {
    let t = &out.trace;
    let mut csv = String::from("t,E,e1,e2tilde,Em,dissipation\n");
    for i in 0..t.times.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            t.times[i], t.energy[i], t.e1[i], t.e2_tilde[i], t.energy_mixed[i], t.dissipation[i]
        );
    }
    let path = out_dir.join("energy.csv");
    std::fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    write_plot_script(
        out_dir,
        "energy.csv",
        "energy decay",
        "plot \"energy.csv\" using 1:2 with lines title \"E\", \"energy.csv\" using 1:5 with lines title \"E_m\"",
        true,
    )
}

fn write_gcc_report(out_dir: &Path, report: &GccReport, horizon: f64) -> Result<(), RunError> {
    let mut text = String::new();
    let _ = writeln!(text, "holds = {}", report.holds);
    let _ = writeln!(text, "horizon = {horizon}");
    let _ = writeln!(text, "rays_traced = {}", report.rays_traced);
    let _ = writeln!(text, "rays_missed = {}", report.rays_missed);
    let _ = writeln!(text, "max_entry_time = {}", report.max_entry_time);
    let _ = writeln!(
        text,
        "worst_ray_origin = [{}, {}]",
        report.worst_ray.origin[0], report.worst_ray.origin[1]
    );
    let _ = writeln!(
        text,
        "worst_ray_direction = [{}, {}]",
        report.worst_ray.direction[0], report.worst_ray.direction[1]
    );
    let path = out_dir.join("gcc_report.txt");
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))
}

/// Plain-text gnuplot companion next to each curve artifact.
fn write_plot_script(
    out_dir: &Path,
    csv_name: &str,
    title: &str,
    plot_line: &str,
    logscale_y: bool,
) -> Result<(), RunError> {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot script for {csv_name}");
    let _ = writeln!(s, "set datafile separator \",\"");
    let _ = writeln!(s, "set key top right");
    let _ = writeln!(s, "set title \"{title}\"");
    if logscale_y {
        let _ = writeln!(s, "set logscale y");
    }
    let _ = writeln!(s, "{plot_line}");
    let _ = writeln!(s, "pause -1");
    let path = out_dir.join(format!("{csv_name}.gnuplot"));
    std::fs::write(&path, &s).map_err(|e| io_err(&path, e))
}

fn write_manifest(
    out_dir: &Path,
    subcommand: Subcommand,
    scenario: &Scenario,
    step_count: usize,
    wall_clock_ms: u128,
    jobs: usize,
) -> Result<(), RunError> {
    let mut s = String::new();
    let _ = writeln!(s, "[run]");
    let _ = writeln!(s, "subcommand = \"{}\"", subcommand.name());
    let _ = writeln!(s, "artifact_version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "scenario_hash = \"{}\"", scenario.hash());
    let _ = writeln!(s, "step_count = {step_count}");
    let _ = writeln!(s, "wall_clock_ms = {wall_clock_ms}");
    let _ = writeln!(s, "jobs = {jobs}");
    let _ = writeln!(s, "\n[scenario]");
    // indent-free embedding: the scenario serialization is already a TOML
    // table body; nest its section headers under [scenario.*]
    for line in scenario.to_toml().lines() {
        if let Some(header) = line.strip_prefix('[') {
            let _ = writeln!(s, "[scenario.{header}");
        } else {
            let _ = writeln!(s, "{line}");
        }
    }
    let path = out_dir.join("run_manifest.toml");
    std::fs::write(&path, &s).map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "cwlab-test-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn simulate_writes_monotone_energy_and_manifest() {
        let dir = temp_dir("sim");
        let scenario = "[grid]\nn = 60\n[time]\nhorizon = 2.0\nsample_stride = 5\n";
        let path = write_file(&dir, "scenario.toml", scenario);
        let out = dir.join("out");
        let code = run(&RunConfig {
            subcommand: Subcommand::Simulate,
            scenario_path: path,
            jobs: 1,
            out_override: Some(out.clone()),
            horizon_override: None,
            tikhonov_override: None,
        });
        assert_eq!(code, EXIT_OK);
        let csv = std::fs::read_to_string(out.join("energy.csv")).unwrap();
        let mut prev = f64::INFINITY;
        for line in csv.lines().skip(1) {
            let e: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(e <= prev + 1e-12, "energy must be non-increasing");
            prev = e;
        }
        assert!(out.join("run_manifest.toml").exists());
        assert!(out.join("energy.csv.gnuplot").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn manifest_rerun_reproduces_csv_bytes() {
        let dir = temp_dir("rerun");
        let scenario = "[grid]\nn = 50\n[time]\nhorizon = 1.0\nsample_stride = 3\n";
        let path = write_file(&dir, "scenario.toml", scenario);
        let out_a = dir.join("a");
        let out_b = dir.join("b");
        assert_eq!(
            run(&RunConfig {
                subcommand: Subcommand::Simulate,
                scenario_path: path,
                jobs: 1,
                out_override: Some(out_a.clone()),
                horizon_override: None,
                tikhonov_override: None,
            }),
            EXIT_OK
        );
        assert_eq!(
            run(&RunConfig {
                subcommand: Subcommand::Simulate,
                scenario_path: out_a.join("run_manifest.toml"),
                jobs: 1,
                out_override: Some(out_b.clone()),
                horizon_override: None,
                tikhonov_override: None,
            }),
            EXIT_OK
        );
        let a = std::fs::read(out_a.join("energy.csv")).unwrap();
        let b = std::fs::read(out_b.join("energy.csv")).unwrap();
        assert_eq!(a, b, "rerun from manifest must be bit-identical");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gcc_check_trapped_strip_exits_2() {
        let dir = temp_dir("gcc");
        let scenario = r#"
[domain]
kind = "rectangle"
lengths = [1.0, 1.0]
[grid]
n = [24, 24]
[system.damping]
boxes = [[[0.4, 0.6], [0.0, 1.0]]]
plateau = 1.0
transition = 0.09
[system.coupling]
constant = 0.5
[gcc]
time = 10.0
n_rays = 8192
"#;
        let path = write_file(&dir, "scenario.toml", scenario);
        let out = dir.join("out");
        let code = run(&RunConfig {
            subcommand: Subcommand::GccCheck,
            scenario_path: path,
            jobs: 1,
            out_override: Some(out.clone()),
            horizon_override: None,
            tikhonov_override: None,
        });
        assert_eq!(code, EXIT_HYPOTHESIS);
        let report = std::fs::read_to_string(out.join("gcc_report.txt")).unwrap();
        assert!(report.contains("holds = false"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_key_exits_1() {
        let dir = temp_dir("strict");
        let path = write_file(&dir, "scenario.toml", "unknown_top_level = 1\n");
        let code = run(&RunConfig {
            subcommand: Subcommand::Simulate,
            scenario_path: path,
            jobs: 1,
            out_override: Some(dir.join("out")),
            horizon_override: None,
            tikhonov_override: None,
        });
        assert_eq!(code, EXIT_USAGE);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn observability_without_seed_exits_1() {
        let dir = temp_dir("obs-seed");
        let path = write_file(&dir, "scenario.toml", "[grid]\nn = 40\n[time]\nhorizon = 1.0\n");
        let code = run(&RunConfig {
            subcommand: Subcommand::Observability,
            scenario_path: path,
            jobs: 1,
            out_override: Some(dir.join("out")),
            horizon_override: None,
            tikhonov_override: None,
        });
        assert_eq!(code, EXIT_USAGE);
        std::fs::remove_dir_all(&dir).ok();
    }
}

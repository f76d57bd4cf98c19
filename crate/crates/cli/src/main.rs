//! `gridforge` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 validation failure,
//! 3 numerical divergence, 4 infeasible synthesis, 5 certification failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gridforge_core::certify::{certify_bus_with, CertificationReport, GridSpec};
use gridforge_core::config::{self, ConfigError, ScenarioBundle, ScenarioFile};
use gridforge_core::inverter::{augmented_plant, close_loop};
use gridforge_core::output::{certificate_artifact, gains_artifact, simulation_artifacts, write_outputs, Artifact};
use gridforge_core::sim::{run_scenario, BusSpec, EventKind, Scenario, SimError};
use gridforge_core::synthesize::synthesize_controller;
use gridforge_core::ControllerGains;

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_UNCERTIFIED: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "gridforge", version, about = "Passivity-based inverter controller certification, synthesis and microgrid simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Scenario file (JSON).
    input: PathBuf,
    /// Output directory; created if missing.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Override the integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the synthesis seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of log-spaced frequency grid points.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify every inverter controller in the scenario.
    Certify(RunArgs),
    /// Search for a controller meeting the scenario's tuning spec.
    Synthesize(RunArgs),
    /// Run the scenario and write the time series.
    Simulate(RunArgs),
    /// Check a scenario file and print diagnostics.
    Validate {
        input: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Print a shipped preset scenario as JSON.
    Preset { name: Preset },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    CaseStudy,
    PlugAndPlay,
    SingleInverter,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_IO, error }
    }
}

fn load(path: &Path) -> Result<(ScenarioBundle, Vec<u8>), Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::new(EXIT_IO, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let bundle = config::parse_scenario_str(&text, &path.display().to_string()).map_err(config_failure)?;
    Ok((bundle, bytes))
}

fn config_failure(e: ConfigError) -> Failure {
    let code = if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_INVALID };
    Failure::new(code, e)
}

fn grid_of(points: Option<usize>) -> Result<GridSpec, Failure> {
    match points {
        Some(n) if n < 10 => Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("--grid needs at least 10 points, got {n}"))),
        Some(n) => Ok(GridSpec::with_points(n)),
        None => Ok(GridSpec::default()),
    }
}

/// Distinct controllers in the scenario with the buses that use them,
/// including inverters joining through plug-in events.
fn controllers(s: &Scenario) -> Vec<(ControllerGains, Vec<usize>)> {
    let mut out: Vec<(ControllerGains, Vec<usize>)> = Vec::new();
    let mut add = |g: &ControllerGains, bus: usize| match out.iter_mut().find(|(h, _)| h == g) {
        Some((_, buses)) => buses.push(bus),
        None => out.push((g.clone(), vec![bus])),
    };
    for (k, b) in s.buses.iter().enumerate() {
        if let BusSpec::Inverter(inv) = b {
            add(inv.gains.as_ref().unwrap_or(&s.gains), k + 1);
        }
    }
    let mut next = s.bus_count;
    for ev in &s.events {
        if let EventKind::PlugIn { gains, .. } = &ev.kind {
            next += 1;
            add(gains.as_ref().unwrap_or(&s.gains), next);
        }
    }
    out
}

fn certify_all(b: &ScenarioBundle, grid: &GridSpec) -> anyhow::Result<Vec<(Vec<usize>, CertificationReport)>> {
    let s = &b.scenario;
    let plant = augmented_plant(&s.inverter, &s.impedance, &s.frame)?;
    Ok(controllers(s)
        .into_iter()
        .map(|(g, buses)| {
            let rep = certify_bus_with(&close_loop(&plant, &g), &g, &b.tuning, grid, 1e-4);
            (buses, rep)
        })
        .collect())
}

fn summarize(buses: &[usize], r: &CertificationReport) -> String {
    format!(
        "buses {buses:?}: hurwitz {} (margin {:.3}), gains {} (max {:.3}), freq {}, osp {} (rho* = {}, rho_min = {})",
        ok(r.hurwitz_ok),
        r.hurwitz_margin,
        ok(r.gains_ok),
        r.max_abs_gain,
        ok(r.freq_ok),
        ok(r.osp_ok),
        r.certified_rho.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.rho_min
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn emit(dir: &Path, artifacts: &[Artifact]) -> Result<(), Failure> {
    let manifest = write_outputs(dir, artifacts)
        .with_context(|| format!("writing outputs to {}", dir.display()))
        .map_err(|e| Failure::new(EXIT_IO, e))?;
    for f in &manifest.files {
        println!("wrote {} ({} bytes)", dir.join(&f.name).display(), f.size);
    }
    Ok(())
}

fn cmd_certify(args: &RunArgs) -> Result<(), Failure> {
    let (bundle, _) = load(&args.input)?;
    let grid = grid_of(args.grid)?;
    let reports = certify_all(&bundle, &grid)?;
    if reports.is_empty() {
        return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("scenario has no inverter buses")));
    }
    let mut artifacts = Vec::new();
    for (k, (buses, rep)) in reports.iter().enumerate() {
        println!("{}", summarize(buses, rep));
        let mut a = certificate_artifact(rep);
        if k > 0 {
            a.name = format!("certificate_{}.json", k + 1);
        }
        artifacts.push(a);
    }
    emit(&args.out, &artifacts)?;
    if reports.iter().all(|(_, r)| r.all_ok()) {
        Ok(())
    } else {
        Err(Failure::new(EXIT_UNCERTIFIED, anyhow::anyhow!("at least one controller failed certification")))
    }
}

fn cmd_synthesize(args: &RunArgs) -> Result<(), Failure> {
    let (bundle, _) = load(&args.input)?;
    let mut cfg = bundle.synthesis.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.grid.is_some() {
        cfg.grid = grid_of(args.grid)?;
    }
    let s = &bundle.scenario;
    let plant = augmented_plant(&s.inverter, &s.impedance, &s.frame).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    log::info!("synthesizing: {} starts x {} evaluations, seed {}", cfg.starts, cfg.budget_per_start, cfg.seed);
    let res = synthesize_controller(&plant, &cfg).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    println!("{}", summarize(&[], &res.report));
    println!("best start {} after {} evaluations, objective {:.6}", res.start_index, res.evaluations, res.objective);
    emit(&args.out, &[gains_artifact(&res, &cfg)])?;
    if res.feasible {
        Ok(())
    } else {
        Err(Failure::new(EXIT_INFEASIBLE, anyhow::anyhow!("no candidate met every constraint; best effort written")))
    }
}

fn cmd_simulate(args: &RunArgs) -> Result<(), Failure> {
    let (mut bundle, bytes) = load(&args.input)?;
    if let Some(dt) = args.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("--dt must be positive, got {dt}")));
        }
        bundle.scenario.dt = dt;
    }
    warn_uncertified(&bundle, &grid_of(args.grid)?)?;
    let ts = run_scenario(&bundle.scenario).map_err(|e| {
        let code = match e {
            SimError::Divergence { .. } => EXIT_DIVERGED,
            SimError::Invalid(_) | SimError::Network(_) => EXIT_INVALID,
            _ => EXIT_IO,
        };
        Failure::new(code, e)
    })?;
    for ev in &ts.events {
        println!("t = {:.4} s: {} (state {} -> {})", ev.time, ev.description, ev.state_dim_before, ev.state_dim_after);
    }
    println!("{} samples to t = {} s", ts.samples.len(), ts.samples.last().map_or(0.0, |s| s.t));
    emit(&args.out, &simulation_artifacts(&ts, &bytes))
}

fn warn_uncertified(bundle: &ScenarioBundle, grid: &GridSpec) -> Result<usize, Failure> {
    let reports = certify_all(bundle, grid).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let mut n = 0;
    for (buses, rep) in reports.iter().filter(|(_, r)| !r.all_ok()) {
        log::warn!("uncertified controller: {}", summarize(buses, rep));
        eprintln!("warning: uncertified controller at buses {buses:?}");
        n += 1;
    }
    Ok(n)
}

fn cmd_validate(input: &Path, grid: Option<usize>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))
        .map_err(|e| Failure::new(EXIT_IO, e))?;
    let file = config::parse_file_text(&text, &input.display().to_string()).map_err(config_failure)?;
    let errs = file.validate();
    if !errs.is_empty() {
        for e in &errs {
            eprintln!("error: {e}");
        }
        return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("{} problem(s) in {}", errs.len(), input.display())));
    }
    let bundle = file.into_bundle().map_err(config_failure)?;
    let warnings = warn_uncertified(&bundle, &grid_of(grid)?)?;
    println!("{}: ok ({warnings} warning(s))", input.display());
    Ok(())
}

fn cmd_preset(p: Preset) -> Result<(), Failure> {
    let file: ScenarioFile = match p {
        Preset::CaseStudy => config::case_study(),
        Preset::PlugAndPlay => config::plug_and_play(),
        Preset::SingleInverter => config::single_inverter(),
    };
    let bundle = file.into_bundle().map_err(config_failure)?;
    println!("{}", config::to_json(&bundle));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate { input, grid } => cmd_validate(input, *grid),
        Command::Preset { name } => cmd_preset(*name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plug_in_controllers_are_collected() {
        let b = config::plug_and_play().into_bundle().unwrap();
        let c = controllers(&b.scenario);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].1, vec![1, 4, 5]);
    }

    #[test]
    fn tiny_grid_rejected() {
        assert!(grid_of(Some(3)).is_err());
        assert!(grid_of(None).is_ok_and(|g| g == GridSpec::default()));
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["gridforge", "simulate", "x.json", "--dt", "1e-5", "-o", "o"]).unwrap();
        assert!(matches!(cli.command, Command::Simulate(RunArgs { dt: Some(_), .. })));
    }
}

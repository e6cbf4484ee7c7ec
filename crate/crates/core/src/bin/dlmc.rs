use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use dlmc_core::network::{load_feeder, Feeder};
use dlmc_core::opf::{HorizonEnd, SolverOptions};
use dlmc_core::pipeline::{self, RunOptions, FD_STEP};
use dlmc_core::report;
use dlmc_core::sensitivity::solve_all;
use dlmc_core::{Error, Result};

/// Day-ahead planning for radial feeders: SOCP scheduling with transformer
/// aging and nodal marginal-cost decomposition.
#[derive(Parser)]
#[command(name = "dlmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a feeder file (topology, bounds, EV itineraries).
    Validate(FeederArg),
    /// Exact power flow at the conventional loads with DERs idle.
    Pf(PfArgs),
    /// Solve the relaxed OPF and write the schedule and report.
    Solve(RunArgs),
    /// Sensitivities of the branch-flow state to nodal net demand.
    Sensitivities(SensArgs),
    /// Full chain: solve, exact power flow, sensitivities, decomposition, reconciliation.
    Dlmc(RunArgs),
    /// Standalone transformer thermal simulation.
    ThermalSim(ThermalArgs),
}

#[derive(Args)]
struct FeederArg {
    /// Feeder JSON file.
    #[arg(long)]
    feeder: PathBuf,
}

#[derive(Args)]
struct PfArgs {
    #[command(flatten)]
    feeder: FeederArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    feeder: FeederArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Default)]
struct RunFlags {
    /// JSON run configuration; flags given here take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// How the thermal state closes at the end of the day: `cycle` or `extended:E`.
    #[arg(long, value_name = "MODE")]
    horizon_end: Option<HorizonEnd>,
    /// Conic backend.
    #[arg(long)]
    backend: Option<String>,
    /// Absolute duality-gap tolerance.
    #[arg(long)]
    tol_gap_abs: Option<f64>,
    /// Relative duality-gap tolerance.
    #[arg(long)]
    tol_gap_rel: Option<f64>,
    /// Primal and dual feasibility tolerance.
    #[arg(long)]
    tol_feas: Option<f64>,
    /// Interior-point iteration limit.
    #[arg(long)]
    max_iter: Option<u32>,
    /// Print the solver log to stdout.
    #[arg(long)]
    solver_verbose: bool,
    /// Relative gap above which a DLMC entry is flagged.
    #[arg(long)]
    reconcile_tol: Option<f64>,
}

#[derive(Args)]
struct SensArgs {
    #[command(flatten)]
    feeder: FeederArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Linearize at the OPF optimum instead of the base-load power flow.
    #[arg(long)]
    at_optimum: bool,
    /// Compare with central differences of the exact power flow.
    #[arg(long)]
    fd_check: bool,
    /// Central-difference step (p.u.).
    #[arg(long)]
    fd_step: Option<f64>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct ThermalArgs {
    #[command(flatten)]
    feeder: FeederArg,
    /// CSV with a `l` column (squared current, p.u.) and optional `ambient` column.
    /// Without it the base-load power flow supplies the current.
    #[arg(long)]
    load_profile: Option<PathBuf>,
    /// Transformer line id; defaults to the first transformer.
    #[arg(long)]
    transformer: Option<String>,
    /// Initial top-oil temperature (°C); steady state under the first load otherwise.
    #[arg(long)]
    initial_top_oil: Option<f64>,
    /// Output directory for thermal.csv; the CSV goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run configuration file. Same vocabulary as the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    horizon_end: Option<HorizonEnd>,
    solver: Option<SolverOptions>,
    reconcile_tolerance: Option<f64>,
    fd_step: Option<f64>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn run_options(flags: &RunFlags, cfg: &ConfigFile) -> RunOptions {
    let mut o = RunOptions::default();
    if let Some(h) = cfg.horizon_end {
        o.horizon_end = h;
    }
    if let Some(s) = &cfg.solver {
        o.solver = s.clone();
    }
    if let Some(t) = cfg.reconcile_tolerance {
        o.reconcile_tolerance = t;
    }
    if let Some(h) = flags.horizon_end {
        o.horizon_end = h;
    }
    if let Some(b) = &flags.backend {
        o.solver.backend = b.clone();
    }
    if let Some(x) = flags.tol_gap_abs {
        o.solver.tol_gap_abs = x;
    }
    if let Some(x) = flags.tol_gap_rel {
        o.solver.tol_gap_rel = x;
    }
    if let Some(x) = flags.tol_feas {
        o.solver.tol_feas = x;
    }
    if let Some(x) = flags.max_iter {
        o.solver.max_iter = x;
    }
    if flags.solver_verbose {
        o.solver.verbose = true;
    }
    if let Some(x) = flags.reconcile_tol {
        o.reconcile_tolerance = x;
    }
    o
}

fn load(arg: &FeederArg) -> Result<Feeder> {
    load_feeder(&arg.feeder)
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print(v: serde_json::Value) {
    let text = serde_json::to_string_pretty(&v).expect("summary serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn validate(a: FeederArg) -> Result<()> {
    let f = load(&a)?;
    pipeline::validate(&f)?;
    let topo = &f.topology;
    print(json!({
        "feeder": f.name,
        "valid": true,
        "nodes": topo.n_nodes(),
        "lines": topo.n_lines(),
        "transformers": topo.transformers().iter().map(|&y| topo.line_into(y).id.clone()).collect::<Vec<_>>(),
        "periods": f.periods(),
        "dt_hours": f.grid.dt_hours(),
        "loads": f.loads.len(),
        "pv": f.pv.len(),
        "ev": f.ev.len(),
    }));
    Ok(())
}

fn pf(a: PfArgs) -> Result<()> {
    let f = load(&a.feeder)?;
    let (op, res) = pipeline::run_power_flow(&f)?;
    report::ensure_dir(&a.out)?;
    report::write_operating_point(&a.out.join("operating_point.csv"), &f.topology, &op)?;
    report::write_json(&a.out.join("residuals.json"), &res)?;
    let vmin = op
        .periods
        .iter()
        .flat_map(|s| s.v.iter())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    print(json!({
        "feeder": f.name,
        "periods": op.periods.len(),
        "max_residual": res.max(),
        "min_voltage": vmin.sqrt(),
        "losses": op.periods.iter().map(|s| s.p0 - s.p_net.iter().sum::<f64>()).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn solve(a: RunArgs) -> Result<()> {
    let f = load(&a.feeder)?;
    let cfg = read_config(a.run.config.as_deref())?;
    let opts = run_options(&a.run, &cfg);
    let r = pipeline::run_solve(&f, &opts)?;
    report::write_solve_bundle(&a.out, &f, &r)?;
    print(json!({
        "feeder": f.name,
        "status": r.status,
        "horizon_end": r.horizon,
        "objective": r.objective,
        "cost": r.cost,
        "iterations": r.solver.iterations,
        "solve_time_s": r.solver.solve_time_s,
        "reduced_accuracy": r.solver.reduced_accuracy,
        "max_soc_gap": r.exactness.max_soc_gap,
        "relaxation_exact": r.exactness.relaxation_exact,
    }));
    Ok(())
}

fn sensitivities(a: SensArgs) -> Result<()> {
    let f = load(&a.feeder)?;
    let cfg = read_config(a.run.config.as_deref())?;
    let step = a.fd_step.or(cfg.fd_step).unwrap_or(FD_STEP);
    let op = if a.at_optimum {
        let r = pipeline::run_solve(&f, &run_options(&a.run, &cfg))?;
        let day = r.day_operating_point();
        dlmc_core::power_flow::solve_power_flow(
            &f.topology,
            &day.net_demand(),
            &day.root_voltage(),
        )?
    } else {
        pipeline::run_power_flow(&f)?.0
    };
    let tensor = solve_all(&f.topology, &op)?;
    let fd = if a.fd_check {
        Some(pipeline::fd_check_all(&f, &op, step)?)
    } else {
        None
    };
    report::ensure_dir(&a.out)?;
    report::write_sensitivities(
        &a.out.join("sensitivities.csv"),
        &f.topology,
        &tensor,
        fd.as_deref(),
    )?;
    let fd_max = fd
        .as_ref()
        .map(|v| v.iter().flatten().map(|c| c.max_error).fold(0.0, f64::max));
    print(json!({
        "feeder": f.name,
        "systems": tensor.systems,
        "factorizations": tensor.factorizations,
        "max_residual": tensor.max_residual(),
        "fd_step": fd.as_ref().map(|_| step),
        "fd_max_error": fd_max,
    }));
    Ok(())
}

fn dlmc(a: RunArgs) -> Result<()> {
    let f = load(&a.feeder)?;
    let cfg = read_config(a.run.config.as_deref())?;
    let opts = run_options(&a.run, &cfg);
    let run = pipeline::run_dlmc(&f, &opts)?;
    report::write_dlmc_bundle(&a.out, &f, &run)?;
    let r = &run.report;
    print(json!({
        "feeder": f.name,
        "status": r.status,
        "horizon_end": r.horizon,
        "objective": r.objective,
        "relaxation_exact": r.exactness.relaxation_exact,
        "max_soc_gap": r.exactness.max_soc_gap,
        "pf_agreement": run.agreement,
        "pf_max_residual": run.exact_residuals.max(),
        "rows": run.rows.len(),
        "reconciliation": {
            "tolerance": run.reconciliation.tolerance,
            "max_gap": run.reconciliation.max_gap,
            "mean_gap": run.reconciliation.mean_gap,
            "flagged": run.reconciliation.flagged,
        },
    }));
    Ok(())
}

fn thermal_sim(a: ThermalArgs) -> Result<()> {
    let f = load(&a.feeder)?;
    let profile = a
        .load_profile
        .as_deref()
        .map(report::read_load_profile)
        .transpose()?;
    let (line, traj) = pipeline::run_thermal_sim(
        &f,
        a.transformer.as_deref(),
        profile.as_ref().map(|p| p.l.as_slice()),
        profile.as_ref().and_then(|p| p.ambient.as_deref()),
        a.initial_top_oil,
    )?;
    match a.out {
        Some(dir) => {
            report::ensure_dir(&dir)?;
            report::write_thermal(&dir.join("thermal.csv"), &traj.rows)?;
            let last = traj.rows.last().expect("nonempty trajectory");
            print(json!({
                "feeder": f.name,
                "transformer": line,
                "initial_top_oil": traj.initial_top_oil,
                "max_hotspot": traj.rows.iter().map(|r| r.hotspot).fold(f64::NEG_INFINITY, f64::max),
                "loss_of_life_h": last.cumulative_lol,
            }));
        }
        None => {
            report::write_thermal_to(std::io::stdout().lock(), Path::new("<stdout>"), &traj.rows)?
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Validate(a) => validate(a),
        Command::Pf(a) => pf(a),
        Command::Solve(a) => solve(a),
        Command::Sensitivities(a) => sensitivities(a),
        Command::Dlmc(a) => dlmc(a),
        Command::ThermalSim(a) => thermal_sim(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!(
                "{}",
                json!({ "error": class.as_str(), "message": e.to_string() })
            );
            ExitCode::from(class.exit_code() as u8)
        }
    }
}

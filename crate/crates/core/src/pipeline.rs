//! End-to-end chains used by the CLI and the C ABI.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::der::{ev_feasibility_precheck, EvPrecheck};
use crate::dlmc::{
    decompose_all, reconcile, DlmcRow, PiCoefficients, Reconciliation, RECONCILE_TOL,
};
use crate::error::{Error, Result};
use crate::network::{Feeder, OperatingPoint};
use crate::opf::{assemble, backend_by_name, solve, HorizonEnd, SolveReport, SolverOptions};
use crate::power_flow::{residual_report, solve_power_flow, ResidualReport};
use crate::sensitivity::{finite_difference_check, solve_all, FdCheck, Kind, SensitivityTensor};
use crate::thermal::{simulate_thermal, PiecewiseAging, ThermalTrajectory};

/// Default central-difference step for the sensitivity oracle (p.u.).
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub horizon_end: HorizonEnd,
    pub solver: SolverOptions,
    pub reconcile_tolerance: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            horizon_end: HorizonEnd::Cycle,
            solver: SolverOptions::default(),
            reconcile_tolerance: RECONCILE_TOL,
        }
    }
}

pub fn run_solve(feeder: &Feeder, opts: &RunOptions) -> Result<SolveReport> {
    let instance = assemble(feeder, opts.horizon_end)?;
    let backend = backend_by_name(&opts.solver.backend)?;
    solve(&instance, backend.as_ref(), &opts.solver)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlmcRun {
    pub report: SolveReport,
    /// Exact power flow at the optimal net demands of the day.
    pub exact: OperatingPoint,
    pub exact_residuals: ResidualReport,
    /// Max-norm difference between the relaxed and the exact state (p.u.).
    pub agreement: f64,
    pub tensor: SensitivityTensor,
    pub pi: PiCoefficients,
    pub rows: Vec<DlmcRow>,
    pub reconciliation: Reconciliation,
}

/// Solve, rebuild the exact operating point, differentiate, decompose, reconcile.
pub fn run_dlmc(feeder: &Feeder, opts: &RunOptions) -> Result<DlmcRun> {
    let report = run_solve(feeder, opts)?;
    let topo = &feeder.topology;
    let day = report.day_operating_point();
    let exact = solve_power_flow(topo, &day.net_demand(), &day.root_voltage())?;
    let exact_residuals = residual_report(topo, &exact)?;
    let agreement = state_difference(&day, &exact);
    let tensor = solve_all(topo, &exact)?;
    let slopes = crate::thermal::PiecewiseAging::new(&feeder.aging_breakpoints)?.slopes;
    let coeffs: Vec<_> = report.thermal.iter().map(|t| t.coeffs.clone()).collect();
    let pi = PiCoefficients::compute(&coeffs, &report.duals, &slopes)?;
    let rows = decompose_all(
        topo,
        &tensor,
        &report.duals,
        &feeder.costs,
        &pi,
        feeder.periods(),
    )?;
    let reconciliation = reconcile(&rows, &feeder.costs, opts.reconcile_tolerance);
    if reconciliation.flagged > 0 {
        log::warn!(
            "{} DLMC entries differ from the solver duals by more than {:.0e} (max {:.3e})",
            reconciliation.flagged,
            reconciliation.tolerance,
            reconciliation.max_gap
        );
    }
    Ok(DlmcRun {
        report,
        exact,
        exact_residuals,
        agreement,
        tensor,
        pi,
        rows,
        reconciliation,
    })
}

/// Max-norm difference of `v`, `l`, `P`, `Q` between two operating points.
pub fn state_difference(a: &OperatingPoint, b: &OperatingPoint) -> f64 {
    a.periods
        .iter()
        .zip(&b.periods)
        .flat_map(|(x, y)| {
            [
                (&x.v, &y.v),
                (&x.l, &y.l),
                (&x.p_flow, &y.p_flow),
                (&x.q_flow, &y.q_flow),
            ]
            .into_iter()
            .flat_map(|(u, w)| u.iter().zip(w.iter()).map(|(p, q)| (p - q).abs()))
            .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Checks that go beyond parsing: EV targets reachable at full rate and
/// the aging breakpoints usable.
pub fn validate(feeder: &Feeder) -> Result<()> {
    for ev in &feeder.ev {
        if let EvPrecheck::Infeasible { interval, reason } =
            ev_feasibility_precheck(ev, feeder.grid.dt_hours())
        {
            return Err(Error::EvInfeasible {
                ev: ev.id.clone(),
                reason: format!("interval {}: {reason}", interval + 1),
            });
        }
    }
    PiecewiseAging::new(&feeder.aging_breakpoints)?;
    Ok(())
}

/// Exact power flow at the conventional loads, DERs idle.
pub fn run_power_flow(feeder: &Feeder) -> Result<(OperatingPoint, ResidualReport)> {
    let op = solve_power_flow(
        &feeder.topology,
        &feeder.base_demand(),
        &feeder.root_voltage,
    )?;
    let res = residual_report(&feeder.topology, &op)?;
    Ok((op, res))
}

/// Finite-difference oracle for every site, period and kind, indexed
/// `[period − 1][2 (site − 1) + kind]`.
pub fn fd_check_all(feeder: &Feeder, op: &OperatingPoint, step: f64) -> Result<Vec<Vec<FdCheck>>> {
    let topo = &feeder.topology;
    let demand = op.net_demand();
    let root_v = op.root_voltage();
    (1..=op.periods.len())
        .into_par_iter()
        .map(|t| {
            (1..topo.n_nodes())
                .flat_map(|site| Kind::BOTH.map(|kind| (site, kind)))
                .map(|(site, kind)| {
                    finite_difference_check(topo, &demand, &root_v, site, t, kind, step)
                })
                .collect()
        })
        .collect()
}

/// Standalone thermal simulation of one transformer. Without a load series
/// the squared current of the base-load power flow is used.
pub fn run_thermal_sim(
    feeder: &Feeder,
    transformer: Option<&str>,
    loads: Option<&[f64]>,
    ambient: Option<&[f64]>,
    initial_top_oil: Option<f64>,
) -> Result<(String, ThermalTrajectory)> {
    let topo = &feeder.topology;
    let ys = topo.transformers();
    let y = match transformer {
        Some(id) => *ys
            .iter()
            .find(|&&y| topo.line_into(y).id == id)
            .ok_or_else(|| Error::Validation(format!("no transformer line `{id}`")))?,
        None => *ys
            .first()
            .ok_or_else(|| Error::Validation("feeder has no transformer".into()))?,
    };
    let tr = topo.transformer(y).expect("listed transformer");
    let l: Vec<f64> = match loads {
        Some(l) => l.to_vec(),
        None => run_power_flow(feeder)?
            .0
            .periods
            .iter()
            .map(|s| s.l[y])
            .collect(),
    };
    let amb: Vec<f64> = match ambient {
        Some(a) => a.to_vec(),
        None if l.len() == feeder.periods() => feeder.ambient_for(y).to_vec(),
        None => (0..l.len())
            .map(|k| feeder.ambient_for(y)[k % feeder.periods()])
            .collect(),
    };
    let pw = PiecewiseAging::new(&feeder.aging_breakpoints)?;
    let traj = simulate_thermal(
        &tr.params,
        &pw,
        feeder.grid.dt_hours(),
        &l,
        &amb,
        initial_top_oil.or(tr.initial_top_oil),
    )?;
    Ok((topo.line_into(y).id.clone(), traj))
}

use serde::Serialize;

use super::assemble::{HorizonEnd, ProblemInstance, RowScaling};
use super::backend::{ConicBackend, ConicSolution, ConicStatus, SolverOptions};
use crate::der::{DerSchedule, SocTrajectory};
use crate::error::{Error, Result};
use crate::network::{FeederTopology, OperatingPoint, PeriodState};
use crate::thermal::{aging_factor_exact, hotspot, LinearizedCoeffs};

/// Default SOC-gap threshold for declaring the relaxation exact (p.u.²).
pub const DEFAULT_SOC_GAP_THRESHOLD: f64 = 1e-6;
/// Primal slack under which an aging segment counts as binding.
pub const BINDING_SLACK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub energy: f64,
    pub reactive: f64,
    pub transformer: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.energy + self.reactive + self.transformer
    }
}

/// Thermal trajectory of one transformer at the optimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerState {
    pub line: String,
    /// Child node of the transformer line.
    pub node: usize,
    pub hourly_cost: f64,
    pub coeffs: LinearizedCoeffs,
    pub initial_top_oil: f64,
    pub top_oil: Vec<f64>,
    pub hotspot: Vec<f64>,
    /// Aging variable `f` (piecewise surrogate).
    pub aging: Vec<f64>,
    pub aging_exact: Vec<f64>,
    pub cumulative_lol: Vec<f64>,
}

/// Multipliers in $/(p.u.·h) (or $/(°C·h) for thermal rows). Node-indexed
/// tables are `[t − 1][j]`; transformer tables follow `transformers`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    /// Real-power balance duals; `[t − 1][0]` is the root.
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_q: Vec<Vec<f64>>,
    pub mu_upper: Vec<Vec<f64>>,
    pub mu_lower: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub transformers: Vec<usize>,
    /// Aging-row duals `[transformer][t − 1][segment]`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// Top-oil recursion duals `[transformer][t − 1]`.
    pub top_oil: Vec<Vec<f64>>,
    /// Cycle-constraint duals (cycle mode only).
    pub rho: Vec<Option<f64>>,
}

impl DualSolution {
    /// `μ = μ̄ − μ̲` at node `j`, period `t`.
    pub fn mu(&self, t: usize, j: usize) -> f64 {
        self.mu_upper[t - 1][j] - self.mu_lower[t - 1][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindingEntry {
    pub node: usize,
    pub period: usize,
    pub segments: Vec<usize>,
    pub xi_sum: f64,
    pub hourly_cost: f64,
    /// `f` minus the piecewise maximum.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub max_soc_gap: f64,
    /// `(node, period)` of the worst SOC gap.
    pub worst_soc: Option<(usize, usize)>,
    pub soc_threshold: f64,
    pub relaxation_exact: bool,
    pub max_piecewise_gap: f64,
    pub max_xi_error: f64,
    /// All binding counts in `{1, 2}`.
    pub binding_counts_ok: bool,
    pub binding: Vec<BindingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverInfo {
    pub backend: String,
    pub iterations: u32,
    /// Wall time. Left out of serialized reports so reruns are byte-identical.
    #[serde(skip)]
    pub solve_time_s: f64,
    pub reduced_accuracy: bool,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub max_primal_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub horizon: HorizonEnd,
    /// Periods of the planning day.
    pub periods: usize,
    /// Periods in the model (day plus extension).
    pub modeled_periods: usize,
    pub dt_hours: f64,
    pub objective: f64,
    pub cost: CostBreakdown,
    pub solver: SolverInfo,
    pub operating_point: OperatingPoint,
    pub der: DerSchedule,
    pub ev_soc: Vec<SocTrajectory>,
    pub thermal: Vec<TransformerState>,
    pub duals: DualSolution,
    pub exactness: ExactnessReport,
}

impl SolveReport {
    /// Net demand of the planning day only.
    pub fn day_operating_point(&self) -> OperatingPoint {
        OperatingPoint {
            periods: self.operating_point.periods[..self.periods].to_vec(),
        }
    }
}

pub fn solve(
    instance: &ProblemInstance,
    backend: &dyn ConicBackend,
    options: &SolverOptions,
) -> Result<SolveReport> {
    let (program, scaling) = instance.to_cone_program();
    let sol = backend.solve(&program, options)?;
    let reduced = match &sol.status {
        ConicStatus::Optimal => false,
        ConicStatus::NearOptimal => {
            log::warn!("{} returned a reduced-accuracy solution", backend.name());
            true
        }
        ConicStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "{} certified primal infeasibility after {} iterations",
                backend.name(),
                sol.iterations
            )))
        }
        ConicStatus::NumericalFailure(why) => {
            return Err(Error::Numerical(format!(
                "{} stopped with status {why} after {} iterations",
                backend.name(),
                sol.iterations
            )))
        }
    };
    let z = unscale_duals(&sol, &scaling);
    let x = &sol.x;
    let case = &instance.feeder;
    let topo = &case.topology;
    let dt = case.grid.dt_hours();
    let total = instance.modeled_periods();
    let n = topo.n_nodes();

    // Primal.
    let mut periods = Vec::with_capacity(total);
    for (k, pv) in instance.vars.periods.iter().enumerate() {
        let mut s = PeriodState::flat(n, case.root_voltage[k]);
        for j in 1..n {
            s.v[j] = x[pv.v[j]];
            s.l[j] = x[pv.l[j]];
            s.p_flow[j] = x[pv.p_flow[j]];
            s.q_flow[j] = x[pv.q_flow[j]];
            s.p_net[j] = x[pv.p_net[j]];
            s.q_net[j] = x[pv.q_net[j]];
        }
        s.p0 = x[pv.p0];
        s.q0 = x[pv.q0];
        periods.push(s);
    }
    let operating_point = OperatingPoint { periods };
    let pick = |idx: &Vec<Vec<usize>>| -> Vec<Vec<f64>> {
        idx.iter()
            .map(|r| r.iter().map(|&i| x[i]).collect())
            .collect()
    };
    let der = DerSchedule {
        pv_p: pick(&instance.vars.pv_p),
        pv_q: pick(&instance.vars.pv_q),
        ev_p: pick(&instance.vars.ev_p),
        ev_q: pick(&instance.vars.ev_q),
    };
    let ev_soc = instance
        .vars
        .ev_u_begin
        .iter()
        .zip(&instance.vars.ev_u_end)
        .map(|(b, e)| SocTrajectory {
            at_begin: b.iter().map(|&i| x[i]).collect(),
            at_end: e.iter().map(|&i| x[i]).collect(),
        })
        .collect();

    let mut thermal = Vec::new();
    for (ki, &y) in instance.transformers.iter().enumerate() {
        let tr = topo.transformer(y).unwrap();
        let top_oil: Vec<f64> = instance.vars.h[ki].iter().map(|&i| x[i]).collect();
        let aging: Vec<f64> = instance.vars.f[ki].iter().map(|&i| x[i]).collect();
        let hs: Vec<f64> = (0..total)
            .map(|k| hotspot(&tr.params, top_oil[k], operating_point.periods[k].l[y]))
            .collect();
        let aging_exact = hs
            .iter()
            .map(|&th| aging_factor_exact(th))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = 0.0;
        let cumulative_lol = aging
            .iter()
            .map(|f| {
                acc += f * dt;
                acc
            })
            .collect();
        let initial_top_oil = match instance.vars.h0[ki] {
            Some(i) => x[i],
            None => instance.fixed_initial_top_oil[ki].unwrap(),
        };
        thermal.push(TransformerState {
            line: topo.line_into(y).id.clone(),
            node: y,
            hourly_cost: case.costs.transformer[&y],
            coeffs: instance.coeffs[ki].clone(),
            initial_top_oil,
            top_oil,
            hotspot: hs,
            aging,
            aging_exact,
            cumulative_lol,
        });
    }

    // Duals.
    let eq = |r: usize| z[r] / dt;
    let ineq = |r: usize| z[instance.eq.len() + r] / dt;
    let rows = &instance.rows;
    let node_table = |tab: &Vec<Vec<usize>>, f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
        tab.iter()
            .map(|r| {
                r.iter()
                    .map(|&i| if i == usize::MAX { 0.0 } else { f(i) })
                    .collect()
            })
            .collect()
    };
    let mut lambda_p = node_table(&rows.real_balance, &|r| -eq(r));
    let mut lambda_q = node_table(&rows.reactive_balance, &|r| -eq(r));
    for k in 0..total {
        lambda_p[k][0] = -eq(rows.substation_p[k]);
        lambda_q[k][0] = -eq(rows.substation_q[k]);
    }
    let duals = DualSolution {
        lambda_p,
        lambda_q,
        mu_upper: node_table(&rows.v_upper, &ineq),
        mu_lower: node_table(&rows.v_lower, &ineq),
        nu: node_table(&rows.ampacity, &ineq),
        transformers: instance.transformers.clone(),
        xi: rows
            .aging
            .iter()
            .map(|per_t| {
                per_t
                    .iter()
                    .map(|segs| segs.iter().map(|&r| ineq(r)).collect())
                    .collect()
            })
            .collect(),
        top_oil: rows
            .top_oil
            .iter()
            .map(|r| r.iter().map(|&i| eq(i)).collect())
            .collect(),
        rho: rows.cycle.iter().map(|r| r.map(eq)).collect(),
    };

    let cost = CostBreakdown {
        energy: (0..total)
            .map(|k| case.costs.energy[k] * operating_point.periods[k].p0 * dt)
            .sum(),
        reactive: (0..total)
            .map(|k| case.costs.reactive[k] * operating_point.periods[k].q0 * dt)
            .sum(),
        transformer: thermal
            .iter()
            .map(|th| th.hourly_cost * th.aging.iter().sum::<f64>() * dt)
            .sum(),
    };
    let max_primal_residual = instance
        .eq
        .iter()
        .map(|r| (r.eval(x) - r.rhs).abs())
        .chain(instance.ineq.iter().map(|r| (r.eval(x) - r.rhs).max(0.0)))
        .fold(0.0, f64::max);

    let mut report = SolveReport {
        status: SolveStatus::Optimal,
        horizon: instance.horizon,
        periods: instance.periods,
        modeled_periods: total,
        dt_hours: dt,
        objective: sol.primal_objective,
        cost,
        solver: SolverInfo {
            backend: backend.name().to_string(),
            iterations: sol.iterations,
            solve_time_s: sol.solve_time_s,
            reduced_accuracy: reduced,
            primal_objective: sol.primal_objective,
            dual_objective: sol.dual_objective,
            max_primal_residual,
        },
        operating_point,
        der,
        ev_soc,
        thermal,
        duals,
        exactness: ExactnessReport {
            max_soc_gap: 0.0,
            worst_soc: None,
            soc_threshold: DEFAULT_SOC_GAP_THRESHOLD,
            relaxation_exact: true,
            max_piecewise_gap: 0.0,
            max_xi_error: 0.0,
            binding_counts_ok: true,
            binding: Vec::new(),
        },
    };
    report.exactness = exactness_report(
        topo,
        &report,
        &instance.aging.slopes,
        DEFAULT_SOC_GAP_THRESHOLD,
    );
    if !report.exactness.relaxation_exact {
        log::warn!(
            "SOC relaxation gap {:.3e} exceeds {:.1e} at node {:?}",
            report.exactness.max_soc_gap,
            report.exactness.soc_threshold,
            report.exactness.worst_soc
        );
    }
    Ok(report)
}

fn unscale_duals(sol: &ConicSolution, scaling: &RowScaling) -> Vec<f64> {
    sol.z
        .iter()
        .zip(&scaling.weights)
        .map(|(z, w)| z * w)
        .collect()
}

/// SOC gap of the current cones and tightness of the aging rows.
pub fn exactness_report(
    topology: &FeederTopology,
    report: &SolveReport,
    segment_slopes: &[f64],
    soc_threshold: f64,
) -> ExactnessReport {
    let mut max_soc_gap = 0.0;
    let mut worst_soc = None;
    for (k, s) in report.operating_point.periods.iter().enumerate() {
        for j in 1..topology.n_nodes() {
            let i = topology.line_into(j).parent;
            let gap = s.v[i] * s.l[j] - s.p_flow[j].powi(2) - s.q_flow[j].powi(2);
            if gap.abs() > max_soc_gap {
                max_soc_gap = gap.abs();
                worst_soc = Some((j, k + 1));
            }
        }
    }
    let mut binding = Vec::new();
    let mut max_piecewise_gap: f64 = 0.0;
    let mut max_xi_error: f64 = 0.0;
    let mut counts_ok = true;
    for (ki, th) in report.thermal.iter().enumerate() {
        let c = &th.coeffs;
        for k in 0..report.modeled_periods {
            let l = report.operating_point.periods[k].l[th.node];
            let values: Vec<f64> = (0..segment_slopes.len())
                .map(|s| c.alpha[s] * th.top_oil[k] + c.beta[s] * l + c.gamma[s])
                .collect();
            let pw_max = values.iter().cloned().fold(0.0, f64::max);
            let f = th.aging[k];
            let segments: Vec<usize> = (0..values.len())
                .filter(|&s| f - values[s] <= BINDING_SLACK_TOL)
                .collect();
            let xi_sum: f64 = report.duals.xi[ki][k].iter().sum();
            let gap = f - pw_max;
            max_piecewise_gap = max_piecewise_gap.max(gap.abs());
            max_xi_error = max_xi_error.max((xi_sum - th.hourly_cost).abs());
            counts_ok &= matches!(segments.len(), 1 | 2);
            binding.push(BindingEntry {
                node: th.node,
                period: k + 1,
                segments,
                xi_sum,
                hourly_cost: th.hourly_cost,
                gap,
            });
        }
    }
    ExactnessReport {
        max_soc_gap,
        worst_soc,
        soc_threshold,
        relaxation_exact: max_soc_gap <= soc_threshold,
        max_piecewise_gap,
        max_xi_error,
        binding_counts_ok: counts_ok,
        binding,
    }
}

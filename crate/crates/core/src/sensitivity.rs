//! Sensitivities of the branch-flow state to nodal net demand.
//!
//! Differentiating the four branch-flow equations of every line around a
//! converged operating point gives `J · ∂x = e`, where `J` is the 4N × 4N
//! Jacobian of [`crate::power_flow::period_residuals`] and `e` is a unit entry
//! on the real (or reactive) balance row of the perturbed node. Unknowns per
//! line into node `j` sit at `4 (j − 1) + {0: P, 1: Q, 2: v, 3: l}`. `v_0` is
//! held fixed. `J` depends only on the period, so it is factored once per
//! period and reused for all 2N right-hand sides.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{FeederTopology, NetDemand, OperatingPoint, PeriodState};
use crate::power_flow::{branch_flow_jacobian, solve_period, PfOptions};

/// Maximum accepted `‖J x − e‖∞`.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    P,
    Q,
}

impl Kind {
    pub const BOTH: [Kind; 2] = [Kind::P, Kind::Q];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::P => "p",
            Kind::Q => "q",
        }
    }

    fn offset(self) -> usize {
        match self {
            Kind::P => 0,
            Kind::Q => 1,
        }
    }
}

/// Right-hand side for a perturbation of node `site`.
pub fn unit_rhs(n_lines: usize, site: usize, kind: Kind) -> DVector<f64> {
    let mut b = DVector::zeros(4 * n_lines);
    b[4 * (site - 1) + kind.offset()] = 1.0;
    b
}

pub fn build_system(
    topology: &FeederTopology,
    op: &OperatingPoint,
    site: usize,
    period: usize,
    kind: Kind,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_site(topology, site)?;
    let s = op
        .periods
        .get(period.wrapping_sub(1))
        .ok_or_else(|| Error::ShapeMismatch(format!("operating point has no period {period}")))?;
    Ok((
        branch_flow_jacobian(topology, s),
        unit_rhs(topology.n_lines(), site, kind),
    ))
}

fn check_site(topology: &FeederTopology, site: usize) -> Result<()> {
    if site == 0 || site >= topology.n_nodes() {
        return Err(Error::UnknownNode(format!(
            "#{site} is not a non-root node"
        )));
    }
    Ok(())
}

/// Derivatives of the state of one period with respect to one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteSensitivity {
    /// Raw solution vector, `4N` entries.
    pub x: Vec<f64>,
    /// `∂P_0`, `∂Q_0` of the root injection.
    pub dp0: f64,
    pub dq0: f64,
}

impl SiteSensitivity {
    fn new(topology: &FeederTopology, x: Vec<f64>) -> Self {
        let (dp0, dq0) = topology.children(0).iter().fold((0.0, 0.0), |(a, b), &c| {
            (a + x[4 * (c - 1)], b + x[4 * (c - 1) + 1])
        });
        Self { x, dp0, dq0 }
    }

    pub fn dp(&self, j: usize) -> f64 {
        self.x[4 * (j - 1)]
    }
    pub fn dq(&self, j: usize) -> f64 {
        self.x[4 * (j - 1) + 1]
    }
    pub fn dv(&self, j: usize) -> f64 {
        self.x[4 * (j - 1) + 2]
    }
    pub fn dl(&self, j: usize) -> f64 {
        self.x[4 * (j - 1) + 3]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodSensitivity {
    /// `[2 (site − 1) + kind]`.
    pub sites: Vec<SiteSensitivity>,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityTensor {
    pub n_lines: usize,
    /// Period `t` at index `t − 1`.
    pub periods: Vec<PeriodSensitivity>,
    pub factorizations: usize,
    pub systems: usize,
}

impl SensitivityTensor {
    pub fn get(&self, site: usize, period: usize, kind: Kind) -> Option<&SiteSensitivity> {
        if site == 0 || site > self.n_lines {
            return None;
        }
        self.periods
            .get(period.wrapping_sub(1))?
            .sites
            .get(2 * (site - 1) + kind.offset())
    }

    pub fn max_residual(&self) -> f64 {
        self.periods
            .iter()
            .map(|p| p.max_residual)
            .fold(0.0, f64::max)
    }
}

/// Solves every system of every period in parallel.
pub fn solve_all(topology: &FeederTopology, op: &OperatingPoint) -> Result<SensitivityTensor> {
    let n = topology.n_lines();
    let periods = op
        .periods
        .par_iter()
        .enumerate()
        .map(|(k, s)| solve_period_systems(topology, s, k + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityTensor {
        n_lines: n,
        factorizations: periods.len(),
        systems: 2 * n * periods.len(),
        periods,
    })
}

fn solve_period_systems(
    topology: &FeederTopology,
    s: &PeriodState,
    period: usize,
) -> Result<PeriodSensitivity> {
    let n = topology.n_lines();
    let a = branch_flow_jacobian(topology, s);
    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d.abs()), hi.max(d.abs()))
    });
    let condition = if dmin > 0.0 {
        dmax / dmin
    } else {
        f64::INFINITY
    };
    if !(condition < 1e14) {
        return Err(Error::SingularSystem { period, condition });
    }
    let mut sites = Vec::with_capacity(2 * n);
    let mut max_residual: f64 = 0.0;
    for site in 1..=n {
        for kind in Kind::BOTH {
            let b = unit_rhs(n, site, kind);
            let x = lu
                .solve(&b)
                .ok_or(Error::SingularSystem { period, condition })?;
            let res = (&a * &x - &b).amax();
            if !(res <= RESIDUAL_TOL) {
                return Err(Error::Numerical(format!(
                    "sensitivity system for node {} ({}) in period {period} has residual {res:.3e}",
                    topology.node(site).id,
                    kind.as_str()
                )));
            }
            max_residual = max_residual.max(res);
            sites.push(SiteSensitivity::new(topology, x.as_slice().to_vec()));
        }
    }
    Ok(PeriodSensitivity {
        sites,
        max_residual,
    })
}

/// Worst disagreement between linear-system and finite-difference sensitivities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdCheck {
    /// Relative error, or absolute where the linear value is below 1e−8.
    pub max_error: f64,
    /// Per-quantity errors in solution order, then `P_0`, `Q_0`.
    pub errors: Vec<f64>,
    pub finite_difference: Vec<f64>,
}

pub const FD_ABSOLUTE_BELOW: f64 = 1e-8;

pub fn fd_error(fd: f64, lin: f64) -> f64 {
    if lin.abs() < FD_ABSOLUTE_BELOW {
        (fd - lin).abs()
    } else {
        ((fd - lin) / lin).abs()
    }
}

/// Central differences of the exact power flow at `(site, period, kind)`
/// compared with the linear-system solution.
pub fn finite_difference_check(
    topology: &FeederTopology,
    demand: &NetDemand,
    root_v: &[f64],
    site: usize,
    period: usize,
    kind: Kind,
    step: f64,
) -> Result<FdCheck> {
    check_site(topology, site)?;
    let k = period
        .checked_sub(1)
        .filter(|&k| k < demand.periods() && k < root_v.len())
        .ok_or_else(|| Error::ShapeMismatch(format!("no period {period} in net demand")))?;
    let opts = PfOptions::default();
    let solve = |delta: f64| {
        let (mut p, mut q) = (demand.p[k].clone(), demand.q[k].clone());
        match kind {
            Kind::P => p[site] += delta,
            Kind::Q => q[site] += delta,
        }
        solve_period(topology, &p, &q, root_v[k], period, &opts)
    };
    let base = solve(0.0)?;
    let plus = solve(step)?;
    let minus = solve(-step)?;
    let a = branch_flow_jacobian(topology, &base);
    let lin = a
        .lu()
        .solve(&unit_rhs(topology.n_lines(), site, kind))
        .ok_or(Error::SingularSystem {
            period,
            condition: f64::INFINITY,
        })?;
    let lin = SiteSensitivity::new(topology, lin.as_slice().to_vec());
    let fd = |f: &dyn Fn(&PeriodState) -> f64| (f(&plus) - f(&minus)) / (2.0 * step);
    let mut fd_vals = Vec::with_capacity(4 * topology.n_lines() + 2);
    for j in 1..topology.n_nodes() {
        fd_vals.push(fd(&|s| s.p_flow[j]));
        fd_vals.push(fd(&|s| s.q_flow[j]));
        fd_vals.push(fd(&|s| s.v[j]));
        fd_vals.push(fd(&|s| s.l[j]));
    }
    fd_vals.push(fd(&|s| s.p0));
    fd_vals.push(fd(&|s| s.q0));
    let lin_vals: Vec<f64> = lin.x.iter().copied().chain([lin.dp0, lin.dq0]).collect();
    let errors: Vec<f64> = fd_vals
        .iter()
        .zip(&lin_vals)
        .map(|(&f, &l)| fd_error(f, l))
        .collect();
    Ok(FdCheck {
        max_error: errors.iter().copied().fold(0.0, f64::max),
        errors,
        finite_difference: fd_vals,
    })
}

//! Exact branch-flow power flow: backward/forward sweep from a flat start,
//! finished with Newton steps on the full branch-flow Jacobian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{FeederTopology, NetDemand, OperatingPoint, PeriodState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PfOptions {
    /// Max-norm residual target (p.u.).
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub max_newton: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_sweeps: 200,
            max_newton: 20,
        }
    }
}

/// Solves every period independently (in parallel).
pub fn solve_power_flow(
    topology: &FeederTopology,
    demand: &NetDemand,
    root_v: &[f64],
) -> Result<OperatingPoint> {
    solve_power_flow_with(topology, demand, root_v, &PfOptions::default())
}

pub fn solve_power_flow_with(
    topology: &FeederTopology,
    demand: &NetDemand,
    root_v: &[f64],
    opts: &PfOptions,
) -> Result<OperatingPoint> {
    let periods = demand.periods();
    if root_v.len() != periods || demand.q.len() != periods {
        return Err(Error::ShapeMismatch(format!(
            "net demand has {periods} periods, root voltage {}",
            root_v.len()
        )));
    }
    let states = (0..periods)
        .into_par_iter()
        .map(|k| solve_period(topology, &demand.p[k], &demand.q[k], root_v[k], k + 1, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatingPoint { periods: states })
}

/// Solves one period. `period` only labels errors.
pub fn solve_period(
    topology: &FeederTopology,
    p: &[f64],
    q: &[f64],
    v0: f64,
    period: usize,
    opts: &PfOptions,
) -> Result<PeriodState> {
    let n = topology.n_nodes();
    if p.len() != n || q.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "period {period}: net demand has {} entries, feeder has {n} nodes",
            p.len()
        )));
    }
    if !(v0 > 0.0 && v0.is_finite()) || p.iter().chain(q).any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!(
            "period {period}: net demand and root voltage must be finite, v0 > 0"
        )));
    }
    let mut s = PeriodState::flat(n, v0);
    s.p_net.copy_from_slice(p);
    s.q_net.copy_from_slice(q);
    s.p_net[0] = 0.0;
    s.q_net[0] = 0.0;
    if n == 1 {
        return Ok(s);
    }

    let mut worst = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        sweep(topology, &mut s, period)?;
        worst = max_abs(&period_residuals(topology, &s));
        if worst <= opts.tolerance {
            break;
        }
        if !worst.is_finite() {
            break;
        }
    }

    // Newton refinement; also rescues slow sweeps.
    for _ in 0..opts.max_newton {
        let r = DVector::from_vec(period_residuals(topology, &s));
        let before = r.amax();
        if before == 0.0 {
            break;
        }
        let j = branch_flow_jacobian(topology, &s);
        let Some(dx) = j.lu().solve(&(-r)) else { break };
        let mut trial = s.clone();
        apply_step(topology, &mut trial, dx.as_slice());
        let after = max_abs(&period_residuals(topology, &trial));
        if !(after < before) {
            break;
        }
        s = trial;
        worst = after;
        check_voltages(topology, &s, period)?;
        if after < opts.tolerance * 1e-4 {
            break;
        }
    }
    if !(worst <= opts.tolerance) {
        return Err(Error::NonConvergence {
            period,
            iterations: sweeps,
            residual: worst,
        });
    }
    s.p0 = topology.children(0).iter().map(|&k| s.p_flow[k]).sum();
    s.q0 = topology.children(0).iter().map(|&k| s.q_flow[k]).sum();
    Ok(s)
}

fn sweep(topology: &FeederTopology, s: &mut PeriodState, period: usize) -> Result<()> {
    let n = topology.n_nodes();
    for j in (1..n).rev() {
        let line = topology.line_into(j);
        let (mut pj, mut qj) = (s.p_net[j] + line.r * s.l[j], s.q_net[j] + line.x * s.l[j]);
        for &k in topology.children(j) {
            pj += s.p_flow[k];
            qj += s.q_flow[k];
        }
        s.p_flow[j] = pj;
        s.q_flow[j] = qj;
    }
    for j in 1..n {
        let line = topology.line_into(j);
        let vi = s.v[line.parent];
        let (pj, qj) = (s.p_flow[j], s.q_flow[j]);
        s.v[j] =
            vi - 2.0 * (line.r * pj + line.x * qj) + (line.r * line.r + line.x * line.x) * s.l[j];
        s.l[j] = (pj * pj + qj * qj) / vi;
    }
    check_voltages(topology, s, period)
}

fn check_voltages(topology: &FeederTopology, s: &PeriodState, period: usize) -> Result<()> {
    match s.v.iter().position(|&v| !(v > 0.0)) {
        Some(j) => Err(Error::VoltageCollapse {
            node: topology.node(j).id.clone(),
            period,
            v: s.v[j],
        }),
        None => Ok(()),
    }
}

fn apply_step(topology: &FeederTopology, s: &mut PeriodState, dx: &[f64]) {
    for j in 1..topology.n_nodes() {
        let k = 4 * (j - 1);
        s.p_flow[j] += dx[k];
        s.q_flow[j] += dx[k + 1];
        s.v[j] += dx[k + 2];
        s.l[j] += dx[k + 3];
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(
        0.0,
        |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) },
    )
}

/// Residuals of the four branch-flow equations per line, ordered
/// `[real, reactive, voltage, current]` for the line into node `j` at
/// `4 (j − 1)`.
pub fn period_residuals(topology: &FeederTopology, s: &PeriodState) -> Vec<f64> {
    let n = topology.n_nodes();
    let mut r = vec![0.0; 4 * (n - 1)];
    for j in 1..n {
        let line = topology.line_into(j);
        let i = line.parent;
        let k = 4 * (j - 1);
        let (pj, qj, lj) = (s.p_flow[j], s.q_flow[j], s.l[j]);
        let (sum_p, sum_q) = topology
            .children(j)
            .iter()
            .fold((0.0, 0.0), |(a, b), &c| (a + s.p_flow[c], b + s.q_flow[c]));
        r[k] = pj - line.r * lj - sum_p - s.p_net[j];
        r[k + 1] = qj - line.x * lj - sum_q - s.q_net[j];
        r[k + 2] = s.v[j] - s.v[i] + 2.0 * (line.r * pj + line.x * qj)
            - (line.r * line.r + line.x * line.x) * lj;
        r[k + 3] = s.v[i] * lj - pj * pj - qj * qj;
    }
    r
}

/// Jacobian of [`period_residuals`] with respect to `(P, Q, v, l)` of every
/// line, `v_0` held fixed. This is also the sensitivity system matrix.
pub fn branch_flow_jacobian(topology: &FeederTopology, s: &PeriodState) -> DMatrix<f64> {
    let n = topology.n_lines();
    let mut a = DMatrix::zeros(4 * n, 4 * n);
    for j in 1..=n {
        let line = topology.line_into(j);
        let i = line.parent;
        let k = 4 * (j - 1);
        let (r, x) = (line.r, line.x);
        a[(k, k)] = 1.0;
        a[(k, k + 3)] = -r;
        a[(k + 1, k + 1)] = 1.0;
        a[(k + 1, k + 3)] = -x;
        for &c in topology.children(j) {
            let kc = 4 * (c - 1);
            a[(k, kc)] = -1.0;
            a[(k + 1, kc + 1)] = -1.0;
        }
        a[(k + 2, k)] = 2.0 * r;
        a[(k + 2, k + 1)] = 2.0 * x;
        a[(k + 2, k + 2)] = 1.0;
        a[(k + 2, k + 3)] = -(r * r + x * x);
        a[(k + 3, k)] = -2.0 * s.p_flow[j];
        a[(k + 3, k + 1)] = -2.0 * s.q_flow[j];
        a[(k + 3, k + 3)] = s.v[i];
        if i != 0 {
            let ki = 4 * (i - 1);
            a[(k + 2, ki + 2)] = -1.0;
            a[(k + 3, ki + 2)] = s.l[j];
        }
    }
    a
}

/// Max-norm residual of each branch-flow equation over all lines and periods.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ResidualReport {
    pub real_balance: f64,
    pub reactive_balance: f64,
    pub voltage_drop: f64,
    pub current_definition: f64,
    /// Root injection minus the flows leaving the root.
    pub substation: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        [
            self.real_balance,
            self.reactive_balance,
            self.voltage_drop,
            self.current_definition,
            self.substation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn residual_report(topology: &FeederTopology, op: &OperatingPoint) -> Result<ResidualReport> {
    let n = topology.n_nodes();
    let mut rep = ResidualReport::default();
    for (k, s) in op.periods.iter().enumerate() {
        let lens = [
            s.v.len(),
            s.l.len(),
            s.p_flow.len(),
            s.q_flow.len(),
            s.p_net.len(),
            s.q_net.len(),
        ];
        if lens.iter().any(|&m| m != n) {
            return Err(Error::ShapeMismatch(format!(
                "period {}: operating point vectors must have {n} entries",
                k + 1
            )));
        }
        let r = period_residuals(topology, s);
        for (m, v) in r.iter().enumerate() {
            let slot = match m % 4 {
                0 => &mut rep.real_balance,
                1 => &mut rep.reactive_balance,
                2 => &mut rep.voltage_drop,
                _ => &mut rep.current_definition,
            };
            *slot = slot.max(v.abs());
        }
        let (p0, q0) = topology
            .children(0)
            .iter()
            .fold((0.0, 0.0), |(a, b), &c| (a + s.p_flow[c], b + s.q_flow[c]));
        rep.substation = rep.substation.max((s.p0 - p0).abs()).max((s.q0 - q0).abs());
    }
    Ok(rep)
}

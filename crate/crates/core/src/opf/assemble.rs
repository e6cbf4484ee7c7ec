use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::backend::{Cone, ConeProgram};
use crate::der::{
    build_ev_constraints, build_pv_constraints, EvConstraintSet, PvConstraintSet, PvPeriodRule,
};
use crate::error::{Error, Result};
use crate::network::Feeder;
use crate::power_flow::{solve_period, PfOptions};
use crate::thermal::{
    linearized_coefficients, steady_state_top_oil, LinearizedCoeffs, PiecewiseAging,
};

/// Default number of appended periods in extended-horizon mode.
pub const DEFAULT_EXTENSION: usize = 12;

/// How the thermal state at the end of the horizon is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(into = "String", try_from = "String")]
pub enum HorizonEnd {
    /// `h_T = h_0` for every transformer.
    #[default]
    Cycle,
    /// Append this many periods; `h_0` is fixed.
    Extended(usize),
}

impl HorizonEnd {
    pub fn extra_periods(&self) -> usize {
        match *self {
            HorizonEnd::Cycle => 0,
            HorizonEnd::Extended(e) => e,
        }
    }
}

impl fmt::Display for HorizonEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HorizonEnd::Cycle => write!(f, "cycle"),
            HorizonEnd::Extended(e) => write!(f, "extended:{e}"),
        }
    }
}

impl FromStr for HorizonEnd {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cycle" => Ok(HorizonEnd::Cycle),
            "extended" => Ok(HorizonEnd::Extended(DEFAULT_EXTENSION)),
            other => other
                .strip_prefix("extended:")
                .and_then(|e| e.parse().ok())
                .map(HorizonEnd::Extended)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "horizon end `{other}` is not `cycle`, `extended` or `extended:E`"
                    ))
                }),
        }
    }
}

impl From<HorizonEnd> for String {
    fn from(h: HorizonEnd) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for HorizonEnd {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Variables of one period. Vectors are indexed by node (line into node);
/// slot 0 holds `usize::MAX` except for `v`, which is not a variable at the root.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodVars {
    pub v: Vec<usize>,
    pub l: Vec<usize>,
    pub p_flow: Vec<usize>,
    pub q_flow: Vec<usize>,
    pub p_net: Vec<usize>,
    pub q_net: Vec<usize>,
    pub p0: usize,
    pub q0: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarIndex {
    /// Period `t` at index `t − 1`.
    pub periods: Vec<PeriodVars>,
    /// `[transformer][t − 1]`.
    pub f: Vec<Vec<usize>>,
    pub h: Vec<Vec<usize>>,
    /// Free initial top-oil variable (cycle mode only).
    pub h0: Vec<Option<usize>>,
    pub pv_p: Vec<Vec<usize>>,
    pub pv_q: Vec<Vec<usize>>,
    pub ev_p: Vec<Vec<usize>>,
    pub ev_q: Vec<Vec<usize>>,
    /// SoC at the begin and end of every interval, `[ev][interval]`.
    pub ev_u_begin: Vec<Vec<usize>>,
    pub ev_u_end: Vec<Vec<usize>>,
}

/// Row positions of the constraints whose duals are reported. Equality and
/// inequality rows are numbered within their own block; cones by block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIndex {
    pub substation_p: Vec<usize>,
    pub substation_q: Vec<usize>,
    /// `[t − 1][j]`, slot 0 unused.
    pub real_balance: Vec<Vec<usize>>,
    pub reactive_balance: Vec<Vec<usize>>,
    pub voltage_drop: Vec<Vec<usize>>,
    /// `[transformer][t − 1]`.
    pub top_oil: Vec<Vec<usize>>,
    pub cycle: Vec<Option<usize>>,
    pub v_upper: Vec<Vec<usize>>,
    pub v_lower: Vec<Vec<usize>>,
    pub ampacity: Vec<Vec<usize>>,
    /// `[transformer][t − 1][segment]`.
    pub aging: Vec<Vec<Vec<usize>>>,
    /// Cone block of the relaxed current definition, `[t − 1][j]`.
    pub current_cone: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Substation,
    RealBalance,
    ReactiveBalance,
    VoltageDrop,
    InjectionP,
    InjectionQ,
    TopOil,
    Cycle,
    PvFix,
    EvFix,
    EvSoc,
    VoltageUpper,
    VoltageLower,
    Ampacity,
    Aging,
    Nonneg,
    PvCap,
    EvRate,
    EvSocBound,
    CurrentCone,
    PvCone,
    EvCone,
}

/// `Σ coeffs·x` against `rhs`: `= rhs` in the equality block, `≤ rhs` in the
/// inequality block, and `s = rhs − Σ coeffs·x` inside a cone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinRow {
    fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, a)| a * x[k]).sum()
    }

    fn max_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, &(_, a)| m.max(a.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocBlock {
    pub kind: RowKind,
    pub rows: Vec<LinRow>,
}

/// The full relaxed planning problem in row form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance {
    /// Case actually modeled (extended in extended-horizon mode).
    pub feeder: Feeder,
    pub horizon: HorizonEnd,
    /// Periods of the original day.
    pub periods: usize,
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub eq: Vec<LinRow>,
    pub eq_kinds: Vec<RowKind>,
    pub ineq: Vec<LinRow>,
    pub ineq_kinds: Vec<RowKind>,
    pub cones: Vec<SocBlock>,
    pub vars: VarIndex,
    pub rows: RowIndex,
    /// Child node of every transformer line.
    pub transformers: Vec<usize>,
    pub coeffs: Vec<LinearizedCoeffs>,
    pub aging: PiecewiseAging,
    /// Fixed initial top-oil temperature per transformer (extended mode).
    pub fixed_initial_top_oil: Vec<Option<f64>>,
    pub pv_sets: Vec<PvConstraintSet>,
    pub ev_sets: Vec<EvConstraintSet>,
}

/// Row weights applied when building the conic program: stacked row `i`
/// was multiplied by `weights[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowScaling {
    pub weights: Vec<f64>,
}

impl ProblemInstance {
    pub fn modeled_periods(&self) -> usize {
        self.vars.periods.len()
    }

    pub fn count(&self, kind: RowKind) -> usize {
        self.eq_kinds
            .iter()
            .chain(&self.ineq_kinds)
            .filter(|&&k| k == kind)
            .count()
            + self.cones.iter().filter(|c| c.kind == kind).count()
    }

    /// Offset of the first cone row in the stacked program.
    pub fn cone_offset(&self) -> usize {
        self.eq.len() + self.ineq.len()
    }

    /// Stacked row positions of each cone block.
    pub fn cone_row_starts(&self) -> Vec<usize> {
        let mut at = self.cone_offset();
        self.cones
            .iter()
            .map(|c| {
                let s = at;
                at += c.rows.len();
                s
            })
            .collect()
    }

    /// Stacks the blocks as `[zero | nonneg | soc...]`, scaling every linear
    /// row to unit max coefficient and every cone block by one scalar.
    pub fn to_cone_program(&self) -> (ConeProgram, RowScaling) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut weights = Vec::new();
        let mut push =
            |row: &LinRow, w: f64, a: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
                let r = b.len();
                for &(k, v) in &row.coeffs {
                    if v != 0.0 {
                        a.push((r, k, v * w));
                    }
                }
                b.push(row.rhs * w);
                weights.push(w);
            };
        let weight = |m: f64| if m > 0.0 { 1.0 / m } else { 1.0 };
        for row in self.eq.iter().chain(&self.ineq) {
            push(row, weight(row.max_coeff()), &mut a, &mut b);
        }
        let mut cones = vec![Cone::Zero(self.eq.len()), Cone::Nonneg(self.ineq.len())];
        for block in &self.cones {
            let w = weight(block.rows.iter().map(LinRow::max_coeff).fold(0.0, f64::max));
            for row in &block.rows {
                push(row, w, &mut a, &mut b);
            }
            cones.push(Cone::Soc(block.rows.len()));
        }
        (
            ConeProgram {
                n_vars: self.n_vars,
                c: self.objective.clone(),
                a,
                b,
                cones,
            },
            RowScaling { weights },
        )
    }
}

struct Builder {
    n: usize,
    eq: Vec<LinRow>,
    eq_kinds: Vec<RowKind>,
    ineq: Vec<LinRow>,
    ineq_kinds: Vec<RowKind>,
    cones: Vec<SocBlock>,
}

impl Builder {
    fn var(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    fn vars(&mut self, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.var()).collect()
    }

    fn eq(&mut self, kind: RowKind, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push(LinRow::new(coeffs, rhs));
        self.eq_kinds.push(kind);
        self.eq.len() - 1
    }

    fn le(&mut self, kind: RowKind, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ineq.push(LinRow::new(coeffs, rhs));
        self.ineq_kinds.push(kind);
        self.ineq.len() - 1
    }

    fn nonneg(&mut self, x: usize) {
        self.le(RowKind::Nonneg, vec![(x, -1.0)], 0.0);
    }

    fn cone(&mut self, kind: RowKind, rows: Vec<LinRow>) -> usize {
        self.cones.push(SocBlock { kind, rows });
        self.cones.len() - 1
    }
}

/// Builds the relaxed planning problem for a feeder.
pub fn assemble(feeder: &Feeder, horizon: HorizonEnd) -> Result<ProblemInstance> {
    let periods = feeder.periods();
    let case = match horizon {
        HorizonEnd::Cycle => feeder.clone(),
        HorizonEnd::Extended(e) => feeder.extended(e)?,
    };
    let topo = &case.topology;
    let n_nodes = topo.n_nodes();
    let total = case.periods();
    let dt = case.grid.dt_hours();
    check_shapes(&case)?;

    let aging = PiecewiseAging::new(&case.aging_breakpoints)?;
    let transformers = topo.transformers();
    let coeffs: Vec<LinearizedCoeffs> = transformers
        .iter()
        .map(|&y| linearized_coefficients(&topo.transformer(y).unwrap().params, &aging, dt))
        .collect();
    for &y in &transformers {
        if !case.costs.transformer.get(&y).is_some_and(|c| *c > 0.0) {
            return Err(Error::Validation(format!(
                "transformer on line `{}` needs a positive hourly cost",
                topo.line_into(y).id
            )));
        }
    }
    let pv_sets: Vec<PvConstraintSet> = case.pv.iter().map(build_pv_constraints).collect();
    let ev_sets = case
        .ev
        .iter()
        .map(|ev| build_ev_constraints(ev, total, dt))
        .collect::<Result<Vec<_>>>()?;
    let fixed_initial_top_oil = match horizon {
        HorizonEnd::Cycle => {
            for &y in &transformers {
                if topo.transformer(y).unwrap().initial_top_oil.is_some() {
                    log::warn!(
                        "line `{}`: initial top-oil temperature ignored in cycle mode",
                        topo.line_into(y).id
                    );
                }
            }
            vec![None; transformers.len()]
        }
        HorizonEnd::Extended(_) => initial_top_oil(&case)?.into_iter().map(Some).collect(),
    };

    let mut bld = Builder {
        n: 0,
        eq: Vec::new(),
        eq_kinds: Vec::new(),
        ineq: Vec::new(),
        ineq_kinds: Vec::new(),
        cones: Vec::new(),
    };
    const NONE: usize = usize::MAX;

    // Variables.
    let mut pvars = Vec::with_capacity(total);
    for _ in 0..total {
        let node_vec = |bld: &mut Builder| {
            let mut v = vec![NONE];
            v.extend(bld.vars(n_nodes - 1));
            v
        };
        let v = node_vec(&mut bld);
        let l = node_vec(&mut bld);
        let p_flow = node_vec(&mut bld);
        let q_flow = node_vec(&mut bld);
        let p0 = bld.var();
        let q0 = bld.var();
        let p_net = node_vec(&mut bld);
        let q_net = node_vec(&mut bld);
        pvars.push(PeriodVars {
            v,
            l,
            p_flow,
            q_flow,
            p_net,
            q_net,
            p0,
            q0,
        });
    }
    let f: Vec<Vec<usize>> = transformers.iter().map(|_| bld.vars(total)).collect();
    let h: Vec<Vec<usize>> = transformers.iter().map(|_| bld.vars(total)).collect();
    let h0: Vec<Option<usize>> = transformers
        .iter()
        .map(|_| matches!(horizon, HorizonEnd::Cycle).then(|| bld.var()))
        .collect();
    let pv_p: Vec<Vec<usize>> = case.pv.iter().map(|_| bld.vars(total)).collect();
    let pv_q: Vec<Vec<usize>> = case.pv.iter().map(|_| bld.vars(total)).collect();
    let ev_p: Vec<Vec<usize>> = case.ev.iter().map(|_| bld.vars(total)).collect();
    let ev_q: Vec<Vec<usize>> = case.ev.iter().map(|_| bld.vars(total)).collect();
    let ev_u_begin: Vec<Vec<usize>> = case
        .ev
        .iter()
        .map(|e| bld.vars(e.intervals.len()))
        .collect();
    let ev_u_end: Vec<Vec<usize>> = case
        .ev
        .iter()
        .map(|e| bld.vars(e.intervals.len()))
        .collect();

    // Objective.
    let mut objective = vec![0.0; bld.n];
    for (k, pv) in pvars.iter().enumerate() {
        objective[pv.p0] = case.costs.energy[k] * dt;
        objective[pv.q0] = case.costs.reactive[k] * dt;
    }
    for (ki, &y) in transformers.iter().enumerate() {
        for &fv in &f[ki] {
            objective[fv] = case.costs.transformer[&y] * dt;
        }
    }

    let mut rows = RowIndex {
        substation_p: Vec::new(),
        substation_q: Vec::new(),
        real_balance: Vec::new(),
        reactive_balance: Vec::new(),
        voltage_drop: Vec::new(),
        top_oil: vec![Vec::new(); transformers.len()],
        cycle: vec![None; transformers.len()],
        v_upper: Vec::new(),
        v_lower: Vec::new(),
        ampacity: Vec::new(),
        aging: vec![Vec::new(); transformers.len()],
        current_cone: Vec::new(),
    };

    let base = case.base_demand();
    for (k, pv) in pvars.iter().enumerate() {
        let t = k + 1;
        let v0 = case.root_voltage[k];
        let mut sub_p = vec![(pv.p0, 1.0)];
        let mut sub_q = vec![(pv.q0, 1.0)];
        for &c in topo.children(0) {
            sub_p.push((pv.p_flow[c], -1.0));
            sub_q.push((pv.q_flow[c], -1.0));
        }
        rows.substation_p
            .push(bld.eq(RowKind::Substation, sub_p, 0.0));
        rows.substation_q
            .push(bld.eq(RowKind::Substation, sub_q, 0.0));

        let mut rb = vec![NONE];
        let mut qb = vec![NONE];
        let mut vd = vec![NONE];
        for j in 1..n_nodes {
            let line = topo.line_into(j);
            let mut cp = vec![(pv.p_flow[j], 1.0), (pv.l[j], -line.r), (pv.p_net[j], -1.0)];
            let mut cq = vec![(pv.q_flow[j], 1.0), (pv.l[j], -line.x), (pv.q_net[j], -1.0)];
            for &c in topo.children(j) {
                cp.push((pv.p_flow[c], -1.0));
                cq.push((pv.q_flow[c], -1.0));
            }
            rb.push(bld.eq(RowKind::RealBalance, cp, 0.0));
            qb.push(bld.eq(RowKind::ReactiveBalance, cq, 0.0));

            let i = line.parent;
            let z2 = line.r * line.r + line.x * line.x;
            let mut cv = vec![
                (pv.v[j], 1.0),
                (pv.p_flow[j], 2.0 * line.r),
                (pv.q_flow[j], 2.0 * line.x),
                (pv.l[j], -z2),
            ];
            let rhs = if i == 0 {
                v0
            } else {
                cv.push((pv.v[i], -1.0));
                0.0
            };
            vd.push(bld.eq(RowKind::VoltageDrop, cv, rhs));
        }
        rows.real_balance.push(rb);
        rows.reactive_balance.push(qb);
        rows.voltage_drop.push(vd);

        // Net injections.
        for j in 1..n_nodes {
            let mut cp = vec![(pv.p_net[j], 1.0)];
            let mut cq = vec![(pv.q_net[j], 1.0)];
            for (s, unit) in case.pv.iter().enumerate() {
                if unit.node == j {
                    cp.push((pv_p[s][k], 1.0));
                    cq.push((pv_q[s][k], 1.0));
                }
            }
            for (e, ev) in case.ev.iter().enumerate() {
                if ev.interval_at(t).is_some_and(|z| ev.intervals[z].node == j) {
                    cp.push((ev_p[e][k], -1.0));
                    cq.push((ev_q[e][k], -1.0));
                }
            }
            bld.eq(RowKind::InjectionP, cp, base.p[k][j]);
            bld.eq(RowKind::InjectionQ, cq, base.q[k][j]);
        }

        // Thermal recursion.
        for (ki, &y) in transformers.iter().enumerate() {
            let c = &coeffs[ki];
            let ambient = case.ambient_for(y)[k];
            let mut co = vec![(h[ki][k], 1.0), (pv.l[y], -c.epsilon)];
            let mut rhs = c.zeta(ambient);
            if k > 0 {
                co.push((h[ki][k - 1], -c.delta));
            } else if let Some(h0v) = h0[ki] {
                co.push((h0v, -c.delta));
            } else {
                rhs += c.delta * fixed_initial_top_oil[ki].unwrap();
            }
            rows.top_oil[ki].push(bld.eq(RowKind::TopOil, co, rhs));
        }
    }
    for (ki, h0v) in h0.iter().enumerate() {
        if let Some(h0v) = *h0v {
            rows.cycle[ki] = Some(bld.eq(
                RowKind::Cycle,
                vec![(h[ki][total - 1], 1.0), (h0v, -1.0)],
                0.0,
            ));
        }
    }

    // PV and EV equalities.
    for (s, set) in pv_sets.iter().enumerate() {
        for (k, rule) in set.periods.iter().enumerate() {
            if *rule == PvPeriodRule::Fixed {
                bld.eq(RowKind::PvFix, vec![(pv_p[s][k], 1.0)], 0.0);
                bld.eq(RowKind::PvFix, vec![(pv_q[s][k], 1.0)], 0.0);
            }
        }
    }
    for (e, set) in ev_sets.iter().enumerate() {
        for &t in &set.off_periods {
            bld.eq(RowKind::EvFix, vec![(ev_p[e][t - 1], 1.0)], 0.0);
            bld.eq(RowKind::EvFix, vec![(ev_q[e][t - 1], 1.0)], 0.0);
        }
        for (z, iv) in set.intervals.iter().enumerate() {
            if z == 0 {
                bld.eq(
                    RowKind::EvSoc,
                    vec![(ev_u_begin[e][0], 1.0)],
                    set.initial_soc,
                );
            } else {
                bld.eq(
                    RowKind::EvSoc,
                    vec![(ev_u_begin[e][z], 1.0), (ev_u_end[e][z - 1], -1.0)],
                    -set.intervals[z - 1].depletion_after,
                );
            }
            let mut co = vec![(ev_u_end[e][z], 1.0), (ev_u_begin[e][z], -1.0)];
            for t in iv.begin + 1..=iv.end {
                co.push((ev_p[e][t - 1], -dt));
            }
            bld.eq(RowKind::EvSoc, co, 0.0);
        }
    }

    // Inequalities.
    for (k, pv) in pvars.iter().enumerate() {
        let (mut vu, mut vl, mut am) = (vec![NONE], vec![NONE], vec![NONE]);
        for j in 1..n_nodes {
            let node = topo.node(j);
            vu.push(bld.le(RowKind::VoltageUpper, vec![(pv.v[j], 1.0)], node.v_max));
            vl.push(bld.le(RowKind::VoltageLower, vec![(pv.v[j], -1.0)], -node.v_min));
            am.push(bld.le(
                RowKind::Ampacity,
                vec![(pv.l[j], 1.0)],
                topo.line_into(j).l_max,
            ));
        }
        rows.v_upper.push(vu);
        rows.v_lower.push(vl);
        rows.ampacity.push(am);
        for (ki, &y) in transformers.iter().enumerate() {
            let c = &coeffs[ki];
            let segs = (0..aging.segments())
                .map(|s| {
                    bld.le(
                        RowKind::Aging,
                        vec![
                            (h[ki][k], c.alpha[s]),
                            (pv.l[y], c.beta[s]),
                            (f[ki][k], -1.0),
                        ],
                        -c.gamma[s],
                    )
                })
                .collect();
            rows.aging[ki].push(segs);
        }
        for j in 1..n_nodes {
            bld.nonneg(pv.v[j]);
            bld.nonneg(pv.l[j]);
        }
        for fk in &f {
            bld.nonneg(fk[k]);
        }
    }
    for (s, set) in pv_sets.iter().enumerate() {
        for (k, rule) in set.periods.iter().enumerate() {
            if let PvPeriodRule::Active { cap, .. } = *rule {
                bld.le(RowKind::PvCap, vec![(pv_p[s][k], 1.0)], cap);
                bld.nonneg(pv_p[s][k]);
            }
        }
    }
    for (e, set) in ev_sets.iter().enumerate() {
        for (k, &p) in ev_p[e].iter().enumerate().take(total) {
            if !set.off_periods.contains(&(k + 1)) {
                bld.le(RowKind::EvRate, vec![(p, 1.0)], set.rate_cap);
                bld.nonneg(p);
            }
        }
        for (z, iv) in set.intervals.iter().enumerate() {
            bld.le(
                RowKind::EvSocBound,
                vec![(ev_u_end[e][z], -1.0)],
                -iv.min_soc,
            );
            bld.le(RowKind::EvSocBound, vec![(ev_u_end[e][z], 1.0)], iv.max_soc);
            bld.nonneg(ev_u_begin[e][z]);
            bld.nonneg(ev_u_end[e][z]);
        }
    }

    // Cones: (v_i + l, 2P, 2Q, v_i − l) for every line, then DER envelopes.
    for (k, pv) in pvars.iter().enumerate() {
        let v0 = case.root_voltage[k];
        let mut blocks = vec![NONE];
        for j in 1..n_nodes {
            let i = topo.line_into(j).parent;
            let (vi_co, vi_rhs) = if i == 0 {
                (vec![], v0)
            } else {
                (vec![(pv.v[i], -1.0)], 0.0)
            };
            let mut r0 = vi_co.clone();
            r0.push((pv.l[j], -1.0));
            let mut r3 = vi_co;
            r3.push((pv.l[j], 1.0));
            blocks.push(bld.cone(
                RowKind::CurrentCone,
                vec![
                    LinRow::new(r0, vi_rhs),
                    LinRow::new(vec![(pv.p_flow[j], -2.0)], 0.0),
                    LinRow::new(vec![(pv.q_flow[j], -2.0)], 0.0),
                    LinRow::new(r3, vi_rhs),
                ],
            ));
        }
        rows.current_cone.push(blocks);
    }
    for (s, set) in pv_sets.iter().enumerate() {
        for (k, rule) in set.periods.iter().enumerate() {
            if let PvPeriodRule::Active { radius, .. } = *rule {
                bld.cone(
                    RowKind::PvCone,
                    vec![
                        LinRow::new(vec![], radius),
                        LinRow::new(vec![(pv_p[s][k], -1.0)], 0.0),
                        LinRow::new(vec![(pv_q[s][k], -1.0)], 0.0),
                    ],
                );
            }
        }
    }
    for (e, set) in ev_sets.iter().enumerate() {
        for k in 0..total {
            if !set.off_periods.contains(&(k + 1)) {
                bld.cone(
                    RowKind::EvCone,
                    vec![
                        LinRow::new(vec![], set.charger_radius),
                        LinRow::new(vec![(ev_p[e][k], -1.0)], 0.0),
                        LinRow::new(vec![(ev_q[e][k], -1.0)], 0.0),
                    ],
                );
            }
        }
    }

    Ok(ProblemInstance {
        horizon,
        periods,
        n_vars: bld.n,
        objective,
        eq: bld.eq,
        eq_kinds: bld.eq_kinds,
        ineq: bld.ineq,
        ineq_kinds: bld.ineq_kinds,
        cones: bld.cones,
        vars: VarIndex {
            periods: pvars,
            f,
            h,
            h0,
            pv_p,
            pv_q,
            ev_p,
            ev_q,
            ev_u_begin,
            ev_u_end,
        },
        rows,
        transformers,
        coeffs,
        aging,
        fixed_initial_top_oil,
        pv_sets,
        ev_sets,
        feeder: case,
    })
}

fn check_shapes(case: &Feeder) -> Result<()> {
    let t = case.periods();
    let series = [
        ("energy price", case.costs.energy.len()),
        ("reactive price", case.costs.reactive.len()),
        ("root voltage", case.root_voltage.len()),
        ("ambient temperature", case.ambient.len()),
    ];
    for (what, len) in series {
        if len != t {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {len} periods, expected {t}"
            )));
        }
    }
    for load in &case.loads {
        if load.p.len() != t || load.q.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "load `{}` series length",
                load.id
            )));
        }
    }
    for pv in &case.pv {
        if pv.irradiance.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "pv `{}` irradiance length",
                pv.id
            )));
        }
    }
    Ok(())
}

/// Initial top-oil per transformer: the given value, or the steady state
/// under the period-1 current of the conventional loads alone.
fn initial_top_oil(case: &Feeder) -> Result<Vec<f64>> {
    let topo = &case.topology;
    let ys = topo.transformers();
    let mut first: Option<Vec<f64>> = None;
    ys.iter()
        .map(|&y| {
            let tr = topo.transformer(y).unwrap();
            if let Some(h) = tr.initial_top_oil {
                return Ok(h);
            }
            if first.is_none() {
                let d = case.base_demand();
                let s = solve_period(
                    topo,
                    &d.p[0],
                    &d.q[0],
                    case.root_voltage[0],
                    1,
                    &PfOptions::default(),
                )?;
                first = Some(s.l);
            }
            let l0 = first.as_ref().unwrap()[y];
            Ok(steady_state_top_oil(&tr.params, l0, case.ambient_for(y)[0]))
        })
        .collect()
}

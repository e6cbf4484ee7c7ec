//! Radial feeder model: topology, time grid, prices and operating points.
//!
//! Nodes are stored in breadth-first order from the root, so every parent has
//! a smaller index than its children. The line feeding node `j` is addressed by
//! `j` itself (lines are keyed by their child node); slot 0 of every
//! line-indexed vector is unused.

mod file;

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::der::{EvItinerary, LoadProfile, PvUnit};
use crate::error::{Error, Result};
use crate::thermal::ThermalParams;

pub use file::{load_feeder, parse_feeder, FeederFile};

/// Period lengths the thermal difference equations are valid for.
pub const SUPPORTED_DT_HOURS: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    periods: usize,
    dt_hours: f64,
}

impl TimeGrid {
    pub fn new(periods: usize, dt_hours: f64) -> Result<Self> {
        if periods == 0 {
            return Err(Error::Validation(
                "time_grid: periods must be at least 1".into(),
            ));
        }
        if !SUPPORTED_DT_HOURS
            .iter()
            .any(|d| (d - dt_hours).abs() < 1e-12)
        {
            return Err(Error::Validation(format!(
                "time_grid: dt_hours = {dt_hours} is not one of 0.25, 0.5, 1.0"
            )));
        }
        Ok(Self { periods, dt_hours })
    }

    /// Number of periods `T`; periods are numbered `1..=T`, `0` being the
    /// initial-condition slot.
    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt_hours
    }
}

/// Feeder-wide per-unit bases (three-phase power, line-to-line voltage).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerUnitBase {
    pub s_mva: f64,
    pub v_kv: f64,
}

impl PerUnitBase {
    pub fn new(s_mva: f64, v_kv: f64) -> Result<Self> {
        if !(s_mva > 0.0 && s_mva.is_finite() && v_kv > 0.0 && v_kv.is_finite()) {
            return Err(Error::Validation(format!(
                "bases: s_mva and v_kv must be positive (got {s_mva}, {v_kv})"
            )));
        }
        Ok(Self { s_mva, v_kv })
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.v_kv * self.v_kv / self.s_mva
    }

    pub fn i_base_amp(&self) -> f64 {
        self.s_mva * 1e3 / (3f64.sqrt() * self.v_kv)
    }

    pub fn ohm_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base_ohm()
    }

    pub fn pu_to_ohm(&self, pu: f64) -> f64 {
        pu * self.z_base_ohm()
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (1e3 * self.s_mva)
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * 1e3 * self.s_mva
    }

    /// Ampacity in amperes to a squared per-unit current limit.
    pub fn amp_to_l_pu(&self, amp: f64) -> f64 {
        let i = amp / self.i_base_amp();
        i * i
    }

    pub fn l_pu_to_amp(&self, l: f64) -> f64 {
        l.sqrt() * self.i_base_amp()
    }

    /// $/MWh to $/(p.u.·h).
    pub fn price_mwh_to_pu(&self, price: f64) -> f64 {
        price * self.s_mva
    }

    pub fn price_pu_to_mwh(&self, price: f64) -> f64 {
        price / self.s_mva
    }

    /// $/(p.u.·h) to $/kWh.
    pub fn price_pu_to_kwh(&self, price: f64) -> f64 {
        price / (1e3 * self.s_mva)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: String,
    /// Lower bound on squared voltage magnitude (p.u.).
    pub v_min: f64,
    /// Upper bound on squared voltage magnitude (p.u.).
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transformer {
    pub params: ThermalParams,
    /// Known initial top-oil temperature (°C); steady state is used otherwise.
    pub initial_top_oil: Option<f64>,
    /// Per-transformer ambient series overriding the feeder-wide one.
    pub ambient: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Line {
    pub id: String,
    pub parent: usize,
    pub child: usize,
    pub r: f64,
    pub x: f64,
    /// Ampacity limit on squared current (p.u.).
    pub l_max: f64,
    pub transformer: Option<Transformer>,
}

/// Unvalidated node description, as read from a feeder file (squared bounds).
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub v_min: f64,
    pub v_max: f64,
}

/// Unvalidated line description; endpoints are node identifiers.
#[derive(Debug, Clone)]
pub struct LineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    pub l_max: f64,
    pub transformer: Option<Transformer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeederTopology {
    nodes: Vec<Node>,
    /// `lines[j - 1]` feeds node `j`.
    lines: Vec<Line>,
    children: Vec<Vec<usize>>,
}

impl FeederTopology {
    /// Builds a validated radial topology. `root` names the substation node.
    pub fn new(root: &str, nodes: Vec<NodeSpec>, lines: Vec<LineSpec>) -> Result<Self> {
        let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
        for (k, n) in nodes.iter().enumerate() {
            if by_id.insert(n.id.as_str(), k).is_some() {
                return Err(Error::Validation(format!("duplicate node id `{}`", n.id)));
            }
        }
        let root_raw = *by_id
            .get(root)
            .ok_or_else(|| Error::Validation(format!("root node `{root}` is not declared")))?;

        let mut line_ids = BTreeMap::new();
        let mut parent_line: Vec<Option<usize>> = vec![None; nodes.len()];
        for (k, l) in lines.iter().enumerate() {
            if line_ids.insert(l.id.as_str(), k).is_some() {
                return Err(Error::Validation(format!("duplicate line id `{}`", l.id)));
            }
            let from = *by_id.get(l.from.as_str()).ok_or_else(|| {
                Error::Validation(format!("line `{}`: unknown from-node `{}`", l.id, l.from))
            })?;
            let to = *by_id.get(l.to.as_str()).ok_or_else(|| {
                Error::Validation(format!("line `{}`: unknown to-node `{}`", l.id, l.to))
            })?;
            if from == to {
                return Err(Error::Validation(format!("line `{}` is a self-loop", l.id)));
            }
            if to == root_raw {
                return Err(Error::Validation(format!(
                    "not a tree: line `{}` feeds the root node `{root}`",
                    l.id
                )));
            }
            if let Some(prev) = parent_line[to] {
                return Err(Error::Validation(format!(
                    "not a tree: node `{}` is fed by both `{}` and `{}`",
                    l.to, lines[prev].id, l.id
                )));
            }
            parent_line[to] = Some(k);
            validate_line(l)?;
        }
        for n in &nodes {
            if !(n.v_min > 0.0 && n.v_min < n.v_max && n.v_max.is_finite()) {
                return Err(Error::Validation(format!(
                    "node `{}`: voltage bounds must satisfy 0 < v_min < v_max (got {}, {})",
                    n.id, n.v_min, n.v_max
                )));
            }
        }
        for (k, n) in nodes.iter().enumerate() {
            if k != root_raw && parent_line[k].is_none() {
                return Err(Error::Validation(format!(
                    "not a tree: node `{}` is not connected to any line",
                    n.id
                )));
            }
        }

        // Breadth-first ordering from the root. Anything not reached sits on a cycle.
        let mut raw_children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (k, l) in lines.iter().enumerate() {
            let from = by_id[l.from.as_str()];
            raw_children[from].push(k);
        }
        let mut order = Vec::with_capacity(nodes.len());
        let mut new_index = vec![usize::MAX; nodes.len()];
        let mut queue = VecDeque::from([root_raw]);
        while let Some(u) = queue.pop_front() {
            new_index[u] = order.len();
            order.push(u);
            for &k in &raw_children[u] {
                queue.push_back(by_id[lines[k].to.as_str()]);
            }
        }
        if order.len() != nodes.len() {
            let start = (0..nodes.len())
                .find(|&k| new_index[k] == usize::MAX)
                .unwrap();
            let cycle = trace_cycle(start, &parent_line, &lines, &by_id);
            let names: Vec<&str> = cycle.iter().map(|&k| nodes[k].id.as_str()).collect();
            return Err(Error::Validation(format!(
                "not a tree: cycle through nodes [{}]",
                names.join(" -> ")
            )));
        }

        let new_nodes: Vec<Node> = order
            .iter()
            .map(|&k| Node {
                id: nodes[k].id.clone(),
                v_min: nodes[k].v_min,
                v_max: nodes[k].v_max,
            })
            .collect();
        let mut new_lines = Vec::with_capacity(lines.len());
        let mut children = vec![Vec::new(); nodes.len()];
        for &raw in order.iter().skip(1) {
            let l = &lines[parent_line[raw].unwrap()];
            let parent = new_index[by_id[l.from.as_str()]];
            let child = new_index[raw];
            children[parent].push(child);
            new_lines.push(Line {
                id: l.id.clone(),
                parent,
                child,
                r: l.r,
                x: l.x,
                l_max: l.l_max,
                transformer: l.transformer.clone(),
            });
        }
        Ok(Self {
            nodes: new_nodes,
            lines: new_lines,
            children,
        })
    }

    /// Number of nodes including the root (`N + 1`).
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of lines (`N`).
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &Node {
        &self.nodes[j]
    }

    /// Lines in the order of their child node.
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// The line feeding node `j` (`j >= 1`).
    pub fn line_into(&self, j: usize) -> &Line {
        &self.lines[j - 1]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        (j > 0).then(|| self.lines[j - 1].parent)
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Child indices of the lines that are transformers.
    pub fn transformers(&self) -> Vec<usize> {
        self.lines
            .iter()
            .filter(|l| l.transformer.is_some())
            .map(|l| l.child)
            .collect()
    }

    pub fn transformer(&self, y: usize) -> Option<&Transformer> {
        self.lines.get(y.wrapping_sub(1))?.transformer.as_ref()
    }

    /// Lines from `j` up to the root as `(parent, child)` pairs.
    pub fn path_to_root(&self, j: usize) -> Result<Vec<(usize, usize)>> {
        if j == 0 || j >= self.nodes.len() {
            return Err(Error::UnknownNode(format!("#{j}")));
        }
        let mut path = Vec::new();
        let mut k = j;
        while k != 0 {
            let l = &self.lines[k - 1];
            path.push((l.parent, l.child));
            k = l.parent;
        }
        Ok(path)
    }
}

fn validate_line(l: &LineSpec) -> Result<()> {
    if !(l.r >= 0.0 && l.r.is_finite()) {
        return Err(Error::Validation(format!(
            "line `{}`: resistance must be nonnegative (got {})",
            l.id, l.r
        )));
    }
    if !l.x.is_finite() {
        return Err(Error::Validation(format!(
            "line `{}`: reactance is not finite",
            l.id
        )));
    }
    if !(l.l_max > 0.0) {
        return Err(Error::Validation(format!(
            "line `{}`: ampacity limit must be positive (got {})",
            l.id, l.l_max
        )));
    }
    if let Some(t) = &l.transformer {
        t.params
            .validate()
            .map_err(|e| Error::Validation(format!("line `{}`: {e}", l.id)))?;
    }
    Ok(())
}

fn trace_cycle(
    start: usize,
    parent_line: &[Option<usize>],
    lines: &[LineSpec],
    by_id: &BTreeMap<&str, usize>,
) -> Vec<usize> {
    let mut seen = Vec::new();
    let mut k = start;
    loop {
        if let Some(pos) = seen.iter().position(|&s| s == k) {
            return seen[pos..].to_vec();
        }
        seen.push(k);
        match parent_line[k] {
            Some(li) => k = by_id[lines[li].from.as_str()],
            None => return seen,
        }
    }
}

/// Substation prices and transformer hourly costs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostInputs {
    /// Real-power price per period, $/(p.u.·h).
    pub energy: Vec<f64>,
    /// Reactive-power price per period, $/(p.u.·h).
    pub reactive: Vec<f64>,
    /// Hourly cost c_y keyed by transformer (child node index), $/h.
    pub transformer: BTreeMap<usize, f64>,
}

/// Nodal net demand, `[period][node]`, with node 0 unused.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetDemand {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl NetDemand {
    pub fn zeros(periods: usize, n_nodes: usize) -> Self {
        Self {
            p: vec![vec![0.0; n_nodes]; periods],
            q: vec![vec![0.0; n_nodes]; periods],
        }
    }

    pub fn periods(&self) -> usize {
        self.p.len()
    }
}

/// Branch-flow state of one period. Node-indexed vectors have `N + 1`
/// entries; line-indexed ones are keyed by child node with slot 0 unused.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodState {
    pub v: Vec<f64>,
    pub l: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub p0: f64,
    pub q0: f64,
    pub p_net: Vec<f64>,
    pub q_net: Vec<f64>,
}

impl PeriodState {
    pub fn flat(n_nodes: usize, v0: f64) -> Self {
        Self {
            v: vec![v0; n_nodes],
            l: vec![0.0; n_nodes],
            p_flow: vec![0.0; n_nodes],
            q_flow: vec![0.0; n_nodes],
            p0: 0.0,
            q0: 0.0,
            p_net: vec![0.0; n_nodes],
            q_net: vec![0.0; n_nodes],
        }
    }
}

/// Operating point over periods `1..=T` (stored at indices `0..T`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub periods: Vec<PeriodState>,
}

impl OperatingPoint {
    pub fn net_demand(&self) -> NetDemand {
        NetDemand {
            p: self.periods.iter().map(|s| s.p_net.clone()).collect(),
            q: self.periods.iter().map(|s| s.q_net.clone()).collect(),
        }
    }

    pub fn root_voltage(&self) -> Vec<f64> {
        self.periods.iter().map(|s| s.v[0]).collect()
    }
}

/// A complete planning case: network, horizon, prices, DERs and weather.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feeder {
    pub name: String,
    pub base: PerUnitBase,
    pub grid: TimeGrid,
    pub topology: FeederTopology,
    pub costs: CostInputs,
    /// Squared root voltage per period.
    pub root_voltage: Vec<f64>,
    pub loads: Vec<LoadProfile>,
    pub pv: Vec<PvUnit>,
    pub ev: Vec<EvItinerary>,
    /// Feeder-wide ambient temperature per period (°C).
    pub ambient: Vec<f64>,
    /// Hot-spot breakpoints (°C) for the piecewise aging curve.
    pub aging_breakpoints: Vec<f64>,
}

impl Feeder {
    pub fn periods(&self) -> usize {
        self.grid.periods()
    }

    /// Ambient series seen by transformer `y`.
    pub fn ambient_for(&self, y: usize) -> &[f64] {
        self.topology
            .transformer(y)
            .and_then(|t| t.ambient.as_deref())
            .unwrap_or(&self.ambient)
    }

    /// Net demand of the conventional loads alone.
    pub fn base_demand(&self) -> NetDemand {
        let mut d = NetDemand::zeros(self.periods(), self.topology.n_nodes());
        for load in &self.loads {
            for t in 0..self.periods() {
                d.p[t][load.node] += load.p[t];
                d.q[t][load.node] += load.q[t];
            }
        }
        d
    }

    /// Copy of the case with `extra` periods appended. Loads, irradiance,
    /// ambient temperature, prices and root voltage in the appended periods
    /// repeat the day from its first period; EVs are not connected there.
    pub fn extended(&self, extra: usize) -> Result<Feeder> {
        let t0 = self.periods();
        let total = t0 + extra;
        let ext = |s: &[f64]| -> Vec<f64> { (0..total).map(|k| s[k % t0]).collect() };
        let mut f = self.clone();
        f.grid = TimeGrid::new(total, self.grid.dt_hours())?;
        f.costs.energy = ext(&self.costs.energy);
        f.costs.reactive = ext(&self.costs.reactive);
        f.root_voltage = ext(&self.root_voltage);
        f.ambient = ext(&self.ambient);
        for load in &mut f.loads {
            load.p = ext(&load.p);
            load.q = ext(&load.q);
        }
        for pv in &mut f.pv {
            pv.irradiance = ext(&pv.irradiance);
        }
        for line in &mut f.topology.lines {
            if let Some(tr) = &mut line.transformer {
                if let Some(a) = &tr.ambient {
                    tr.ambient = Some(ext(a));
                }
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            v_min: 0.9,
            v_max: 1.1,
        }
    }

    fn line(id: &str, from: &str, to: &str) -> LineSpec {
        LineSpec {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            r: 0.01,
            x: 0.02,
            l_max: 1.0,
            transformer: None,
        }
    }

    fn chain() -> FeederTopology {
        FeederTopology::new(
            "0",
            vec![spec("0"), spec("1"), spec("2"), spec("3")],
            vec![
                line("a", "0", "1"),
                line("b", "1", "2"),
                line("c", "2", "3"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn path_on_chain() {
        let t = chain();
        assert_eq!(t.path_to_root(3).unwrap(), vec![(2, 3), (1, 2), (0, 1)]);
        assert_eq!(t.path_to_root(1).unwrap(), vec![(0, 1)]);
        assert!(t.path_to_root(0).is_err());
        assert!(t.path_to_root(4).is_err());
    }

    #[test]
    fn path_on_star() {
        let t = FeederTopology::new(
            "s",
            vec![spec("s"), spec("a"), spec("b"), spec("c")],
            vec![
                line("1", "s", "a"),
                line("2", "s", "b"),
                line("3", "s", "c"),
            ],
        )
        .unwrap();
        assert_eq!(t.path_to_root(2).unwrap(), vec![(0, 2)]);
        assert_eq!(t.children(0), &[1, 2, 3]);
    }

    #[test]
    fn reorders_parent_before_child() {
        // Declared out of order: 2 before its parent 1.
        let t = FeederTopology::new(
            "0",
            vec![spec("2"), spec("0"), spec("1")],
            vec![line("b", "1", "2"), line("a", "0", "1")],
        )
        .unwrap();
        assert_eq!(t.node(0).id, "0");
        assert_eq!(t.node(1).id, "1");
        assert_eq!(t.node(2).id, "2");
        assert_eq!(t.line_into(2).id, "b");
        for l in t.lines() {
            assert!(l.parent < l.child);
        }
    }

    #[test]
    fn rejects_cycle() {
        let err = FeederTopology::new(
            "0",
            vec![spec("0"), spec("1"), spec("2")],
            vec![line("a", "1", "2"), line("b", "2", "1")],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not a tree"), "{msg}");
        assert!(msg.contains("cycle"), "{msg}");
    }

    #[test]
    fn rejects_multiple_parents_and_bad_bounds() {
        let err = FeederTopology::new(
            "0",
            vec![spec("0"), spec("1"), spec("2")],
            vec![
                line("a", "0", "1"),
                line("b", "0", "2"),
                line("c", "1", "2"),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("fed by both"));

        let mut bad = spec("1");
        bad.v_min = 1.2;
        let err =
            FeederTopology::new("0", vec![spec("0"), bad], vec![line("a", "0", "1")]).unwrap_err();
        assert!(err.to_string().contains("node `1`"));

        let mut neg = line("a", "0", "1");
        neg.r = -0.1;
        let err = FeederTopology::new("0", vec![spec("0"), spec("1")], vec![neg]).unwrap_err();
        assert!(err.to_string().contains("line `a`"));
    }

    #[test]
    fn time_grid_granularity() {
        assert!(TimeGrid::new(24, 1.0).is_ok());
        assert!(TimeGrid::new(96, 0.25).is_ok());
        assert!(TimeGrid::new(24, 2.0).is_err());
        assert!(TimeGrid::new(0, 1.0).is_err());
    }

    #[test]
    fn per_unit_reference_values() {
        let b = PerUnitBase::new(1.0, 12.47).unwrap();
        assert!((b.z_base_ohm() - 155.5009).abs() < 1e-4);
        assert!((b.i_base_amp() - 46.299_139).abs() < 1e-6);
        assert!((b.kw_to_pu(250.0) - 0.25).abs() < 1e-15);
        assert!((b.price_mwh_to_pu(40.0) - 40.0).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn per_unit_round_trip(s in 0.1f64..100.0, kv in 0.2f64..230.0, val in 1e-3f64..1e4) {
                let b = PerUnitBase::new(s, kv).unwrap();
                let rel = |a: f64, c: f64| ((a - c) / c).abs();
                prop_assert!(rel(b.pu_to_ohm(b.ohm_to_pu(val)), val) < 1e-12);
                prop_assert!(rel(b.pu_to_kw(b.kw_to_pu(val)), val) < 1e-12);
                prop_assert!(rel(b.l_pu_to_amp(b.amp_to_l_pu(val)), val) < 1e-12);
                prop_assert!(rel(b.price_pu_to_mwh(b.price_mwh_to_pu(val)), val) < 1e-12);
            }
        }
    }
}

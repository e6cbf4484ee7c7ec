//! JSON feeder file reader. The layout is documented in `docs/feeder-format.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CostInputs, Feeder, FeederTopology, LineSpec, NodeSpec, PerUnitBase, TimeGrid, Transformer,
};
use crate::der::{EvInterval, EvItinerary, LoadProfile, PvUnit};
use crate::error::{Error, Result};
use crate::thermal::{ThermalParams, DEFAULT_BREAKPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Everything already in per-unit on the declared bases.
    #[default]
    Pu,
    /// Ohms, amperes, kW/kvar/kVA, kWh and $/MWh.
    Physical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasesSection {
    pub s_mva: f64,
    pub v_kv: f64,
    #[serde(default)]
    pub units: Units,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSection {
    pub periods: usize,
    pub dt_hours: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Series {
    Constant(f64),
    Values(Vec<f64>),
}

impl Series {
    fn expand(&self, what: &str, periods: usize) -> Result<Vec<f64>> {
        let v = match self {
            Series::Constant(c) => vec![*c; periods],
            Series::Values(v) if v.len() == periods => v.clone(),
            Series::Values(v) => {
                return Err(Error::Validation(format!(
                    "{what}: expected {periods} values, found {}",
                    v.len()
                )))
            }
        };
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("{what}: non-finite value {bad}")));
        }
        Ok(v)
    }
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: String,
    /// Voltage magnitude bounds (p.u.); squared internally.
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalEntry {
    pub loss_ratio: f64,
    pub rated_top_oil_rise: f64,
    pub rated_hotspot_rise: f64,
    #[serde(default = "d_tau_oil")]
    pub oil_time_constant_h: f64,
    #[serde(default = "d_tau_winding")]
    pub winding_time_constant_min: f64,
    #[serde(default = "d_one")]
    pub k1: f64,
    #[serde(default = "d_exp")]
    pub n: f64,
    #[serde(default = "d_exp")]
    pub m: f64,
    /// Squared nominal current (p.u.); `pu` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_nominal: Option<f64>,
    /// Rating (kVA); `physical` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_kva: Option<f64>,
    /// Hourly cost c_y ($/h).
    pub hourly_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_top_oil: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<Series>,
}

fn d_tau_oil() -> f64 {
    3.0
}
fn d_tau_winding() -> f64 {
    4.0
}
fn d_one() -> f64 {
    1.0
}
fn d_exp() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    /// Squared current limit (p.u.); `pu` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<f64>,
    /// Current limit (A); `physical` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_a: Option<f64>,
    #[serde(default)]
    pub transformer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsSection {
    pub energy: Series,
    pub reactive: Series,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub id: String,
    pub node: String,
    pub p: Series,
    pub q: Series,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvEntry {
    pub id: String,
    pub node: String,
    pub capacity: f64,
    pub irradiance: Series,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvIntervalEntry {
    pub node: String,
    /// Adjusted beginning period τ^beg (charging starts in `begin + 1`).
    pub begin: usize,
    /// Adjusted end period τ^end.
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_soc: Option<f64>,
    /// SoC consumed while travelling to the next interval.
    #[serde(default)]
    pub depletion_after: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleEntry {
    pub id: String,
    pub battery_capacity: f64,
    pub charger_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_rate: Option<f64>,
    pub initial_soc: f64,
    pub intervals: Vec<EvIntervalEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvSection {
    /// Feeder-wide charge-rate cap C_r; vehicles may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_rate: Option<f64>,
    #[serde(default)]
    pub vehicles: Vec<VehicleEntry>,
}

fn default_root_voltage() -> Series {
    Series::Constant(1.0)
}

/// Serialized form of a feeder case.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    #[serde(default)]
    pub name: String,
    pub bases: BasesSection,
    pub time_grid: TimeGridSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    /// Root voltage magnitude (p.u.).
    #[serde(default = "default_root_voltage")]
    pub root_voltage: Series,
    pub nodes: Vec<NodeEntry>,
    pub lines: Vec<LineEntry>,
    pub costs: CostsSection,
    #[serde(default)]
    pub loads: Vec<LoadEntry>,
    #[serde(default)]
    pub pv: Vec<PvEntry>,
    #[serde(default)]
    pub ev: EvSection,
    pub ambient_temperature: Series,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aging_breakpoints: Option<Vec<f64>>,
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feeder(&text, &path.display().to_string())
}

/// Parses and validates a feeder document; `origin` names it in errors.
pub fn parse_feeder(text: &str, origin: &str) -> Result<Feeder> {
    let file: FeederFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    file.into_feeder()
}

impl FeederFile {
    pub fn into_feeder(self) -> Result<Feeder> {
        let base = PerUnitBase::new(self.bases.s_mva, self.bases.v_kv)?;
        let units = self.bases.units;
        let grid = TimeGrid::new(self.time_grid.periods, self.time_grid.dt_hours)?;
        let periods = grid.periods();
        let power = |x: f64| match units {
            Units::Pu => x,
            Units::Physical => base.kw_to_pu(x),
        };
        let powers = |s: &Series, what: &str| -> Result<Vec<f64>> {
            Ok(s.expand(what, periods)?.into_iter().map(power).collect())
        };

        let nodes: Vec<NodeSpec> = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id.clone(),
                v_min: n.v_min * n.v_min,
                v_max: n.v_max * n.v_max,
            })
            .collect();
        let root = match &self.root {
            Some(r) => r.clone(),
            None => self
                .nodes
                .first()
                .map(|n| n.id.clone())
                .ok_or_else(|| Error::Validation("feeder has no nodes".into()))?,
        };

        let mut hourly_costs = BTreeMap::new();
        let mut lines = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            let (r, x) = match units {
                Units::Pu => (l.r, l.x),
                Units::Physical => (base.ohm_to_pu(l.r), base.ohm_to_pu(l.x)),
            };
            let l_max = match (units, l.l_max, l.ampacity_a) {
                (Units::Pu, Some(v), _) => v,
                (Units::Physical, _, Some(a)) => base.amp_to_l_pu(a),
                (Units::Pu, None, _) => {
                    return Err(Error::Validation(format!(
                        "line `{}`: missing `l_max`",
                        l.id
                    )))
                }
                (Units::Physical, _, None) => {
                    return Err(Error::Validation(format!(
                        "line `{}`: missing `ampacity_a`",
                        l.id
                    )))
                }
            };
            let transformer = match (l.transformer, &l.thermal) {
                (false, None) => None,
                (false, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "line `{}`: thermal block given but `transformer` is false",
                        l.id
                    )))
                }
                (true, None) => {
                    return Err(Error::Validation(format!(
                        "line `{}`: transformer without thermal parameters",
                        l.id
                    )))
                }
                (true, Some(th)) => {
                    let l_nominal = match (units, th.l_nominal, th.rated_kva) {
                        (Units::Pu, Some(v), _) => v,
                        (Units::Physical, _, Some(kva)) => {
                            let i = base.kw_to_pu(kva);
                            i * i
                        }
                        _ => {
                            return Err(Error::Validation(format!(
                                "line `{}`: thermal block needs `{}`",
                                l.id,
                                if units == Units::Pu {
                                    "l_nominal"
                                } else {
                                    "rated_kva"
                                }
                            )))
                        }
                    };
                    if !(th.hourly_cost > 0.0) {
                        return Err(Error::Validation(format!(
                            "line `{}`: hourly_cost must be positive (got {})",
                            l.id, th.hourly_cost
                        )));
                    }
                    let ambient = th
                        .ambient
                        .as_ref()
                        .map(|a| a.expand(&format!("line `{}` ambient", l.id), periods))
                        .transpose()?;
                    hourly_costs.insert(l.id.clone(), th.hourly_cost);
                    Some(Transformer {
                        params: ThermalParams {
                            loss_ratio: th.loss_ratio,
                            rated_top_oil_rise: th.rated_top_oil_rise,
                            rated_hotspot_rise: th.rated_hotspot_rise,
                            oil_time_constant_h: th.oil_time_constant_h,
                            winding_time_constant_min: th.winding_time_constant_min,
                            k1: th.k1,
                            n: th.n,
                            m: th.m,
                            l_nominal,
                        },
                        initial_top_oil: th.initial_top_oil,
                        ambient,
                    })
                }
            };
            lines.push(LineSpec {
                id: l.id.clone(),
                from: l.from.clone(),
                to: l.to.clone(),
                r,
                x,
                l_max,
                transformer,
            });
        }
        let topology = FeederTopology::new(&root, nodes, lines)?;
        let node_of = |id: &str, what: &str| -> Result<usize> {
            match topology.node_index(id) {
                Some(0) => Err(Error::Validation(format!(
                    "{what}: cannot attach to the root node"
                ))),
                Some(j) => Ok(j),
                None => Err(Error::Validation(format!("{what}: unknown node `{id}`"))),
            }
        };

        let price = |x: f64| match units {
            Units::Pu => x,
            Units::Physical => base.price_mwh_to_pu(x),
        };
        let costs = CostInputs {
            energy: self
                .costs
                .energy
                .expand("costs.energy", periods)?
                .into_iter()
                .map(price)
                .collect(),
            reactive: self
                .costs
                .reactive
                .expand("costs.reactive", periods)?
                .into_iter()
                .map(price)
                .collect(),
            transformer: topology
                .lines()
                .iter()
                .filter_map(|l| hourly_costs.get(&l.id).map(|c| (l.child, *c)))
                .collect(),
        };

        let root_voltage = self
            .root_voltage
            .expand("root_voltage", periods)?
            .into_iter()
            .map(|v| v * v)
            .collect::<Vec<_>>();
        if root_voltage.iter().any(|&v| v <= 0.0) {
            return Err(Error::Validation("root_voltage must be positive".into()));
        }

        let mut loads = Vec::with_capacity(self.loads.len());
        for d in &self.loads {
            let what = format!("load `{}`", d.id);
            loads.push(LoadProfile {
                id: d.id.clone(),
                node: node_of(&d.node, &what)?,
                p: powers(&d.p, &what)?,
                q: powers(&d.q, &what)?,
            });
        }

        let mut pv = Vec::with_capacity(self.pv.len());
        for s in &self.pv {
            let what = format!("pv `{}`", s.id);
            let unit = PvUnit {
                id: s.id.clone(),
                node: node_of(&s.node, &what)?,
                capacity: power(s.capacity),
                irradiance: s.irradiance.expand(&what, periods)?,
            };
            unit.validate()?;
            pv.push(unit);
        }

        let mut ev = Vec::with_capacity(self.ev.vehicles.len());
        for e in &self.ev.vehicles {
            let what = format!("ev `{}`", e.id);
            let rate = e.charge_rate.or(self.ev.charge_rate).ok_or_else(|| {
                Error::Validation(format!("{what}: no charge_rate and no feeder-wide default"))
            })?;
            let mut intervals = Vec::with_capacity(e.intervals.len());
            for iv in &e.intervals {
                intervals.push(EvInterval {
                    node: node_of(&iv.node, &what)?,
                    begin: iv.begin,
                    end: iv.end,
                    min_soc: iv.min_soc.map(power),
                    depletion_after: power(iv.depletion_after),
                });
            }
            let it = EvItinerary {
                id: e.id.clone(),
                battery_capacity: power(e.battery_capacity),
                charger_limit: power(e.charger_limit),
                charge_rate: power(rate),
                initial_soc: power(e.initial_soc),
                intervals,
            };
            it.validate(periods)?;
            ev.push(it);
        }

        let ambient = self
            .ambient_temperature
            .expand("ambient_temperature", periods)?;
        let aging_breakpoints = self
            .aging_breakpoints
            .clone()
            .unwrap_or_else(|| DEFAULT_BREAKPOINTS.to_vec());

        Ok(Feeder {
            name: self.name,
            base,
            grid,
            topology,
            costs,
            root_voltage,
            loads,
            pv,
            ev,
            ambient,
            aging_breakpoints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"{
        "bases": {"s_mva": 1.0, "v_kv": 12.47},
        "time_grid": {"periods": 2, "dt_hours": 1.0},
        "nodes": [{"id": "sub"}, {"id": "n1", "v_min": 0.9, "v_max": 1.1}],
        "lines": [{"id": "L1", "from": "sub", "to": "n1", "r": 0.01, "x": 0.02, "l_max": 4.0}],
        "costs": {"energy": [30.0, 40.0], "reactive": 3.0},
        "loads": [{"id": "d1", "node": "n1", "p": [0.1, 0.2], "q": 0.05}],
        "ambient_temperature": 25.0
    }"#;

    #[test]
    fn smallest_feeder() {
        let f = parse_feeder(TWO_NODE, "inline").unwrap();
        assert_eq!(f.topology.n_lines(), 1);
        assert_eq!(f.topology.parent(1), Some(0));
        assert_eq!(f.topology.line_into(1).r, 0.01);
        assert_eq!(f.topology.line_into(1).x, 0.02);
        assert!((f.topology.node(1).v_min - 0.81).abs() < 1e-15);
        assert_eq!(f.costs.reactive, vec![3.0, 3.0]);
        assert_eq!(f.root_voltage, vec![1.0, 1.0]);
        assert_eq!(f.aging_breakpoints.len(), 9);
    }

    #[test]
    fn deterministic() {
        let a = parse_feeder(TWO_NODE, "inline").unwrap();
        let b = parse_feeder(TWO_NODE, "inline").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_error_is_reported() {
        let err = parse_feeder("{ not json", "broken.json").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("broken.json"));
    }

    #[test]
    fn series_length_checked() {
        let bad = TWO_NODE.replace("[30.0, 40.0]", "[30.0]");
        let err = parse_feeder(&bad, "inline").unwrap_err();
        assert!(err.to_string().contains("costs.energy"), "{err}");
    }

    #[test]
    fn physical_units_converted() {
        let text = r#"{
            "bases": {"s_mva": 2.0, "v_kv": 10.0, "units": "physical"},
            "time_grid": {"periods": 1, "dt_hours": 1.0},
            "nodes": [{"id": "0"}, {"id": "1"}],
            "lines": [{"id": "a", "from": "0", "to": "1", "r": 0.5, "x": 1.0, "ampacity_a": 115.47005383792516}],
            "costs": {"energy": 50.0, "reactive": 5.0},
            "loads": [{"id": "d", "node": "1", "p": 400.0, "q": 100.0}],
            "ambient_temperature": 20.0
        }"#;
        let f = parse_feeder(text, "inline").unwrap();
        let line = f.topology.line_into(1);
        assert!((line.r - 0.01).abs() < 1e-15);
        assert!((line.x - 0.02).abs() < 1e-15);
        assert!((line.l_max - 1.0).abs() < 1e-12);
        assert!((f.loads[0].p[0] - 0.2).abs() < 1e-15);
        assert!((f.costs.energy[0] - 100.0).abs() < 1e-12);
    }
}

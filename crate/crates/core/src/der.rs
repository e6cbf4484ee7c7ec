//! Conventional loads, PV units with smart inverters, and EVs with mobility
//! itineraries.
//!
//! Periods are numbered `1..=T`; per-period series are stored at `t - 1`.
//! An EV interval with adjusted begin `τ_beg` and end `τ_end` charges during
//! periods `τ_beg + 1 ..= τ_end`, and its SoC is tracked at both ends.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::NetDemand;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadProfile {
    pub id: String,
    pub node: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvUnit {
    pub id: String,
    pub node: usize,
    /// Nameplate capacity C_s (p.u.).
    pub capacity: f64,
    /// Irradiance ρ_t in `[0, 1]`.
    pub irradiance: Vec<f64>,
}

impl PvUnit {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity >= 0.0 && self.capacity.is_finite()) {
            return Err(Error::Validation(format!(
                "pv `{}`: capacity must be nonnegative",
                self.id
            )));
        }
        if let Some(r) = self.irradiance.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Validation(format!(
                "pv `{}`: irradiance {r} outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }

    /// Available real power `ρ_t C_s` in period `t`.
    pub fn available(&self, t: usize) -> f64 {
        self.irradiance[t - 1] * self.capacity
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.irradiance[t - 1] > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvInterval {
    pub node: usize,
    pub begin: usize,
    pub end: usize,
    /// Minimum SoC at the end of the interval.
    pub min_soc: Option<f64>,
    /// SoC lost travelling to the next interval.
    pub depletion_after: f64,
}

impl EvInterval {
    /// Connected periods `begin + 1 ..= end`.
    pub fn periods(&self) -> std::ops::RangeInclusive<usize> {
        self.begin + 1..=self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.begin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvItinerary {
    pub id: String,
    /// Battery capacity C^B (p.u.·h).
    pub battery_capacity: f64,
    /// Charger apparent-power limit C_e (p.u.).
    pub charger_limit: f64,
    /// Charge-rate cap C_r (p.u.).
    pub charge_rate: f64,
    pub initial_soc: f64,
    pub intervals: Vec<EvInterval>,
}

impl EvItinerary {
    pub fn validate(&self, periods: usize) -> Result<()> {
        let bad = |reason: String| Error::Validation(format!("ev `{}`: {reason}", self.id));
        if self.intervals.is_empty() {
            return Err(bad("itinerary has no intervals".into()));
        }
        if !(self.battery_capacity > 0.0) {
            return Err(bad("battery_capacity must be positive".into()));
        }
        if !(self.charger_limit >= 0.0 && self.charge_rate >= 0.0) {
            return Err(bad("charger limits must be nonnegative".into()));
        }
        if !(0.0..=self.battery_capacity).contains(&self.initial_soc) {
            return Err(bad(format!(
                "initial_soc {} outside [0, battery_capacity]",
                self.initial_soc
            )));
        }
        let mut prev_end = None;
        for (z, iv) in self.intervals.iter().enumerate() {
            if iv.begin > iv.end || iv.end > periods {
                return Err(bad(format!(
                    "interval {} has begin {} / end {} outside 0..={periods}",
                    z + 1,
                    iv.begin,
                    iv.end
                )));
            }
            if let Some(pe) = prev_end {
                if iv.begin < pe {
                    return Err(bad(format!("interval {} overlaps its predecessor", z + 1)));
                }
            }
            if let Some(m) = iv.min_soc {
                if m > self.battery_capacity {
                    return Err(bad(format!(
                        "interval {} min_soc {m} exceeds battery_capacity",
                        z + 1
                    )));
                }
            }
            if iv.depletion_after < 0.0 {
                return Err(bad(format!("interval {} has negative depletion", z + 1)));
            }
            prev_end = Some(iv.end);
        }
        Ok(())
    }

    /// Interval (0-based) the vehicle is plugged in during period `t`.
    pub fn interval_at(&self, t: usize) -> Option<usize> {
        self.intervals
            .iter()
            .position(|iv| iv.periods().contains(&t))
    }
}

/// PV and EV decisions over the horizon, `[unit][t - 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DerSchedule {
    pub pv_p: Vec<Vec<f64>>,
    pub pv_q: Vec<Vec<f64>>,
    pub ev_p: Vec<Vec<f64>>,
    pub ev_q: Vec<Vec<f64>>,
}

impl DerSchedule {
    pub fn idle(n_pv: usize, n_ev: usize, periods: usize) -> Self {
        Self {
            pv_p: vec![vec![0.0; periods]; n_pv],
            pv_q: vec![vec![0.0; periods]; n_pv],
            ev_p: vec![vec![0.0; periods]; n_ev],
            ev_q: vec![vec![0.0; periods]; n_ev],
        }
    }
}

/// Net demand per node: loads plus EV charging minus PV output.
pub fn aggregate_net_demand(
    n_nodes: usize,
    periods: usize,
    loads: &[LoadProfile],
    pv: &[PvUnit],
    ev: &[EvItinerary],
    schedule: &DerSchedule,
) -> Result<NetDemand> {
    let shape = |what: &str, rows: &[Vec<f64>], n: usize| -> Result<()> {
        if rows.len() != n || rows.iter().any(|r| r.len() != periods) {
            return Err(Error::ShapeMismatch(format!(
                "{what} schedule must be {n} × {periods}"
            )));
        }
        Ok(())
    };
    shape("pv p", &schedule.pv_p, pv.len())?;
    shape("pv q", &schedule.pv_q, pv.len())?;
    shape("ev p", &schedule.ev_p, ev.len())?;
    shape("ev q", &schedule.ev_q, ev.len())?;

    let mut d = NetDemand::zeros(periods, n_nodes);
    for load in loads {
        if load.p.len() != periods || load.q.len() != periods {
            return Err(Error::ShapeMismatch(format!(
                "load `{}` series length",
                load.id
            )));
        }
        for k in 0..periods {
            d.p[k][load.node] += load.p[k];
            d.q[k][load.node] += load.q[k];
        }
    }
    for (s, unit) in pv.iter().enumerate() {
        for k in 0..periods {
            d.p[k][unit.node] -= schedule.pv_p[s][k];
            d.q[k][unit.node] -= schedule.pv_q[s][k];
        }
    }
    for (e, it) in ev.iter().enumerate() {
        for k in 0..periods {
            let (p, q) = (schedule.ev_p[e][k], schedule.ev_q[e][k]);
            match it.interval_at(k + 1) {
                Some(z) => {
                    let node = it.intervals[z].node;
                    d.p[k][node] += p;
                    d.q[k][node] += q;
                }
                None if p != 0.0 || q != 0.0 => {
                    return Err(Error::EvSchedule(format!(
                        "ev `{}` draws power in period {} outside its intervals",
                        it.id,
                        k + 1
                    )))
                }
                None => {}
            }
        }
    }
    Ok(d)
}

/// Per-period rule for one PV unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PvPeriodRule {
    /// `0 ≤ p ≤ cap` and `p² + q² ≤ radius²`.
    Active { cap: f64, radius: f64 },
    /// `p = q = 0`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvConstraintSet {
    /// Rule for period `t` at index `t - 1`.
    pub periods: Vec<PvPeriodRule>,
}

impl PvConstraintSet {
    pub fn is_feasible(&self, p: &[f64], q: &[f64], tol: f64) -> bool {
        self.periods
            .iter()
            .enumerate()
            .all(|(k, rule)| match *rule {
                PvPeriodRule::Fixed => p[k] == 0.0 && q[k] == 0.0,
                PvPeriodRule::Active { cap, radius } => {
                    p[k] >= -tol && p[k] <= cap + tol && (p[k].hypot(q[k])) <= radius + tol
                }
            })
    }

    pub fn active_periods(&self) -> usize {
        self.periods
            .iter()
            .filter(|r| matches!(r, PvPeriodRule::Active { .. }))
            .count()
    }
}

pub fn build_pv_constraints(pv: &PvUnit) -> PvConstraintSet {
    PvConstraintSet {
        periods: (1..=pv.irradiance.len())
            .map(|t| {
                if pv.is_active(t) {
                    PvPeriodRule::Active {
                        cap: pv.available(t),
                        radius: pv.capacity,
                    }
                } else {
                    PvPeriodRule::Fixed
                }
            })
            .collect(),
    }
}

/// Constraint data for one interval of an EV itinerary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvIntervalRule {
    pub node: usize,
    pub begin: usize,
    pub end: usize,
    /// Lower SoC bound at `end` (0 when no target is given).
    pub min_soc: f64,
    /// Upper SoC bound at `end`.
    pub max_soc: f64,
    pub depletion_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvConstraintSet {
    pub initial_soc: f64,
    pub intervals: Vec<EvIntervalRule>,
    /// Apparent-power radius of the charger cone.
    pub charger_radius: f64,
    /// Cap on real charging power.
    pub rate_cap: f64,
    /// Periods in which `p = q = 0` is imposed.
    pub off_periods: Vec<usize>,
    /// Energy per unit power per period.
    pub dt_hours: f64,
}

/// SoC at both ends of every interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocTrajectory {
    pub at_begin: Vec<f64>,
    pub at_end: Vec<f64>,
}

impl EvConstraintSet {
    /// Propagates SoC through the balance and depletion equalities.
    pub fn soc_trajectory(&self, p: &[f64]) -> SocTrajectory {
        let mut at_begin = Vec::with_capacity(self.intervals.len());
        let mut at_end = Vec::with_capacity(self.intervals.len());
        let mut u = self.initial_soc;
        for (z, iv) in self.intervals.iter().enumerate() {
            if z > 0 {
                u -= self.intervals[z - 1].depletion_after;
            }
            at_begin.push(u);
            u += (iv.begin + 1..=iv.end).map(|t| p[t - 1]).sum::<f64>() * self.dt_hours;
            at_end.push(u);
        }
        SocTrajectory { at_begin, at_end }
    }

    pub fn is_feasible(&self, p: &[f64], q: &[f64], tol: f64) -> bool {
        let traj = self.soc_trajectory(p);
        let soc_ok = self.intervals.iter().enumerate().all(|(z, iv)| {
            traj.at_begin[z] >= -tol
                && traj.at_end[z] >= iv.min_soc - tol
                && traj.at_end[z] <= iv.max_soc + tol
        });
        let power_ok = (0..p.len()).all(|k| {
            let t = k + 1;
            if self.off_periods.contains(&t) {
                p[k] == 0.0 && q[k] == 0.0
            } else {
                p[k] >= -tol
                    && p[k] <= self.rate_cap + tol
                    && p[k].hypot(q[k]) <= self.charger_radius + tol
            }
        });
        soc_ok && power_ok
    }
}

pub fn build_ev_constraints(
    ev: &EvItinerary,
    periods: usize,
    dt_hours: f64,
) -> Result<EvConstraintSet> {
    if let EvPrecheck::Infeasible { interval, reason } = ev_feasibility_precheck(ev, dt_hours) {
        return Err(Error::EvInfeasible {
            ev: ev.id.clone(),
            reason: format!("interval {}: {reason}", interval + 1),
        });
    }
    Ok(EvConstraintSet {
        initial_soc: ev.initial_soc,
        intervals: ev
            .intervals
            .iter()
            .map(|iv| EvIntervalRule {
                node: iv.node,
                begin: iv.begin,
                end: iv.end,
                min_soc: iv.min_soc.unwrap_or(0.0),
                max_soc: ev.battery_capacity,
                depletion_after: iv.depletion_after,
            })
            .collect(),
        charger_radius: ev.charger_limit,
        rate_cap: ev.charge_rate,
        off_periods: (1..=periods)
            .filter(|&t| ev.interval_at(t).is_none())
            .collect(),
        dt_hours,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EvPrecheck {
    Ok,
    /// `interval` is 0-based.
    Infeasible {
        interval: usize,
        reason: String,
    },
}

/// Checks that every SoC target is reachable when charging flat out.
pub fn ev_feasibility_precheck(ev: &EvItinerary, dt_hours: f64) -> EvPrecheck {
    const TOL: f64 = 1e-12;
    let rate = ev.charge_rate.min(ev.charger_limit);
    let mut u_max = ev.initial_soc;
    for (z, iv) in ev.intervals.iter().enumerate() {
        if z > 0 {
            u_max -= ev.intervals[z - 1].depletion_after;
            if u_max < -TOL {
                return EvPrecheck::Infeasible {
                    interval: z,
                    reason: format!(
                        "arrives with SoC {u_max:.6} < 0 even after charging at the maximum rate"
                    ),
                };
            }
        }
        u_max = (u_max + rate * iv.len() as f64 * dt_hours).min(ev.battery_capacity);
        if let Some(m) = iv.min_soc {
            if m > u_max + TOL {
                return EvPrecheck::Infeasible {
                    interval: z,
                    reason: format!("target SoC {m} exceeds reachable {u_max:.6}"),
                };
            }
        }
    }
    EvPrecheck::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(node: usize, p: f64, periods: usize) -> LoadProfile {
        LoadProfile {
            id: format!("d{node}"),
            node,
            p: vec![p; periods],
            q: vec![p / 2.0; periods],
        }
    }

    fn ev_one(len: usize, target: Option<f64>) -> EvItinerary {
        EvItinerary {
            id: "e".into(),
            battery_capacity: 1.0,
            charger_limit: 0.2,
            charge_rate: 0.1,
            initial_soc: 0.0,
            intervals: vec![EvInterval {
                node: 1,
                begin: 0,
                end: len,
                min_soc: target,
                depletion_after: 0.0,
            }],
        }
    }

    #[test]
    fn load_only() {
        let d = aggregate_net_demand(
            2,
            1,
            &[load(1, 0.05, 1)],
            &[],
            &[],
            &DerSchedule::idle(0, 0, 1),
        )
        .unwrap();
        assert_eq!(d.p[0][1], 0.05);
    }

    #[test]
    fn load_pv_ev_same_node() {
        let pv = PvUnit {
            id: "s".into(),
            node: 1,
            capacity: 0.1,
            irradiance: vec![1.0],
        };
        let ev = ev_one(1, None);
        let mut sched = DerSchedule::idle(1, 1, 1);
        sched.pv_p[0][0] = 0.03;
        sched.ev_p[0][0] = 0.02;
        let d = aggregate_net_demand(2, 1, &[load(1, 0.05, 1)], &[pv], &[ev], &sched).unwrap();
        assert!((d.p[0][1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn ev_follows_its_intervals() {
        let ev = EvItinerary {
            intervals: vec![
                EvInterval {
                    node: 3,
                    begin: 0,
                    end: 2,
                    min_soc: None,
                    depletion_after: 0.0,
                },
                EvInterval {
                    node: 7,
                    begin: 3,
                    end: 5,
                    min_soc: None,
                    depletion_after: 0.0,
                },
            ],
            ..ev_one(1, None)
        };
        let mut sched = DerSchedule::idle(0, 1, 5);
        sched.ev_p[0] = vec![0.01, 0.02, 0.0, 0.03, 0.04];
        let d = aggregate_net_demand(8, 5, &[], &[], std::slice::from_ref(&ev), &sched).unwrap();
        assert_eq!(d.p[0][3], 0.01);
        assert_eq!(d.p[1][3], 0.02);
        assert_eq!(d.p[3][7], 0.03);
        assert_eq!(d.p[4][7], 0.04);
        assert_eq!(d.p[3][3], 0.0);

        sched.ev_p[0][2] = 0.01;
        let err = aggregate_net_demand(8, 5, &[], &[], &[ev], &sched).unwrap_err();
        assert!(matches!(err, Error::EvSchedule(_)));
    }

    #[test]
    fn pv_rules() {
        let pv = PvUnit {
            id: "s".into(),
            node: 1,
            capacity: 0.1,
            irradiance: vec![0.5, 0.0, 1.0],
        };
        let set = build_pv_constraints(&pv);
        match set.periods[0] {
            PvPeriodRule::Active { cap, radius } => {
                assert!((cap - 0.05).abs() < 1e-15);
                assert_eq!(radius, 0.1);
            }
            PvPeriodRule::Fixed => panic!("period 1 is lit"),
        }
        assert_eq!(set.periods[1], PvPeriodRule::Fixed);
        assert_eq!(set.active_periods(), 2);
        // Pythagorean boundary.
        assert!(set.is_feasible(&[0.0, 0.0, 0.06], &[0.0, 0.0, 0.08], 1e-12));
        assert!(!set.is_feasible(&[0.0, 0.0, 0.07], &[0.0, 0.0, 0.08], 1e-12));
        assert!(!set.is_feasible(&[0.0, 0.01, 0.0], &[0.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn ev_energy_balance_and_depletion() {
        let ev = EvItinerary {
            initial_soc: 0.2,
            intervals: vec![
                EvInterval {
                    node: 1,
                    begin: 0,
                    end: 2,
                    min_soc: None,
                    depletion_after: 0.1,
                },
                EvInterval {
                    node: 2,
                    begin: 3,
                    end: 4,
                    min_soc: None,
                    depletion_after: 0.0,
                },
            ],
            ..ev_one(1, None)
        };
        let set = build_ev_constraints(&ev, 4, 1.0).unwrap();
        let traj = set.soc_trajectory(&[0.05, 0.05, 0.0, 0.0]);
        assert!((traj.at_end[0] - 0.3).abs() < 1e-15);
        assert!((traj.at_begin[1] - 0.2).abs() < 1e-15);
        assert_eq!(set.off_periods, vec![3]);
        // 0.03² + 0.04² = 0.05²
        let mut tight = set.clone();
        tight.charger_radius = 0.05;
        assert!(tight.is_feasible(&[0.03, 0.0, 0.0, 0.0], &[0.04, 0.0, 0.0, 0.0], 1e-12));
        assert!(!tight.is_feasible(&[0.03, 0.0, 0.0, 0.0], &[0.05, 0.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn precheck() {
        assert_eq!(
            ev_feasibility_precheck(&ev_one(4, Some(0.5)), 1.0),
            EvPrecheck::Infeasible {
                interval: 0,
                reason: "target SoC 0.5 exceeds reachable 0.400000".into()
            }
        );
        assert_eq!(
            ev_feasibility_precheck(&ev_one(5, Some(0.5)), 1.0),
            EvPrecheck::Ok
        );
        assert_eq!(
            ev_feasibility_precheck(&ev_one(0, None), 1.0),
            EvPrecheck::Ok
        );
        assert!(build_ev_constraints(&ev_one(4, Some(0.5)), 4, 1.0).is_err());
    }

    #[test]
    fn itinerary_validation() {
        let mut ev = ev_one(3, None);
        assert!(ev.validate(3).is_ok());
        assert!(ev.validate(2).is_err());
        ev.intervals.push(EvInterval {
            node: 1,
            begin: 2,
            end: 3,
            min_soc: None,
            depletion_after: 0.0,
        });
        assert!(ev.validate(3).unwrap_err().to_string().contains("overlaps"));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggregation_is_linear(a in proptest::collection::vec(-1.0f64..1.0, 6),
                                     b in proptest::collection::vec(-1.0f64..1.0, 6)) {
                let mk = |v: &[f64]| vec![
                    LoadProfile { id: "x".into(), node: 1, p: v[0..3].to_vec(), q: v[3..6].to_vec() },
                ];
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                let idle = DerSchedule::idle(0, 0, 3);
                let da = aggregate_net_demand(2, 3, &mk(&a), &[], &[], &idle).unwrap();
                let db = aggregate_net_demand(2, 3, &mk(&b), &[], &[], &idle).unwrap();
                let ds = aggregate_net_demand(2, 3, &mk(&sum), &[], &[], &idle).unwrap();
                for k in 0..3 {
                    prop_assert!((da.p[k][1] + db.p[k][1] - ds.p[k][1]).abs() < 1e-12);
                    prop_assert!((da.q[k][1] + db.q[k][1] - ds.q[k][1]).abs() < 1e-12);
                }
            }

            #[test]
            fn soc_monotone_within_interval(p in proptest::collection::vec(0.0f64..0.1, 6)) {
                let ev = EvItinerary {
                    id: "e".into(), battery_capacity: 10.0, charger_limit: 0.2, charge_rate: 0.1,
                    initial_soc: 0.0,
                    intervals: vec![EvInterval { node: 1, begin: 0, end: 6, min_soc: None, depletion_after: 0.0 }],
                };
                let set = build_ev_constraints(&ev, 6, 1.0).unwrap();
                let mut prev = set.initial_soc;
                for t in 1..=6 {
                    let partial: Vec<f64> = (0..6).map(|k| if k < t { p[k] } else { 0.0 }).collect();
                    let u = set.soc_trajectory(&partial).at_end[0];
                    prop_assert!(u >= prev);
                    prev = u;
                }
            }
        }
    }
}

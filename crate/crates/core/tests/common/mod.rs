#![allow(dead_code)]

use std::path::PathBuf;

use dlmc_core::network::{load_feeder, parse_feeder, Feeder};
use serde_json::Value;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> Feeder {
    load_feeder(fixture_path(name)).unwrap()
}

pub fn feeder(v: Value) -> Feeder {
    parse_feeder(&v.to_string(), "<test>").unwrap()
}

pub fn thermal_block(l_nominal: f64, cost: f64) -> Value {
    serde_json::json!({
        "loss_ratio": 5.0, "rated_top_oil_rise": 55.0, "rated_hotspot_rise": 25.0,
        "l_nominal": l_nominal, "hourly_cost": cost
    })
}

/// Substation transformer feeding one load node.
pub fn two_node(periods: usize, p: f64, q: f64) -> Value {
    serde_json::json!({
        "name": "two",
        "bases": {"s_mva": 1.0, "v_kv": 12.47},
        "time_grid": {"periods": periods, "dt_hours": 1.0},
        "nodes": [{"id": "s"}, {"id": "a"}],
        "lines": [{"id": "xf", "from": "s", "to": "a", "r": 0.01, "x": 0.02, "l_max": 2.0,
                   "transformer": true, "thermal": thermal_block(0.25, 3.0)}],
        "costs": {"energy": 40.0, "reactive": 4.0},
        "loads": [{"id": "d", "node": "a", "p": p, "q": q}],
        "ambient_temperature": 25.0
    })
}

#![allow(dead_code)]

use filippov_core::scenario::{load_scenario, parse_scenario, Scenario};
use serde_json::json;

pub fn shipped(name: &str) -> Scenario {
    load_scenario(format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// One curve `h`; region 1 above it with field `pos`, region 2 below with `neg`.
pub fn two_region(kind: &str, bounds: [f64; 4], h: &str, pos: [&str; 2], neg: [&str; 2]) -> Scenario {
    let doc = json!({
        "schema_version": 1,
        "name": "fixture",
        "domain": { "kind": kind, "bounds": bounds },
        "parameters": { "tau": std::f64::consts::TAU },
        "curves": [ { "id": 0, "h": h, "positive_region": 1, "negative_region": 2 } ],
        "regions": [
            { "id": 1, "field": pos, "membership": [ { "curve": 0, "sign": "positive" } ] },
            { "id": 2, "field": neg, "membership": [ { "curve": 0, "sign": "negative" } ] }
        ]
    });
    parse_scenario(&doc.to_string()).unwrap()
}

pub fn single_region(kind: &str, bounds: [f64; 4], field: [&str; 2]) -> Scenario {
    let doc = json!({
        "schema_version": 1,
        "name": "fixture",
        "domain": { "kind": kind, "bounds": bounds },
        "regions": [ { "id": 1, "field": field } ]
    });
    parse_scenario(&doc.to_string()).unwrap()
}

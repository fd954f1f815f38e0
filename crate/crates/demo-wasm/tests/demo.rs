use fleetstation_demo::{shifted, Demo};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn plans_between_offices() {
    let demo = Demo::new();
    let p = parse(demo.plan(1.0, 2.9, 2.0, 4.5));
    assert!(p.get("error").is_none(), "{p}");
    let band = p["band"].as_array().unwrap();
    let last = band.last().unwrap();
    assert!((last[0].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(p["min_clearance"].as_f64().unwrap() >= 0.15);
}

#[test]
fn plan_into_a_wall_is_an_error() {
    let demo = Demo::new();
    let p = parse(demo.plan(1.0, 2.9, 0.05, 0.05));
    assert!(p["error"].is_string());
}

#[test]
fn scan_has_a_mask_per_beam() {
    let mut demo = Demo::new();
    let s = parse(demo.scan(1.0, 2.3, 0.0));
    assert_eq!(s["type"], "scan");
    let ranges = s["ranges"].as_array().unwrap();
    let mask = s["proximity_mask"].as_array().unwrap();
    assert_eq!(ranges.len(), 360);
    assert_eq!(mask.len(), 360);
    for (r, m) in ranges.iter().zip(mask) {
        let near = r.as_f64().is_some_and(|r| r < 0.5);
        assert_eq!(m.as_bool().unwrap(), near, "range {r}");
    }
    assert!(parse(demo.scan(0.1, 0.1, 0.0))["error"].is_string());
}

#[test]
fn register_recovers_shift() {
    let demo = Demo::new();
    for (dx, dy) in [(0, 0), (5, -3), (-7, 2)] {
        let r = parse(demo.register(dx, dy));
        assert_eq!(r["recovered"], serde_json::json!([dx, dy]), "{r}");
    }
}

#[test]
fn shift_by_zero_is_identity() {
    let demo = Demo::new();
    let g = fleetstation_core::mapping::TernaryGrid::from_ascii(&demo.map_ascii(), demo.resolution()).unwrap();
    assert_eq!(shifted(&g, 0, 0), g);
}

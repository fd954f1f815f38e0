use std::fs;
use std::path::PathBuf;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use fleetstation_core::geom::Pose2D;
use fleetstation_core::record::parse_script;
use fleetstation_core::scenario::{RobotSpec, Scenario, TagSpec, PARAM_KEYS};
use proptest::prelude::*;

fn bundled(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    fs::read_to_string(p).unwrap()
}

#[test]
fn bundled_scenarios_are_canonical() {
    for name in ["corridor.scn", "sealed.scn"] {
        let text = bundled(name);
        let s = Scenario::parse(&text).unwrap();
        s.validate().unwrap();
        assert_eq!(s.save(), text, "{name} is not in canonical form");
    }
}

#[test]
fn bundled_script_parses() {
    let entries = parse_script(&bundled("corridor_mission.jsonl")).unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.windows(2).all(|w| w[0].tick <= w[1].tick));
}

fn scenario() -> impl Strategy<Value = Scenario> {
    let w = 8usize..30;
    let h = 8usize..20;
    (w, h, 0.1f64..0.5, any::<u64>(), "[a-z][a-z0-9_]{0,10}").prop_flat_map(|(w, h, res, seed, name)| {
        // spawn discs stay off the border walls
        let m = 1.0 + 0.2 / res;
        let inner = move || (m..w as f64 - m, m..h as f64 - m, -PI + 1e-9..PI);
        let robots = prop::collection::vec(inner(), 1..4);
        let tags = prop::collection::vec((0u32..50, inner()), 0..6);
        // small values keep sim.robot_radius from filling the room
        let params = prop::collection::btree_map(prop::sample::select(PARAM_KEYS.to_vec()), 0.01f64..0.18, 0..3);
        (robots, tags, params).prop_map(move |(robots, tags, params)| {
            let mut map = vec!["#".repeat(w)];
            map.extend((0..h - 2).map(|_| format!("#{}#", ".".repeat(w - 2))));
            map.push("#".repeat(w));
            let pose = |(x, y, t): (f64, f64, f64)| Pose2D::new(x * res, y * res, t);
            let mut ids = BTreeMap::new();
            for (id, p) in tags {
                ids.insert(id, pose(p));
            }
            Scenario {
                name: name.clone(),
                resolution: res,
                seed,
                robots: robots
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| RobotSpec {
                        id: format!("r{}", i + 1),
                        spawn: pose(p),
                    })
                    .collect(),
                tags: ids.into_iter().map(|(id, pose)| TagSpec { id, pose }).collect(),
                params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                map,
            }
        })
    })
}

proptest! {
    #[test]
    fn save_then_parse_is_lossless(s in scenario()) {
        let text = s.save();
        let back = Scenario::parse(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.save(), text);
    }
}

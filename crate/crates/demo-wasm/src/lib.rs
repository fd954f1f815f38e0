//! Browser demo over the bundled corridor scenario.
//!
//! Every operation returns a JSON string so the page needs no bindings
//! beyond `JSON.parse`. The same functions are exercised natively in tests.

use fleetstation_core::gateway::Outbound;
use fleetstation_core::geom::Pose2D;
use fleetstation_core::mapping::{Cell, TernaryGrid};
use fleetstation_core::merge::{phase_correlate, Raster};
use fleetstation_core::nav::band::deform_band;
use fleetstation_core::nav::costmap::CostMap;
use fleetstation_core::nav::planner::plan_global;
use fleetstation_core::nav::NavConfig;
use fleetstation_core::scenario::Scenario;
use fleetstation_core::sim::WorldModel;
use fleetstation_core::station::StationConfig;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CORRIDOR: &str = include_str!("../../../scenarios/corridor.scn");
const PROBE: &str = "probe";

#[wasm_bindgen]
pub struct Demo {
    grid: TernaryGrid,
    costmap: CostMap,
    world: WorldModel,
    nav: NavConfig,
}

fn error(message: impl std::fmt::Display) -> String {
    json!({ "error": message.to_string() }).to_string()
}

fn points(poses: &[Pose2D]) -> Value {
    poses.iter().map(|p| json!([p.x, p.y])).collect()
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        let scenario = Scenario::parse(CORRIDOR).expect("bundled scenario parses");
        let truth = scenario.truth();
        let cells = truth
            .cells()
            .iter()
            .map(|&occ| if occ { Cell::Occupied } else { Cell::Free })
            .collect();
        let grid = TernaryGrid {
            geometry: truth.geometry,
            cells,
        };
        let config = StationConfig::from_scenario(&scenario);
        let mut world = WorldModel::new(config.sim, truth, Vec::new(), scenario.seed);
        world.add_robot(PROBE, scenario.robots[0].spawn);
        Demo {
            costmap: CostMap::new(&grid),
            grid,
            world,
            nav: config.nav,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.geometry.width
    }

    pub fn height(&self) -> usize {
        self.grid.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.grid.geometry.resolution
    }

    /// Rows top first: `#` wall, `.` free.
    pub fn map_ascii(&self) -> String {
        self.grid.to_ascii()
    }

    /// A* plan and its elastic-band deformation between two points.
    /// Heading at the goal follows the last path segment.
    pub fn plan(&self, sx: f64, sy: f64, gx: f64, gy: f64) -> String {
        let start = Pose2D::new(sx, sy, 0.0);
        let goal = Pose2D::new(gx, gy, 0.0);
        let planned = match plan_global(&self.costmap, &start, &goal, &self.nav) {
            Ok(p) => p,
            Err(e) => return error(e),
        };
        let band = match deform_band(&planned, &self.costmap, &self.nav) {
            Ok(b) => b,
            Err(e) => return error(e),
        };
        let min_clearance = band
            .waypoints
            .iter()
            .map(|p| self.costmap.clearance(p.position()))
            .fold(f64::INFINITY, f64::min);
        json!({
            "planned": points(&planned.waypoints),
            "band": points(&band.waypoints),
            "length": band.length(),
            "min_clearance": min_clearance,
        })
        .to_string()
    }

    /// A 360-beam scan from the given pose, in the operator wire format
    /// (ranges plus proximity mask).
    pub fn scan(&mut self, x: f64, y: f64, theta: f64) -> String {
        let pose = Pose2D::new(x, y, theta);
        let radius = self.nav.robot_radius;
        if !self.world.truth.disc_is_free(pose.position(), radius) {
            return error(format!("({x:.2}, {y:.2}) is inside a wall"));
        }
        self.world.robot_mut(PROBE).expect("probe robot exists").pose_true = pose;
        match self.world.scan(PROBE) {
            Ok(s) => serde_json::to_string(&Outbound::scan(PROBE, &s)).expect("scan serializes"),
            Err(e) => error(e),
        }
    }

    /// Shift a copy of the map by (`dx`, `dy`) cells, blanking what falls
    /// off, and recover the shift by phase correlation.
    pub fn register(&self, dx: i32, dy: i32) -> String {
        let moved = shifted(&self.grid, dx as i64, dy as i64);
        match phase_correlate(&Raster::from_ternary(&self.grid), &Raster::from_ternary(&moved)) {
            Ok(r) => json!({
                "applied": [dx, dy],
                "recovered": [r.d_col, r.d_row],
                "confidence": r.confidence,
                "moved": moved.to_ascii(),
            })
            .to_string(),
            Err(e) => error(e),
        }
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

/// `out(c, r) = grid(c - dx, r - dy)`, unknown where that falls outside.
pub fn shifted(grid: &TernaryGrid, dx: i64, dy: i64) -> TernaryGrid {
    let (w, h) = (grid.geometry.width as i64, grid.geometry.height as i64);
    let mut out = TernaryGrid::filled(grid.geometry, Cell::Unknown);
    for r in 0..h {
        for c in 0..w {
            let (sc, sr) = (c - dx, r - dy);
            if (0..w).contains(&sc) && (0..h).contains(&sr) {
                out.cells[(r * w + c) as usize] = grid.cells[(sr * w + sc) as usize];
            }
        }
    }
    out
}

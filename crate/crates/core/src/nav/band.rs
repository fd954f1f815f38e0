//! Elastic-band relaxation of a waypoint path.

use crate::error::NavError;
use crate::geom::{traverse_cells, Point2};

use super::costmap::CostMap;
use super::planner::{densify, orient};
use super::{NavConfig, PathPlan};

/// Cells this close to the band start are exempt from the severance check,
/// so a robot already near a wall can still leave.
const START_EXEMPT: f64 = 0.3;

fn min_clearance(map: &CostMap, pts: &[Point2]) -> f64 {
    pts.iter().map(|&p| map.clearance(p)).fold(f64::INFINITY, f64::min)
}

/// First segment whose swept cells come closer to an obstacle than the robot
/// radius (or leave the map).
pub fn severed_segment(map: &CostMap, pts: &[Point2], robot_radius: f64) -> Option<(usize, usize)> {
    let start = *pts.first()?;
    let g = &map.geometry;
    for (i, seg) in pts.windows(2).enumerate() {
        let a = g.to_cell_coords(seg[0]);
        let b = g.to_cell_coords(seg[1]);
        let mut hit = false;
        traverse_cells(a, b, |c, r, _| {
            let clear = map.clearance_at_cell(c, r);
            if clear < robot_radius {
                let center = g.origin.apply_point(Point2::new((c as f64 + 0.5) * g.resolution, (r as f64 + 0.5) * g.resolution));
                if !g.contains(c, r) || center.distance(&start) > START_EXEMPT {
                    hit = true;
                    return false;
                }
            }
            true
        });
        if hit {
            return Some((i, i + 1));
        }
    }
    None
}

/// Gauss-Seidel relaxation: each interior waypoint moves toward the midpoint
/// of its neighbours and away from obstacles inside the influence distance.
/// A move is rejected if it would drop that waypoint's clearance below both
/// its current value and the input path's minimum.
pub fn relax(map: &CostMap, pts: &mut [Point2], cfg: &NavConfig) -> usize {
    let n = pts.len();
    if n < 3 {
        return 0;
    }
    let floor = min_clearance(map, pts);
    for iter in 0..cfg.band_iterations {
        let mut max_move: f64 = 0.0;
        for i in 1..n - 1 {
            let p = pts[i];
            let mid = Point2::new((pts[i - 1].x + pts[i + 1].x) / 2.0, (pts[i - 1].y + pts[i + 1].y) / 2.0);
            let mut sx = cfg.band_alpha * (mid.x - p.x);
            let mut sy = cfg.band_alpha * (mid.y - p.y);
            let c = map.clearance(p);
            if c < cfg.band_influence {
                if let Some(dir) = map.repulsion_direction(p) {
                    let push = cfg.band_beta * (cfg.band_influence - c);
                    sx += push * dir.x;
                    sy += push * dir.y;
                }
            }
            let len = sx.hypot(sy);
            if len < 1e-12 {
                continue;
            }
            if len > cfg.band_max_step {
                sx *= cfg.band_max_step / len;
                sy *= cfg.band_max_step / len;
            }
            let cand = Point2::new(p.x + sx, p.y + sy);
            let c_new = map.clearance(cand);
            if c_new >= c || c_new >= floor {
                pts[i] = cand;
                max_move = max_move.max(sx.hypot(sy));
            }
        }
        if max_move < cfg.band_tolerance {
            return iter + 1;
        }
    }
    cfg.band_iterations
}

pub fn deform_band(plan: &PathPlan, map: &CostMap, cfg: &NavConfig) -> Result<PathPlan, NavError> {
    let goal = *plan.waypoints.last().ok_or(NavError::EmptyPlan)?;
    let mut pts: Vec<Point2> = plan.waypoints.iter().map(|p| p.position()).collect();
    relax(map, &mut pts, cfg);
    let pts = densify(&pts, cfg.waypoint_spacing.min(0.5));
    if let Some((a, b)) = severed_segment(map, &pts, cfg.robot_radius) {
        return Err(NavError::BandSevered(a, b));
    }
    Ok(PathPlan {
        waypoints: orient(&pts, goal.theta),
        ..plan.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{GridGeometry, Pose2D, Transform2D};
    use crate::mapping::{Cell, TernaryGrid};
    use crate::nav::PlanSource;

    fn straight_plan(y: f64, x0: f64, x1: f64) -> PathPlan {
        let pts = densify(&[Point2::new(x0, y), Point2::new(x1, y)], 0.25);
        PathPlan {
            waypoints: orient(&pts, 0.0),
            source: PlanSource::Drawn,
            goal_tolerance_xy: 0.1,
            goal_tolerance_theta: 0.17,
            cost: 0.0,
        }
    }

    fn grid(w: usize, h: usize) -> TernaryGrid {
        TernaryGrid::filled(GridGeometry::new(w, h, 0.05, Transform2D::identity()), Cell::Free)
    }

    /// Exact distance from a point to the nearest occupied cell square.
    fn true_clearance(g: &TernaryGrid, p: Point2) -> f64 {
        let res = g.geometry.resolution;
        let mut best = f64::INFINITY;
        for r in 0..g.height() {
            for c in 0..g.width() {
                if g.get(c, r) == Cell::Occupied {
                    let dx = (c as f64 * res - p.x).max(0.0).max(p.x - (c + 1) as f64 * res);
                    let dy = (r as f64 * res - p.y).max(0.0).max(p.y - (r + 1) as f64 * res);
                    best = best.min(dx.hypot(dy));
                }
            }
        }
        best
    }

    #[test]
    fn straight_path_in_open_space_is_unchanged() {
        let map = CostMap::new(&grid(80, 40));
        let plan = straight_plan(1.0, 0.5, 3.5);
        let out = deform_band(&plan, &map, &NavConfig::default()).unwrap();
        assert_eq!(out.waypoints.len(), plan.waypoints.len());
        for (a, b) in out.waypoints.iter().zip(&plan.waypoints) {
            assert!(a.distance(b) < 0.01);
        }
    }

    #[test]
    fn grazing_path_is_pushed_clear() {
        // a 1 m block whose top face sits 0.15 m below the path
        let mut g = grid(80, 60);
        for c in 30..50 {
            for r in 0..17 {
                g.set(c, r, Cell::Occupied);
            }
        }
        let path_y = 0.85 + 0.15;
        let map = CostMap::new(&g);
        let plan = straight_plan(path_y, 0.25, 3.75);
        let before = plan.waypoints.iter().map(|p| true_clearance(&g, p.position())).fold(f64::INFINITY, f64::min);
        assert!((before - 0.15).abs() < 1e-9);
        let out = deform_band(&plan, &map, &NavConfig::default()).unwrap();
        for p in &out.waypoints {
            let c = true_clearance(&g, p.position());
            assert!(c >= 0.25, "waypoint {:?} clearance {c}", p);
        }
    }

    #[test]
    fn narrow_gap_severs_band() {
        // wall across x = 2 with a 0.25 m gap; the robot is 0.36 m wide
        let mut g = grid(80, 60);
        for r in 0..60 {
            if !(28..33).contains(&r) {
                g.set(40, r, Cell::Occupied);
            }
        }
        let map = CostMap::new(&g);
        let plan = straight_plan(1.525, 0.5, 3.5);
        let err = deform_band(&plan, &map, &NavConfig::default()).unwrap_err();
        assert!(matches!(err, NavError::BandSevered(_, _)));
    }

    #[test]
    fn empty_plan_rejected() {
        let map = CostMap::new(&grid(4, 4));
        let mut plan = straight_plan(0.1, 0.0, 0.1);
        plan.waypoints.clear();
        assert_eq!(deform_band(&plan, &map, &NavConfig::default()), Err(NavError::EmptyPlan));
    }

    #[test]
    fn endpoints_fixed_and_goal_heading_kept() {
        let mut g = grid(80, 60);
        for c in 35..45 {
            for r in 0..19 {
                g.set(c, r, Cell::Occupied);
            }
        }
        let map = CostMap::new(&g);
        let mut plan = straight_plan(1.2, 0.5, 3.5);
        plan.waypoints.last_mut().unwrap().theta = 0.7;
        let out = deform_band(&plan, &map, &NavConfig::default()).unwrap();
        assert_eq!(out.waypoints[0].position(), plan.waypoints[0].position());
        let last = out.waypoints.last().unwrap();
        assert_eq!(last.position(), Pose2D::new(3.5, 1.2, 0.0).position());
        assert_eq!(last.theta, 0.7);
    }
}

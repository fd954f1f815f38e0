//! 8-connected A* over an inflated ternary grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use crate::error::NavError;
use crate::geom::{GridIndex, Point2, Pose2D};
use crate::mapping::Cell;

use super::costmap::CostMap;
use super::{NavConfig, PathPlan, PlanSource};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    row: usize,
    col: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap: reverse so the smallest (f, row, col) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.row.cmp(&self.row))
            .then_with(|| other.col.cmp(&self.col))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Traversal {
    Blocked,
    Free,
    Unknown,
}

struct SearchGrid<'a> {
    map: &'a CostMap,
    inflation: f64,
    /// Inflated-but-not-occupied cells connected to the start, passable so a
    /// robot that ended up close to a wall can leave.
    escape: Vec<bool>,
}

impl<'a> SearchGrid<'a> {
    fn inflated(&self, c: usize, r: usize) -> bool {
        self.map.clearance_at_cell(c as i64, r as i64) < self.inflation
    }

    fn traversal(&self, c: usize, r: usize) -> Traversal {
        let i = r * self.map.width() + c;
        match self.map.cells[i] {
            Cell::Occupied => Traversal::Blocked,
            _ if self.inflated(c, r) && !self.escape[i] => Traversal::Blocked,
            Cell::Free => Traversal::Free,
            Cell::Unknown => Traversal::Unknown,
        }
    }
}

/// Cell-path search between two cells. Returns the cells and the path cost in
/// cell units (1 per straight step, √2 per diagonal, times the unknown multiplier).
pub fn astar(
    map: &CostMap,
    start: GridIndex,
    goal: GridIndex,
    cfg: &NavConfig,
) -> Result<(Vec<GridIndex>, f64), NavError> {
    let (w, h) = (map.width(), map.height());
    let inflation = cfg.inflation_radius();
    let mut search = SearchGrid {
        map,
        inflation,
        escape: vec![false; w * h],
    };
    if map.cell(start.col, start.row) == Cell::Occupied {
        return Err(NavError::StartInObstacle);
    }
    if map.cell(goal.col, goal.row) == Cell::Occupied || search.inflated(goal.col, goal.row) {
        return Err(NavError::GoalInObstacle);
    }
    if search.inflated(start.col, start.row) {
        let mut stack = vec![start];
        search.escape[start.row * w + start.col] = true;
        while let Some(p) = stack.pop() {
            for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (c, r) = (p.col as i64 + dc, p.row as i64 + dr);
                if !map.geometry.contains(c, r) {
                    continue;
                }
                let (c, r) = (c as usize, r as usize);
                let i = r * w + c;
                let uphill = map.clearance_at_cell(c as i64, r as i64) >= map.clearance_at_cell(p.col as i64, p.row as i64);
                if !search.escape[i] && uphill && search.inflated(c, r) && map.cell(c, r) != Cell::Occupied {
                    search.escape[i] = true;
                    stack.push(GridIndex::new(c, r));
                }
            }
        }
    }

    let heuristic = |c: usize, r: usize| {
        let dx = (c as f64 - goal.col as f64).abs();
        let dy = (r as f64 - goal.row as f64).abs();
        dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
    };
    let mut g = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    let s = start.row * w + start.col;
    g[s] = 0.0;
    open.push(Open {
        f: heuristic(start.col, start.row),
        row: start.row,
        col: start.col,
    });
    const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    let goal_i = goal.row * w + goal.col;
    while let Some(Open { row, col, .. }) = open.pop() {
        let i = row * w + col;
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if i == goal_i {
            let mut cells = vec![goal];
            let mut k = i;
            while parent[k] != usize::MAX {
                k = parent[k];
                cells.push(GridIndex::new(k % w, k / w));
            }
            cells.reverse();
            return Ok((cells, g[goal_i]));
        }
        for (dc, dr) in NEIGHBOURS {
            let (nc, nr) = (col as i64 + dc, row as i64 + dr);
            if !map.geometry.contains(nc, nr) {
                continue;
            }
            let (nc, nr) = (nc as usize, nr as usize);
            let ni = nr * w + nc;
            if closed[ni] {
                continue;
            }
            let t = search.traversal(nc, nr);
            if t == Traversal::Blocked {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal
                && (search.traversal(col, nr) == Traversal::Blocked || search.traversal(nc, row) == Traversal::Blocked)
            {
                continue;
            }
            let step = if diagonal { SQRT_2 } else { 1.0 };
            let mult = if t == Traversal::Unknown { cfg.unknown_cost } else { 1.0 };
            let cand = g[i] + step * mult;
            if cand < g[ni] {
                g[ni] = cand;
                parent[ni] = i;
                open.push(Open {
                    f: cand + heuristic(nc, nr),
                    row: nr,
                    col: nc,
                });
            }
        }
    }
    Err(NavError::NoPath)
}

/// Resample a polyline at uniform arc-length `spacing`, keeping both ends.
pub fn resample(points: &[Point2], spacing: f64) -> Vec<Point2> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut carry = 0.0;
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = a.distance(&b);
        if len == 0.0 {
            continue;
        }
        let mut s = spacing - carry;
        while s < len {
            let t = s / len;
            out.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
            s += spacing;
        }
        carry = len - (s - spacing);
    }
    let last = *points.last().unwrap();
    if out.last().map(|p| p.distance(&last) > 1e-9).unwrap_or(true) {
        if out.len() > 1 && out.last().unwrap().distance(&last) < spacing * 0.25 {
            out.pop();
        }
        out.push(last);
    }
    out
}

/// Insert points so consecutive points are at most `max_gap` apart.
pub fn densify(points: &[Point2], max_gap: f64) -> Vec<Point2> {
    let mut out = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        if let Some(prev) = k.checked_sub(1).map(|j| points[j]) {
            let d = prev.distance(p);
            let n = (d / max_gap).ceil() as usize;
            for i in 1..n {
                let t = i as f64 / n as f64;
                out.push(Point2::new(prev.x + t * (p.x - prev.x), prev.y + t * (p.y - prev.y)));
            }
        }
        out.push(*p);
    }
    out
}

/// Poses along a polyline, each facing the next point; the last takes `end_theta`.
pub fn orient(points: &[Point2], end_theta: f64) -> Vec<Pose2D> {
    let n = points.len();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let theta = if i + 1 < n {
                let q = points[i + 1];
                (q.y - p.y).atan2(q.x - p.x)
            } else {
                end_theta
            };
            Pose2D::new(p.x, p.y, theta)
        })
        .collect()
}

pub fn plan_global(map: &CostMap, start: &Pose2D, goal: &Pose2D, cfg: &NavConfig) -> Result<PathPlan, NavError> {
    let s = map
        .geometry
        .world_to_grid(start.position())
        .map_err(|_| NavError::OutsideMap)?;
    let g = map
        .geometry
        .world_to_grid(goal.position())
        .map_err(|_| NavError::GoalInObstacle)?;
    let (cells, cost) = astar(map, s, g, cfg)?;
    let mut pts: Vec<Point2> = cells.iter().map(|&c| map.geometry.grid_to_world(c)).collect();
    pts[0] = start.position();
    *pts.last_mut().unwrap() = goal.position();
    let pts = resample(&pts, cfg.waypoint_spacing);
    Ok(PathPlan {
        waypoints: orient(&pts, goal.theta),
        source: PlanSource::Planned,
        goal_tolerance_xy: cfg.goal_tolerance_xy,
        goal_tolerance_theta: cfg.goal_tolerance_theta,
        cost,
    })
}

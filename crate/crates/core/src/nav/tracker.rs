//! Pure-pursuit path tracking with scan-based slow-down and blocking.

use crate::geom::{angle_diff, Point2, Pose2D, Twist2D};
use crate::sim::LaserScan;

use super::{LocalCommand, NavConfig, PathPlan, TrackStatus};

/// Closest point on segment `a→b` to `p`, as a parameter in `[0,1]`.
fn project(a: Point2, b: Point2, p: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return 0.0;
    }
    (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
}

fn lerp(a: Point2, b: Point2, t: f64) -> Point2 {
    Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

/// Nearest return overall and nearest return inside the forward corridor
/// (beams ahead whose endpoint lies within `half_width` of the heading line).
pub fn scan_ranges(scan: &LaserScan, half_width: f64) -> (f64, f64) {
    let mut nearest = f64::INFINITY;
    let mut ahead = f64::INFINITY;
    for (i, &r) in scan.ranges.iter().enumerate() {
        if !r.is_finite() {
            continue;
        }
        nearest = nearest.min(r);
        let a = scan.beam_angle(i);
        let (x, y) = (r * a.cos(), r * a.sin());
        if x > 0.0 && y.abs() <= half_width {
            ahead = ahead.min(r);
        }
    }
    (nearest, ahead)
}

/// Move `prev` toward `target`, limiting growth in magnitude to `max_delta`.
/// Magnitude reductions (braking) are applied at once.
fn ramp(prev: f64, target: f64, max_delta: f64) -> f64 {
    let base = if prev * target > 0.0 { prev } else { 0.0 };
    if target.abs() <= base.abs() {
        target
    } else {
        base + (target - base).clamp(-max_delta, max_delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTracker {
    pub config: NavConfig,
    last: Twist2D,
    /// Segment index the robot has progressed to; never moves backward.
    progress: usize,
    /// Turning in place at the goal.
    aligning: bool,
}

/// Fraction of each goal tolerance the final approach aims for.
pub const SETTLE: f64 = 0.5;

impl PathTracker {
    pub fn new(config: NavConfig) -> Self {
        Self {
            config,
            last: Twist2D::ZERO,
            progress: 0,
            aligning: false,
        }
    }

    pub fn last_twist(&self) -> Twist2D {
        self.last
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    /// Forget progress along the previous plan.
    pub fn reset(&mut self) {
        self.progress = 0;
        self.aligning = false;
    }

    /// Zero command; the next acceleration ramp starts from rest.
    pub fn stop(&mut self) {
        self.last = Twist2D::ZERO;
    }

    pub fn track(&mut self, plan: &PathPlan, pose: &Pose2D, scan: &LaserScan) -> LocalCommand {
        let cfg = self.config;
        let Some(goal) = plan.waypoints.last() else {
            return self.emit(Twist2D::ZERO, TrackStatus::Reached);
        };
        let here = pose.position();
        let dist_goal = here.distance(&goal.position());
        let heading_err = angle_diff(goal.theta, pose.theta);
        let in_position = dist_goal <= plan.goal_tolerance_xy;
        let settled = dist_goal <= SETTLE * plan.goal_tolerance_xy || self.aligning;
        if in_position && settled && heading_err.abs() <= SETTLE * plan.goal_tolerance_theta {
            self.last = Twist2D::ZERO;
            self.aligning = false;
            return LocalCommand {
                twist: Twist2D::ZERO,
                status: TrackStatus::Reached,
            };
        }
        self.aligning = in_position && settled;
        if self.aligning {
            // in position: turn to the goal heading
            let w = (2.0 * heading_err).clamp(-cfg.max_angular, cfg.max_angular);
            let w = if w.abs() < 0.2 { 0.2 * w.signum() } else { w };
            return self.emit(Twist2D::new(0.0, w), TrackStatus::Tracking);
        }

        let target = self.lookahead_point(plan, here);
        let (s, c) = pose.theta.sin_cos();
        let (dx, dy) = (target.x - here.x, target.y - here.y);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let l2 = lx * lx + ly * ly;
        let bearing = ly.atan2(lx);

        let mut v;
        let mut w;
        if bearing.abs() > std::f64::consts::FRAC_PI_3 || l2 < 1e-12 {
            v = 0.0;
            w = cfg.max_angular.min(2.0 * bearing.abs()).max(0.3) * bearing.signum();
        } else {
            let kappa = 2.0 * ly / l2;
            v = cfg.max_linear;
            w = v * kappa;
            if w.abs() > cfg.max_angular {
                v *= cfg.max_angular / w.abs();
                w = cfg.max_angular * w.signum();
            }
            // approach the goal without overshooting the tolerance disc
            let cap = (1.0 * dist_goal).max(0.05);
            if v > cap {
                w *= cap / v;
                v = cap;
            }
        }

        let (nearest, ahead) = scan_ranges(scan, cfg.robot_radius + 0.05);
        if nearest < cfg.slow_down_range {
            v *= (nearest / cfg.slow_down_range).clamp(0.0, 1.0);
        }
        if ahead < cfg.blocked_range {
            return self.emit(Twist2D::new(0.0, w), TrackStatus::Blocked);
        }
        self.emit(Twist2D::new(v, w), TrackStatus::Tracking)
    }

    fn emit(&mut self, target: Twist2D, status: TrackStatus) -> LocalCommand {
        let cfg = &self.config;
        let target = target.clamped(cfg.max_linear, cfg.max_angular);
        let twist = Twist2D::new(
            ramp(self.last.linear, target.linear, cfg.accel_linear * cfg.dt),
            ramp(self.last.angular, target.angular, cfg.accel_angular * cfg.dt),
        );
        self.last = twist;
        LocalCommand { twist, status }
    }

    /// Point `lookahead` meters along the plan past the closest point,
    /// searching forward from the last progress index.
    fn lookahead_point(&mut self, plan: &PathPlan, here: Point2) -> Point2 {
        let pts: Vec<Point2> = plan.waypoints.iter().map(|p| p.position()).collect();
        if pts.len() == 1 {
            return pts[0];
        }
        let segs = pts.len() - 1;
        let start = self.progress.min(segs - 1);
        let mut best = (f64::INFINITY, start, 0.0);
        // bounded forward window keeps the search from snapping to a later
        // pass of a self-crossing path
        let window_end = (start + 12).min(segs);
        for i in start..window_end {
            let t = project(pts[i], pts[i + 1], here);
            let d = lerp(pts[i], pts[i + 1], t).distance(&here);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (_, mut i, t) = best;
        self.progress = i;
        let mut remaining = self.config.lookahead;
        let mut from = lerp(pts[i], pts[i + 1], t);
        loop {
            let to = pts[i + 1];
            let d = from.distance(&to);
            if d >= remaining {
                return lerp(from, to, remaining / d);
            }
            remaining -= d;
            i += 1;
            if i >= segs {
                return pts[segs];
            }
            from = pts[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::planner::{densify, orient};
    use crate::nav::PlanSource;
    use std::f64::consts::PI;

    fn scan_with(ranges: impl Fn(f64) -> f64) -> LaserScan {
        let inc = 2.0 * PI / 360.0;
        LaserScan {
            angle_min: -PI,
            angle_increment: inc,
            range_max: 10.0,
            ranges: (0..360).map(|i| ranges(-PI + i as f64 * inc)).collect(),
            stamp_tick: 0,
        }
    }

    fn clear_scan() -> LaserScan {
        scan_with(|_| f64::INFINITY)
    }

    fn line_plan() -> PathPlan {
        let pts = densify(&[Point2::new(0.0, 0.0), Point2::new(5.0, 0.0)], 0.25);
        PathPlan {
            waypoints: orient(&pts, 0.0),
            source: PlanSource::Planned,
            goal_tolerance_xy: 0.1,
            goal_tolerance_theta: 10f64.to_radians(),
            cost: 0.0,
        }
    }

    #[test]
    fn at_goal_reports_reached_with_zero_twist() {
        let mut t = PathTracker::new(NavConfig::default());
        let cmd = t.track(&line_plan(), &Pose2D::new(4.97, 0.03, 0.05), &clear_scan());
        assert_eq!(cmd.status, TrackStatus::Reached);
        assert!(cmd.twist.is_zero());
    }

    #[test]
    fn edge_of_tolerance_keeps_closing_in() {
        let mut t = PathTracker::new(NavConfig::default());
        let plan = PathPlan {
            waypoints: orient(&densify(&[Point2::new(4.5, 0.0), Point2::new(5.0, 0.0)], 0.25), 0.0),
            ..line_plan()
        };
        let cmd = t.track(&plan, &Pose2D::new(4.91, 0.0, 0.0), &clear_scan());
        assert_eq!(cmd.status, TrackStatus::Tracking);
        assert!(cmd.twist.linear > 0.0);
        // once aligning, the position band is the full tolerance
        let cmd = t.track(&plan, &Pose2D::new(4.96, 0.0, 0.15), &clear_scan());
        assert!(cmd.twist.linear == 0.0 && cmd.twist.angular < 0.0);
        let cmd = t.track(&plan, &Pose2D::new(4.92, 0.0, 0.05), &clear_scan());
        assert_eq!(cmd.status, TrackStatus::Reached);
    }

    #[test]
    fn obstacle_close_ahead_blocks() {
        let mut t = PathTracker::new(NavConfig::default());
        let scan = scan_with(|a| if a.abs() < 0.3 { 0.25 / a.cos() } else { f64::INFINITY });
        let cmd = t.track(&line_plan(), &Pose2D::new(1.0, 0.0, 0.0), &scan);
        assert_eq!(cmd.status, TrackStatus::Blocked);
        assert_eq!(cmd.twist.linear, 0.0);
    }

    #[test]
    fn behind_straight_segment_drives_straight() {
        let mut t = PathTracker::new(NavConfig::default());
        let plan = line_plan();
        let cmd = t.track(&plan, &Pose2D::new(-1.0, 0.0, 0.0), &clear_scan());
        assert_eq!(cmd.status, TrackStatus::Tracking);
        assert!(cmd.twist.linear > 0.0);
        assert!(cmd.twist.angular.abs() < 1e-9);
    }

    #[test]
    fn side_obstacle_slows_but_does_not_block() {
        let cfg = NavConfig::default();
        let mut free = PathTracker::new(cfg);
        let mut slow = PathTracker::new(cfg);
        let plan = line_plan();
        let pose = Pose2D::new(1.0, 0.0, 0.0);
        for _ in 0..20 {
            free.track(&plan, &pose, &clear_scan());
        }
        let side = scan_with(|a| if (a - PI / 2.0).abs() < 0.05 { 0.5 } else { f64::INFINITY });
        let mut last = None;
        for _ in 0..20 {
            last = Some(slow.track(&plan, &pose, &side));
        }
        let last = last.unwrap();
        assert_eq!(last.status, TrackStatus::Tracking);
        assert!((last.twist.linear - 0.5 * free.last_twist().linear).abs() < 1e-9);
    }

    #[test]
    fn acceleration_is_bounded_on_speed_up() {
        let cfg = NavConfig::default();
        let mut t = PathTracker::new(cfg);
        let plan = line_plan();
        let mut prev = Twist2D::ZERO;
        for _ in 0..30 {
            let cmd = t.track(&plan, &Pose2D::new(0.5, 0.0, 0.0), &clear_scan());
            assert!(cmd.twist.linear - prev.linear <= cfg.accel_linear * cfg.dt + 1e-12);
            assert!(cmd.twist.linear <= cfg.max_linear);
            prev = cmd.twist;
        }
        assert!((prev.linear - cfg.max_linear).abs() < 1e-9);
    }

    #[test]
    fn turns_in_place_toward_path_behind() {
        let mut t = PathTracker::new(NavConfig::default());
        let cmd = t.track(&line_plan(), &Pose2D::new(1.0, 0.0, PI), &clear_scan());
        assert_eq!(cmd.twist.linear, 0.0);
        assert!(cmd.twist.angular != 0.0);
    }

    #[test]
    fn ramp_brakes_immediately() {
        assert_eq!(ramp(0.5, 0.0, 0.05), 0.0);
        assert_eq!(ramp(0.5, -0.5, 0.05), -0.05);
        assert_eq!(ramp(0.0, 0.5, 0.05), 0.05);
        assert_eq!(ramp(0.3, 0.2, 0.05), 0.2);
    }
}

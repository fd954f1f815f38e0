//! Per-robot motion task execution: planning, periodic replanning, leg
//! sequencing and failure detection.

use serde::{Deserialize, Serialize};

use crate::error::NavError;
use crate::geom::{angle_diff, Point2, Pose2D, Twist2D};
use crate::mapping::TernaryGrid;
use crate::sim::{LaserScan, WorldModel};

use super::band::deform_band;
use super::costmap::CostMap;
use super::planner::{densify, orient, plan_global};
use super::tracker::PathTracker;
use super::{NavConfig, PathPlan, PlanSource, TrackStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionGoal {
    Goal(Pose2D),
    Waypoints(Vec<Pose2D>),
    Drawn(Vec<Pose2D>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NavEvent {
    /// Leg `done` of `total` reached (waypoint sequences only).
    Progress { done: usize, total: usize },
    Completed,
    Failed(NavError),
    /// The tracked plan was replaced.
    PlanChanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavOutput {
    pub twist: Twist2D,
    /// `None` when no motion task is active.
    pub status: Option<TrackStatus>,
    pub events: Vec<NavEvent>,
}

#[derive(Debug, Clone, PartialEq)]
struct Active {
    goal: MotionGoal,
    leg: usize,
    since_plan: f64,
    blocked_for: f64,
    best_remaining: f64,
    since_progress: f64,
    /// Consecutive replans that found no path.
    no_path: u32,
}

impl Active {
    fn legs(&self) -> usize {
        match &self.goal {
            MotionGoal::Waypoints(seq) => seq.len(),
            _ => 1,
        }
    }

    fn target(&self) -> Option<Pose2D> {
        match &self.goal {
            MotionGoal::Goal(p) => Some(*p),
            MotionGoal::Waypoints(seq) => seq.get(self.leg).copied(),
            MotionGoal::Drawn(pts) => pts.last().copied(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Navigator {
    pub config: NavConfig,
    tracker: PathTracker,
    active: Option<Active>,
    plan: Option<PathPlan>,
    plan_version: u64,
}

/// Growth in remaining route length, meters, that counts as a detour.
const DETOUR: f64 = 0.25;

/// Consecutive no-path replans after which a task fails with NoPath.
const NO_PATH_REPLANS: u32 = 2;

fn remaining_length(plan: &PathPlan, from: usize, here: Point2) -> f64 {
    let pts = &plan.waypoints;
    if pts.is_empty() {
        return 0.0;
    }
    let i = from.min(pts.len() - 1);
    let tail: f64 = pts[i..].windows(2).map(|w| w[0].distance(&w[1])).sum();
    here.distance(&pts[i].position()) + tail
}

impl Navigator {
    pub fn new(config: NavConfig) -> Self {
        Self {
            config,
            tracker: PathTracker::new(config),
            active: None,
            plan: None,
            plan_version: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active.is_some()
    }

    pub fn plan(&self) -> Option<&PathPlan> {
        self.plan.as_ref()
    }

    /// Increments whenever the tracked plan changes or is cleared.
    pub fn plan_version(&self) -> u64 {
        self.plan_version
    }

    /// Start a motion task, replacing any current one.
    pub fn start(&mut self, goal: MotionGoal) -> Result<(), NavError> {
        let empty = match &goal {
            MotionGoal::Goal(_) => false,
            MotionGoal::Waypoints(s) | MotionGoal::Drawn(s) => s.is_empty(),
        };
        if empty {
            return Err(NavError::EmptyPlan);
        }
        self.clear_plan();
        self.active = Some(Active {
            goal,
            leg: 0,
            since_plan: 0.0,
            blocked_for: 0.0,
            best_remaining: f64::INFINITY,
            since_progress: 0.0,
            no_path: 0,
        });
        Ok(())
    }

    pub fn cancel(&mut self) {
        self.active = None;
        self.clear_plan();
        self.tracker.stop();
    }

    fn clear_plan(&mut self) {
        if self.plan.take().is_some() {
            self.plan_version += 1;
        }
        self.tracker.reset();
    }

    fn set_plan(&mut self, plan: PathPlan) {
        self.plan = Some(plan);
        self.plan_version += 1;
        self.tracker.reset();
    }

    fn make_plan(&self, active: &Active, map: &CostMap, pose: &Pose2D, scan: &LaserScan) -> Result<PathPlan, NavError> {
        let cfg = &self.config;
        match &active.goal {
            MotionGoal::Drawn(poses) => {
                let mut pts = vec![pose.position()];
                pts.extend(poses.iter().map(|p| p.position()));
                let pts = densify(&pts, cfg.waypoint_spacing);
                let plan = PathPlan {
                    waypoints: orient(&pts, poses.last().map(|p| p.theta).unwrap_or(pose.theta)),
                    source: PlanSource::Drawn,
                    goal_tolerance_xy: cfg.goal_tolerance_xy,
                    goal_tolerance_theta: cfg.goal_tolerance_theta,
                    cost: 0.0,
                };
                // drawn geometry is kept: only obstacle repulsion reshapes it
                let cfg = NavConfig {
                    band_alpha: 0.0,
                    ..*cfg
                };
                deform_band(&plan, map, &cfg)
            }
            _ => {
                let target = active.target().ok_or(NavError::EmptyPlan)?;
                let grown = map.covering(&[pose.position(), target.position()], cfg.inflation_radius() + 0.5);
                let map = grown.as_ref().unwrap_or(map);
                // what the scanner sees now counts even where the map lags
                let hits: Vec<Point2> = scan.points().map(|(_, p)| pose.as_transform().apply_point(p)).collect();
                let map = &map.with_obstacles(&hits);
                let raw = plan_global(map, pose, &target, cfg)?;
                match deform_band(&raw, map, cfg) {
                    Ok(p) => Ok(p),
                    Err(NavError::BandSevered(..)) => Ok(raw),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn fail(&mut self, err: NavError) -> NavOutput {
        let err = match self.active.as_ref().map(|a| (&a.goal, a.leg)) {
            Some((MotionGoal::Waypoints(_), leg)) => NavError::LegFailed {
                leg: leg + 1,
                source: Box::new(err),
            },
            _ => err,
        };
        self.cancel();
        NavOutput {
            twist: Twist2D::ZERO,
            status: None,
            events: vec![NavEvent::Failed(err)],
        }
    }

    fn within(&self, pose: &Pose2D, target: &Pose2D) -> bool {
        pose.position().distance(&target.position()) <= self.config.goal_tolerance_xy
            && angle_diff(target.theta, pose.theta).abs() <= self.config.goal_tolerance_theta
    }

    /// One control tick. `map` and `pose` must share a frame; `scan` is in the
    /// robot frame.
    pub fn step(&mut self, map: &CostMap, pose: &Pose2D, scan: &LaserScan) -> NavOutput {
        let dt = self.config.dt;
        let mut events = Vec::new();
        loop {
            let Some(active) = self.active.clone() else {
                self.tracker.stop();
                return NavOutput {
                    twist: Twist2D::ZERO,
                    status: None,
                    events,
                };
            };
            let Some(target) = active.target() else {
                return self.fail(NavError::EmptyPlan);
            };
            if self.plan.is_none() {
                if !matches!(active.goal, MotionGoal::Drawn(_)) && self.within(pose, &target) {
                    if self.finish_leg(&mut events) {
                        continue;
                    }
                    return NavOutput {
                        twist: Twist2D::ZERO,
                        status: Some(TrackStatus::Reached),
                        events,
                    };
                }
                match self.make_plan(&active, map, pose, scan) {
                    Ok(plan) => {
                        self.set_plan(plan);
                        events.push(NavEvent::PlanChanged);
                    }
                    Err(e) => {
                        let mut out = self.fail(e);
                        events.append(&mut out.events);
                        out.events = events;
                        return out;
                    }
                }
            }
            break;
        }

        let replan_due = {
            let a = self.active.as_ref().unwrap();
            !matches!(a.goal, MotionGoal::Drawn(_))
                && (a.since_plan >= self.config.replan_period || a.blocked_for > self.config.blocked_replan_after)
        };
        if replan_due {
            let a = self.active.as_mut().unwrap();
            a.since_plan = 0.0;
            a.blocked_for = 0.0;
            let a = a.clone();
            // other failed replans keep the current plan
            let replanned = self.make_plan(&a, map, pose, scan);
            let a = self.active.as_mut().unwrap();
            a.no_path = if matches!(replanned, Err(NavError::NoPath)) { a.no_path + 1 } else { 0 };
            if a.no_path >= NO_PATH_REPLANS {
                let mut out = self.fail(NavError::NoPath);
                events.append(&mut out.events);
                out.events = events;
                return out;
            }
            if let Ok(plan) = replanned {
                if Some(&plan) != self.plan.as_ref() {
                    // a route that grew by a detour restarts the progress clock
                    let longer = remaining_length(&plan, 0, pose.position());
                    let a = self.active.as_mut().unwrap();
                    if longer > a.best_remaining + DETOUR {
                        a.best_remaining = longer;
                        a.since_progress = 0.0;
                    }
                    self.set_plan(plan);
                    events.push(NavEvent::PlanChanged);
                }
            }
        }

        let plan = self.plan.clone().unwrap();
        let cmd = self.tracker.track(&plan, pose, scan);
        let remaining = remaining_length(&plan, self.tracker_progress(), pose.position());
        let a = self.active.as_mut().unwrap();
        a.since_plan += dt;
        a.blocked_for = if cmd.status == TrackStatus::Blocked { a.blocked_for + dt } else { 0.0 };
        if remaining < a.best_remaining - 0.05 {
            a.best_remaining = remaining;
            a.since_progress = 0.0;
        } else {
            a.since_progress += dt;
        }
        if a.since_progress > self.config.stuck_timeout {
            let t = a.since_progress;
            let mut out = self.fail(NavError::Stuck(t));
            events.append(&mut out.events);
            out.events = events;
            return out;
        }
        if cmd.status == TrackStatus::Reached {
            let more = self.finish_leg(&mut events);
            if more {
                self.clear_plan();
                events.push(NavEvent::PlanChanged);
            }
            return NavOutput {
                twist: Twist2D::ZERO,
                status: Some(TrackStatus::Reached),
                events,
            };
        }
        NavOutput {
            twist: cmd.twist,
            status: Some(cmd.status),
            events,
        }
    }

    fn tracker_progress(&self) -> usize {
        self.tracker.progress()
    }

    /// Marks the current leg reached. Returns true if another leg follows.
    fn finish_leg(&mut self, events: &mut Vec<NavEvent>) -> bool {
        let a = self.active.as_mut().unwrap();
        let total = a.legs();
        if matches!(a.goal, MotionGoal::Waypoints(_)) {
            events.push(NavEvent::Progress {
                done: a.leg + 1,
                total,
            });
        }
        a.leg += 1;
        a.no_path = 0;
        a.since_plan = 0.0;
        a.blocked_for = 0.0;
        a.best_remaining = f64::INFINITY;
        a.since_progress = 0.0;
        if a.leg >= total {
            events.push(NavEvent::Completed);
            self.active = None;
            self.clear_plan();
            self.tracker.stop();
            false
        } else {
            true
        }
    }
}

/// Outcome of driving one simulated robot through a waypoint sequence on a
/// known map.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointRun {
    pub events: Vec<NavEvent>,
    pub result: Result<(), NavError>,
    pub elapsed: f64,
    /// Smallest true center-to-obstacle distance seen along the trajectory.
    pub min_clearance: f64,
    pub trajectory: Vec<Pose2D>,
}

/// Plan and track each leg of `sequence` in order using the true pose and a
/// fully known map, stepping `world` until completion, failure or `max_time`.
pub fn run_waypoints(
    world: &mut WorldModel,
    robot_id: &str,
    sequence: &[Pose2D],
    grid: &TernaryGrid,
    config: NavConfig,
    max_time: f64,
) -> WaypointRun {
    let map = CostMap::new(grid);
    let mut nav = Navigator::new(config);
    let mut run = WaypointRun {
        events: Vec::new(),
        result: Ok(()),
        elapsed: 0.0,
        min_clearance: f64::INFINITY,
        trajectory: Vec::new(),
    };
    if let Err(e) = nav.start(MotionGoal::Waypoints(sequence.to_vec())) {
        run.result = Err(e);
        return run;
    }
    let t0 = world.time();
    loop {
        let pose = world.robot(robot_id).expect("robot exists").pose_true;
        run.trajectory.push(pose);
        run.min_clearance = run.min_clearance.min(world.truth.clearance(pose.position(), 2.0));
        let scan = world.scan(robot_id).expect("robot exists");
        let out = nav.step(&map, &pose, &scan);
        let mut done = false;
        for ev in out.events {
            match &ev {
                NavEvent::Completed => done = true,
                NavEvent::Failed(e) => {
                    run.result = Err(e.clone());
                    done = true;
                }
                _ => {}
            }
            run.events.push(ev);
        }
        world.command(robot_id, out.twist).expect("robot exists");
        if done {
            world.command(robot_id, Twist2D::ZERO).expect("robot exists");
            break;
        }
        if world.time() - t0 >= max_time {
            world.command(robot_id, Twist2D::ZERO).expect("robot exists");
            run.result = Err(NavError::Timeout(max_time));
            break;
        }
        world.step();
    }
    run.elapsed = world.time() - t0;
    run
}

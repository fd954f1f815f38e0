//! Global planning, elastic-band smoothing and pure-pursuit tracking.

pub mod band;
pub mod costmap;
pub mod navigator;
pub mod planner;
pub mod tracker;

use serde::{Deserialize, Serialize};

use crate::geom::{Pose2D, Twist2D};

pub use band::deform_band;
pub use costmap::CostMap;
pub use navigator::{run_waypoints, MotionGoal, NavEvent, Navigator, WaypointRun};
pub use planner::plan_global;
pub use tracker::PathTracker;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub robot_radius: f64,
    /// Added to the robot radius to get the planning inflation radius.
    pub inflation_margin: f64,
    pub unknown_cost: f64,
    pub waypoint_spacing: f64,
    pub band_alpha: f64,
    pub band_beta: f64,
    pub band_influence: f64,
    pub band_iterations: usize,
    pub band_tolerance: f64,
    pub band_max_step: f64,
    pub lookahead: f64,
    pub slow_down_range: f64,
    pub blocked_range: f64,
    pub goal_tolerance_xy: f64,
    pub goal_tolerance_theta: f64,
    pub max_linear: f64,
    pub max_angular: f64,
    pub accel_linear: f64,
    pub accel_angular: f64,
    pub dt: f64,
    pub replan_period: f64,
    pub blocked_replan_after: f64,
    pub stuck_timeout: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            robot_radius: 0.18,
            inflation_margin: 0.1,
            unknown_cost: 3.0,
            waypoint_spacing: 0.25,
            band_alpha: 0.3,
            band_beta: 0.6,
            band_influence: 0.4,
            band_iterations: 50,
            band_tolerance: 0.01,
            band_max_step: 0.05,
            lookahead: 0.4,
            slow_down_range: 1.0,
            blocked_range: 0.3,
            goal_tolerance_xy: 0.1,
            goal_tolerance_theta: 10f64.to_radians(),
            max_linear: 0.5,
            max_angular: 1.5,
            accel_linear: 1.0,
            accel_angular: 4.0,
            dt: 0.05,
            replan_period: 2.0,
            blocked_replan_after: 1.0,
            stuck_timeout: 30.0,
        }
    }
}

impl NavConfig {
    pub fn inflation_radius(&self) -> f64 {
        self.robot_radius + self.inflation_margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Planned,
    Drawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub waypoints: Vec<Pose2D>,
    pub source: PlanSource,
    pub goal_tolerance_xy: f64,
    pub goal_tolerance_theta: f64,
    /// A* cost in cell units; zero for drawn plans.
    pub cost: f64,
}

impl PathPlan {
    pub fn goal(&self) -> Option<&Pose2D> {
        self.waypoints.last()
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tracking,
    Blocked,
    Reached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCommand {
    pub twist: Twist2D,
    pub status: TrackStatus,
}

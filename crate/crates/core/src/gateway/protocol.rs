//! Operator wire messages: one flat JSON object per text frame, discriminated
//! by `type`. Poses travel as `[x, y, theta]`.

use std::collections::BTreeMap;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::fleet::mission::{Label, MissionState};
use crate::fleet::{RobotStatus, StatusState, TaskUpdate};
use crate::geom::Pose2D;
use crate::mapping::TernaryGrid;
use crate::nav::PathPlan;
use crate::sim::{CameraFrame, LaserScan, TagView};

use super::teleop::{TeleopEvent, TeleopMode, TeleopState};

pub const PROXIMITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Scan,
    Camera,
    Status,
    Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Hello {
        #[serde(default)]
        client: Option<String>,
        #[serde(default)]
        mode: Option<TeleopMode>,
    },
    ListRobots,
    ToggleStream {
        robot: String,
        stream: StreamKind,
        enabled: bool,
    },
    SetGoal {
        #[serde(default)]
        robot: Option<String>,
        #[serde(default)]
        robots: Option<Vec<String>>,
        pose: [f64; 3],
    },
    SetWaypoints {
        #[serde(default)]
        robot: Option<String>,
        #[serde(default)]
        robots: Option<Vec<String>>,
        poses: Vec<[f64; 3]>,
    },
    LabelPose {
        robot: String,
        pose: [f64; 3],
        text: String,
    },
    DrawPlan {
        #[serde(default)]
        robot: Option<String>,
        #[serde(default)]
        robots: Option<Vec<String>>,
        poses: Vec<[f64; 3]>,
    },
    TeleopClaim {
        robot: String,
        #[serde(default)]
        mode: Option<TeleopMode>,
    },
    TeleopRelease {
        robot: String,
    },
    TeleopEvent {
        robot: String,
        #[serde(flatten)]
        event: TeleopEvent,
    },
    CancelTask {
        task_id: u64,
    },
}

impl Inbound {
    pub fn type_name(&self) -> &'static str {
        match self {
            Inbound::Hello { .. } => "hello",
            Inbound::ListRobots => "list_robots",
            Inbound::ToggleStream { .. } => "toggle_stream",
            Inbound::SetGoal { .. } => "set_goal",
            Inbound::SetWaypoints { .. } => "set_waypoints",
            Inbound::LabelPose { .. } => "label_pose",
            Inbound::DrawPlan { .. } => "draw_plan",
            Inbound::TeleopClaim { .. } => "teleop_claim",
            Inbound::TeleopRelease { .. } => "teleop_release",
            Inbound::TeleopEvent { .. } => "teleop_event",
            Inbound::CancelTask { .. } => "cancel_task",
        }
    }
}

/// A parsed inbound frame with the optional client request id (`id`), which
/// replies echo back as `re`.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Option<u64>,
    pub msg: Inbound,
}

/// Parse a text frame. On failure returns the request id (if one could be
/// read) and a description.
pub fn parse_request(text: &str) -> Result<Request, (Option<u64>, Option<String>, String)> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| (None, None, format!("invalid JSON: {e}")))?;
    let Some(obj) = value.as_object() else {
        return Err((None, None, "message is not an object".into()));
    };
    let id = obj.get("id").and_then(|v| v.as_u64());
    let of = obj.get("type").and_then(|v| v.as_str()).map(str::to_string);
    if of.is_none() {
        return Err((id, None, "missing `type`".into()));
    }
    let msg = serde_json::from_value::<Inbound>(value.clone()).map_err(|e| (id, of.clone(), e.to_string()))?;
    Ok(Request { id, msg })
}

pub fn pose_array(p: &Pose2D) -> [f64; 3] {
    [p.x, p.y, p.theta]
}

pub fn pose_f32(p: &Pose2D) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.theta as f32]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedMessage,
    UnknownRobot,
    TeleopDenied,
    NotClaimed,
    InvalidTask,
    InvalidLabel,
    UnknownTask,
    UnknownTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopSnapshot {
    pub robot: String,
    pub linear_set: f64,
    pub angular_set: f64,
    pub linear_engaged: bool,
    pub angular_engaged: bool,
    pub twist: [f64; 2],
    pub mode: TeleopMode,
}

impl TeleopSnapshot {
    pub fn new(robot: &str, s: &TeleopState) -> Self {
        let t = s.twist();
        Self {
            robot: robot.to_string(),
            linear_set: s.linear_set(),
            angular_set: s.angular_set(),
            linear_engaged: s.linear_engaged,
            angular_engaged: s.angular_engaged,
            twist: [t.linear, t.angular],
            mode: s.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotInfo {
    pub id: String,
    pub spawn: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagBox {
    pub id: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<&TagView> for TagBox {
    fn from(t: &TagView) -> Self {
        Self {
            id: t.id,
            x0: t.x0,
            y0: t.y0,
            x1: t.x1,
            y1: t.y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Ack {
        #[serde(skip_serializing_if = "Option::is_none")]
        re: Option<u64>,
        of: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        session_id: Option<u64>,
        #[serde(skip_serializing_if = "Vec::is_empty", default)]
        task_ids: Vec<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        teleop: Option<TeleopSnapshot>,
    },
    Error {
        #[serde(skip_serializing_if = "Option::is_none")]
        re: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        of: Option<String>,
        code: ErrorCode,
        message: String,
    },
    RobotList {
        #[serde(skip_serializing_if = "Option::is_none")]
        re: Option<u64>,
        robots: Vec<RobotInfo>,
    },
    Status {
        robot: String,
        battery: f64,
        velocity: [f64; 2],
        pose: [f64; 3],
        task_state: StatusState,
        active_task_id: Option<u64>,
        tick: u64,
    },
    Scan {
        robot: String,
        tick: u64,
        angle_min: f64,
        angle_increment: f64,
        range_max: f64,
        /// `null` for beams without a return.
        ranges: Vec<Option<f32>>,
        proximity_mask: Vec<bool>,
    },
    Camera {
        robot: String,
        tick: u64,
        width: usize,
        height: usize,
        /// Base64 of packed RGB bytes, row-major, top row first.
        rgb: String,
        tags: Vec<TagBox>,
    },
    Path {
        robot: String,
        /// Empty when the robot has no plan.
        poses: Vec<[f32; 3]>,
        source: Option<String>,
    },
    MergedMap {
        tick: u64,
        width: usize,
        height: usize,
        /// Base64 of the run-length grid snapshot.
        rle: String,
    },
    MissionState {
        found: usize,
        total: usize,
        text: String,
        finders: BTreeMap<u32, String>,
        complete: bool,
    },
    LabelAdded {
        pose: [f64; 3],
        text: String,
        author: String,
    },
    TaskUpdate {
        task_id: u64,
        robot: String,
        state: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        tick: u64,
    },
}

impl Outbound {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize")
    }

    pub fn is_reply(&self) -> bool {
        matches!(self, Outbound::Ack { .. } | Outbound::Error { .. } | Outbound::RobotList { .. })
    }

    pub fn status(s: &RobotStatus, tick: u64) -> Self {
        Outbound::Status {
            robot: s.id.clone(),
            battery: s.battery,
            velocity: [s.velocity.linear, s.velocity.angular],
            pose: pose_array(&s.pose),
            task_state: s.task_state,
            active_task_id: s.active_task_id,
            tick,
        }
    }

    /// The mask is computed from the ranges as sent, so a client comparing
    /// a wire range against the threshold always agrees with it.
    pub fn scan(robot: &str, scan: &LaserScan) -> Self {
        let ranges: Vec<Option<f32>> = scan.ranges.iter().map(|r| r.is_finite().then_some(*r as f32)).collect();
        let sent: Vec<f64> = ranges.iter().map(|r| r.map_or(f64::INFINITY, f64::from)).collect();
        Outbound::Scan {
            robot: robot.to_string(),
            tick: scan.stamp_tick,
            angle_min: scan.angle_min,
            angle_increment: scan.angle_increment,
            range_max: scan.range_max,
            proximity_mask: proximity_mask(&sent, PROXIMITY_THRESHOLD),
            ranges,
        }
    }

    pub fn camera(robot: &str, frame: &CameraFrame) -> Self {
        Outbound::Camera {
            robot: robot.to_string(),
            tick: frame.stamp_tick,
            width: frame.width,
            height: frame.height,
            rgb: base64::engine::general_purpose::STANDARD.encode(&frame.rgb),
            tags: frame.visible_tags.iter().map(TagBox::from).collect(),
        }
    }

    pub fn path(robot: &str, plan: Option<&PathPlan>) -> Self {
        Outbound::Path {
            robot: robot.to_string(),
            poses: plan.map(|p| p.waypoints.iter().map(pose_f32).collect()).unwrap_or_default(),
            source: plan.map(|p| match p.source {
                crate::nav::PlanSource::Planned => "planned".to_string(),
                crate::nav::PlanSource::Drawn => "drawn".to_string(),
            }),
        }
    }

    pub fn merged_map(grid: &TernaryGrid, tick: u64) -> Self {
        Outbound::MergedMap {
            tick,
            width: grid.width(),
            height: grid.height(),
            rle: base64::engine::general_purpose::STANDARD.encode(grid.encode()),
        }
    }

    pub fn mission(m: &MissionState) -> Self {
        Outbound::MissionState {
            found: m.count(),
            total: m.total(),
            text: m.summary(),
            finders: m.found.iter().map(|(k, f)| (*k, f.robot.clone())).collect(),
            complete: m.is_complete(),
        }
    }

    pub fn label(l: &Label) -> Self {
        Outbound::LabelAdded {
            pose: pose_array(&l.pose),
            text: l.text.clone(),
            author: l.author.clone(),
        }
    }

    pub fn task_update(u: &TaskUpdate) -> Self {
        let reason = match &u.state {
            crate::fleet::TaskState::Failed(r) => Some(r.clone()),
            _ => None,
        };
        Outbound::TaskUpdate {
            task_id: u.task_id,
            robot: u.robot_id.clone(),
            state: u.state.name().to_string(),
            reason,
            tick: u.tick,
        }
    }
}

/// True exactly for beams strictly closer than `threshold`.
pub fn proximity_mask(ranges: &[f64], threshold: f64) -> Vec<bool> {
    ranges.iter().map(|&r| r < threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_inbound_shapes() {
        let r = parse_request(r#"{"type":"set_goal","robot":"r1","pose":[2.0,1.0,1.57],"id":7}"#).unwrap();
        assert_eq!(r.id, Some(7));
        assert_eq!(
            r.msg,
            Inbound::SetGoal {
                robot: Some("r1".into()),
                robots: None,
                pose: [2.0, 1.0, 1.57]
            }
        );
        let r = parse_request(r#"{"type":"teleop_event","robot":"r1","event":"speed_up_linear"}"#).unwrap();
        assert_eq!(
            r.msg,
            Inbound::TeleopEvent {
                robot: "r1".into(),
                event: TeleopEvent::SpeedUpLinear
            }
        );
        let r = parse_request(r#"{"type":"teleop_event","robot":"r1","event":"engage_angular","engaged":true,"direction":-1}"#)
            .unwrap();
        assert_eq!(
            r.msg,
            Inbound::TeleopEvent {
                robot: "r1".into(),
                event: TeleopEvent::EngageAngular {
                    engaged: true,
                    direction: -1
                }
            }
        );
        assert_eq!(parse_request(r#"{"type":"list_robots"}"#).unwrap().msg, Inbound::ListRobots);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_request("not json").is_err());
        assert!(parse_request("[1,2]").is_err());
        let (id, of, _) = parse_request(r#"{"id":3,"type":"set_goal","robot":"r1"}"#).unwrap_err();
        assert_eq!((id, of.as_deref()), (Some(3), Some("set_goal")));
        let (_, of, _) = parse_request(r#"{"type":"fly"}"#).unwrap_err();
        assert_eq!(of.as_deref(), Some("fly"));
        assert!(parse_request(r#"{"robot":"r1"}"#).is_err());
    }

    #[test]
    fn proximity_boundary_excluded() {
        let mask = proximity_mask(&[0.49, 0.5, 0.51, f64::INFINITY, 0.0, 0.49999999], 0.5);
        assert_eq!(mask, vec![true, false, false, false, true, true]);
    }

    #[test]
    fn scan_message_uses_null_for_no_return() {
        let scan = LaserScan {
            angle_min: -std::f64::consts::PI,
            angle_increment: 0.1,
            range_max: 8.0,
            ranges: vec![0.3, f64::INFINITY, 0.5, 0.499_999_999_999_999_8],
            stamp_tick: 4,
        };
        let json = Outbound::scan("r1", &scan).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["type"], "scan");
        assert_eq!(v["ranges"][1], serde_json::Value::Null);
        assert_eq!(v["ranges"][3], 0.5);
        assert_eq!(v["proximity_mask"], serde_json::json!([true, false, false, false]));
    }

    #[test]
    fn outbound_roundtrips_through_json() {
        let m = Outbound::Error {
            re: Some(1),
            of: Some("set_goal".into()),
            code: ErrorCode::UnknownRobot,
            message: "unknown robot `zz`".into(),
        };
        let back: Outbound = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains(r#""code":"unknown_robot""#));
    }
}

//! Coordination layer: brokers and replication, tasks, mission state and
//! robot status records.

pub mod broker;
pub mod link;
pub mod mission;
pub mod tasks;

use serde::{Deserialize, Serialize};

use crate::geom::{Pose2D, Twist2D};

pub use broker::{topic_matches, Broker, Envelope, Mesh, ReplicationPolicy};
pub use mission::{Label, MissionState};
pub use tasks::{Task, TaskBoard, TaskKind, TaskState, TaskUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusState {
    Idle,
    Executing,
    Blocked,
    Failed,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStatus {
    pub id: String,
    pub battery: f64,
    pub velocity: Twist2D,
    /// Pose in the merged map frame.
    pub pose: Pose2D,
    pub task_state: StatusState,
    pub active_task_id: Option<u64>,
}

impl RobotStatus {
    /// Status derived from the robot's task history: executing (or blocked)
    /// while a motion task is active, otherwise the outcome of its latest task.
    pub fn derive(
        id: &str,
        battery: f64,
        velocity: Twist2D,
        pose: Pose2D,
        board: &TaskBoard,
        blocked: bool,
    ) -> RobotStatus {
        let (task_state, active_task_id) = match board.active(id) {
            Some(t) if blocked => (StatusState::Blocked, Some(t.id)),
            Some(t) => (StatusState::Executing, Some(t.id)),
            None => {
                let last = board
                    .tasks
                    .values()
                    .rev()
                    .find(|t| t.robot_id == id && t.kind.is_motion());
                let s = match last.map(|t| &t.state) {
                    Some(TaskState::Completed) => StatusState::Completed,
                    Some(TaskState::Failed(_)) => StatusState::Failed,
                    _ => StatusState::Idle,
                };
                (s, None)
            }
        };
        RobotStatus {
            id: id.to_string(),
            battery,
            velocity,
            pose,
            task_state,
            active_task_id,
        }
    }
}

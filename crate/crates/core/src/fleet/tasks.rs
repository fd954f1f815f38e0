//! Task records, lifecycle transitions and the cancels-previous dispatch policy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::FleetError;
use crate::geom::Pose2D;

use super::mission::MAX_LABEL_BYTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    GoalPose { pose: Pose2D },
    WaypointSequence { poses: Vec<Pose2D> },
    LabelPose { pose: Pose2D, text: String },
    DrawnPlan { poses: Vec<Pose2D> },
}

impl TaskKind {
    pub fn is_motion(&self) -> bool {
        !matches!(self, TaskKind::LabelPose { .. })
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        match self {
            TaskKind::WaypointSequence { poses } if poses.is_empty() => {
                Err(FleetError::InvalidTask("waypoint list is empty".into()))
            }
            TaskKind::DrawnPlan { poses } if poses.is_empty() => Err(FleetError::InvalidTask("drawn plan is empty".into())),
            TaskKind::LabelPose { text, .. } => validate_label(text),
            _ => Ok(()),
        }
    }
}

/// Label text must be non-blank and at most [`MAX_LABEL_BYTES`] bytes.
pub fn validate_label(text: &str) -> Result<(), FleetError> {
    if text.trim().is_empty() {
        return Err(FleetError::InvalidLabel("text is empty".into()));
    }
    if text.len() > MAX_LABEL_BYTES {
        return Err(FleetError::InvalidLabel(format!(
            "text is {} bytes, limit is {MAX_LABEL_BYTES}",
            text.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Executing,
    Completed,
    Failed(String),
    Cancelled,
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Completed | TaskState::Failed(_) | TaskState::Cancelled)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskState::Queued => "queued",
            TaskState::Executing => "executing",
            TaskState::Completed => "completed",
            TaskState::Failed(_) => "failed",
            TaskState::Cancelled => "cancelled",
        }
    }

    fn may_become(&self, next: &TaskState) -> bool {
        matches!(
            (self, next),
            (TaskState::Queued, TaskState::Executing)
                | (TaskState::Queued, TaskState::Cancelled)
                | (TaskState::Executing, TaskState::Completed)
                | (TaskState::Executing, TaskState::Failed(_))
                | (TaskState::Executing, TaskState::Cancelled)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub robot_id: String,
    pub kind: TaskKind,
    pub state: TaskState,
    pub issued_tick: u64,
    pub terminal_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUpdate {
    pub task_id: u64,
    pub robot_id: String,
    pub state: TaskState,
    pub tick: u64,
}

/// All tasks ever issued, the motion task each robot is executing, and the
/// ordered log of state changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskBoard {
    pub tasks: BTreeMap<u64, Task>,
    active: BTreeMap<String, u64>,
    next_id: u64,
    pub log: Vec<TaskUpdate>,
}

impl TaskBoard {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Default::default()
        }
    }

    pub fn get(&self, id: u64) -> Option<&Task> {
        self.tasks.get(&id)
    }

    /// Executing motion task of a robot.
    pub fn active(&self, robot: &str) -> Option<&Task> {
        self.active.get(robot).and_then(|id| self.tasks.get(id))
    }

    pub fn transition(&mut self, id: u64, next: TaskState, tick: u64) -> Result<TaskUpdate, FleetError> {
        let task = self.tasks.get_mut(&id).ok_or(FleetError::UnknownTask(id))?;
        if !task.state.may_become(&next) {
            return Err(FleetError::InvalidTask(format!(
                "task {id} cannot go from {} to {}",
                task.state.name(),
                next.name()
            )));
        }
        task.state = next.clone();
        if next.is_terminal() {
            task.terminal_tick = Some(tick);
            if self.active.get(&task.robot_id) == Some(&id) {
                self.active.remove(&task.robot_id);
            }
        } else if next == TaskState::Executing && task.kind.is_motion() {
            self.active.insert(task.robot_id.clone(), id);
        }
        let update = TaskUpdate {
            task_id: id,
            robot_id: task.robot_id.clone(),
            state: next,
            tick,
        };
        self.log.push(update.clone());
        Ok(update)
    }

    /// Create a task and start it. A motion task cancels the robot's current
    /// one; a label task completes at once.
    pub fn dispatch(
        &mut self,
        robots: &BTreeSet<String>,
        robot: &str,
        kind: TaskKind,
        tick: u64,
    ) -> Result<(u64, Vec<TaskUpdate>), FleetError> {
        if !robots.contains(robot) {
            return Err(FleetError::UnknownRobot(robot.to_string()));
        }
        kind.validate()?;
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        let motion = kind.is_motion();
        self.tasks.insert(
            id,
            Task {
                id,
                robot_id: robot.to_string(),
                kind,
                state: TaskState::Queued,
                issued_tick: tick,
                terminal_tick: None,
            },
        );
        let mut updates = vec![TaskUpdate {
            task_id: id,
            robot_id: robot.to_string(),
            state: TaskState::Queued,
            tick,
        }];
        self.log.push(updates[0].clone());
        if motion {
            if let Some(prev) = self.active.get(robot).copied() {
                updates.push(self.transition(prev, TaskState::Cancelled, tick)?);
            }
        }
        updates.push(self.transition(id, TaskState::Executing, tick)?);
        if !motion {
            updates.push(self.transition(id, TaskState::Completed, tick)?);
        }
        Ok((id, updates))
    }

    /// Cancel a queued or executing task.
    pub fn cancel(&mut self, id: u64, tick: u64) -> Result<TaskUpdate, FleetError> {
        self.transition(id, TaskState::Cancelled, tick)
    }

    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for t in self.tasks.values() {
            *out.entry(t.state.name()).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn robots() -> BTreeSet<String> {
        ["r1", "r2"].iter().map(|s| s.to_string()).collect()
    }

    fn goal() -> TaskKind {
        TaskKind::GoalPose {
            pose: Pose2D::new(2.0, 1.0, 1.57),
        }
    }

    #[test]
    fn goal_runs_then_completes() {
        let mut b = TaskBoard::new();
        let (id, ups) = b.dispatch(&robots(), "r1", goal(), 0).unwrap();
        assert_eq!(ups.last().unwrap().state, TaskState::Executing);
        assert_eq!(b.active("r1").unwrap().id, id);
        b.transition(id, TaskState::Completed, 50).unwrap();
        assert_eq!(b.get(id).unwrap().terminal_tick, Some(50));
        assert!(b.active("r1").is_none());
    }

    #[test]
    fn second_goal_cancels_first() {
        let mut b = TaskBoard::new();
        let (first, _) = b.dispatch(&robots(), "r1", goal(), 0).unwrap();
        let (second, ups) = b.dispatch(&robots(), "r1", goal(), 5).unwrap();
        assert_eq!(b.get(first).unwrap().state, TaskState::Cancelled);
        assert_eq!(b.get(second).unwrap().state, TaskState::Executing);
        let states: Vec<_> = ups.iter().map(|u| (u.task_id, u.state.name())).collect();
        assert_eq!(states, vec![(second, "queued"), (first, "cancelled"), (second, "executing")]);
    }

    #[test]
    fn other_robots_unaffected() {
        let mut b = TaskBoard::new();
        let (a, _) = b.dispatch(&robots(), "r1", goal(), 0).unwrap();
        b.dispatch(&robots(), "r2", goal(), 0).unwrap();
        assert_eq!(b.get(a).unwrap().state, TaskState::Executing);
    }

    #[test]
    fn label_completes_immediately_and_keeps_motion() {
        let mut b = TaskBoard::new();
        let (g, _) = b.dispatch(&robots(), "r1", goal(), 0).unwrap();
        let (l, _) = b
            .dispatch(
                &robots(),
                "r1",
                TaskKind::LabelPose {
                    pose: Pose2D::default(),
                    text: "here".into(),
                },
                1,
            )
            .unwrap();
        assert_eq!(b.get(l).unwrap().state, TaskState::Completed);
        assert_eq!(b.get(g).unwrap().state, TaskState::Executing);
    }

    #[test]
    fn validation_errors() {
        let mut b = TaskBoard::new();
        assert!(matches!(
            b.dispatch(&robots(), "r1", TaskKind::WaypointSequence { poses: vec![] }, 0),
            Err(FleetError::InvalidTask(_))
        ));
        assert!(matches!(
            b.dispatch(&robots(), "r1", TaskKind::DrawnPlan { poses: vec![] }, 0),
            Err(FleetError::InvalidTask(_))
        ));
        assert_eq!(b.dispatch(&robots(), "zz", goal(), 0), Err(FleetError::UnknownRobot("zz".into())));
        assert!(b.tasks.is_empty());
    }

    #[test]
    fn terminal_states_are_final() {
        let mut b = TaskBoard::new();
        let (id, _) = b.dispatch(&robots(), "r1", goal(), 0).unwrap();
        b.cancel(id, 1).unwrap();
        assert!(b.transition(id, TaskState::Executing, 2).is_err());
        assert!(b.transition(id, TaskState::Completed, 2).is_err());
        assert!(b.cancel(id, 2).is_err());
        assert_eq!(b.cancel(999, 2), Err(FleetError::UnknownTask(999)));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Dispatch(usize, bool),
        Complete(usize),
        Fail(usize),
        Cancel(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..2, any::<bool>()).prop_map(|(r, m)| Op::Dispatch(r, m)),
            (0usize..2).prop_map(Op::Complete),
            (0usize..2).prop_map(Op::Fail),
            (1u64..20).prop_map(Op::Cancel),
        ]
    }

    proptest! {
        #[test]
        fn no_task_leaves_a_terminal_state(ops in prop::collection::vec(op(), 1..60)) {
            let mut b = TaskBoard::new();
            let names = ["r1", "r2"];
            for (tick, op) in ops.into_iter().enumerate() {
                let tick = tick as u64;
                let _ = match op {
                    Op::Dispatch(r, motion) => {
                        let kind = if motion { goal() } else { TaskKind::LabelPose { pose: Pose2D::default(), text: "x".into() } };
                        b.dispatch(&robots(), names[r], kind, tick).map(|_| ())
                    }
                    Op::Complete(r) => match b.active(names[r]).map(|t| t.id) {
                        Some(id) => b.transition(id, TaskState::Completed, tick).map(|_| ()),
                        None => Ok(()),
                    },
                    Op::Fail(r) => match b.active(names[r]).map(|t| t.id) {
                        Some(id) => b.transition(id, TaskState::Failed("x".into()), tick).map(|_| ()),
                        None => Ok(()),
                    },
                    Op::Cancel(id) => b.cancel(id, tick).map(|_| ()),
                };
                // at most one executing motion task per robot
                for r in names {
                    let executing = b.tasks.values().filter(|t| t.robot_id == r && t.state == TaskState::Executing && t.kind.is_motion()).count();
                    prop_assert!(executing <= 1);
                }
            }
            let mut last: BTreeMap<u64, &TaskState> = BTreeMap::new();
            for u in &b.log {
                if let Some(prev) = last.get(&u.task_id) {
                    prop_assert!(!prev.is_terminal(), "task {} left {:?}", u.task_id, prev);
                }
                last.insert(u.task_id, &u.state);
            }
        }
    }
}

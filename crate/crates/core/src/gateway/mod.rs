//! Operator sessions, message handling and teleop leases. Transport-free: the
//! caller feeds text frames in and drains outbound messages per session.

pub mod protocol;
pub mod session;
pub mod teleop;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FleetError, GatewayError};
use crate::fleet::TaskKind;
use crate::geom::{Pose2D, Twist2D};

pub use protocol::{parse_request, proximity_mask, ErrorCode, Inbound, Outbound, RobotInfo, StreamKind};
pub use session::{Session, SlotKey};
pub use teleop::{TeleopConfig, TeleopEvent, TeleopMode, TeleopState};

use protocol::TeleopSnapshot;

/// What the gateway needs from the coordination layer.
pub trait FleetPort {
    fn robots(&self) -> Vec<RobotInfo>;
    fn dispatch(&mut self, robot: &str, kind: TaskKind, author: &str) -> Result<u64, FleetError>;
    fn cancel_task(&mut self, task_id: u64) -> Result<(), FleetError>;
    /// A session took manual control; motion tasks for the robot should stop.
    fn teleop_claimed(&mut self, robot: &str);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub teleop: TeleopConfig,
    /// Simulation step, used to turn stream periods into ticks.
    pub dt: f64,
    pub scan_period: f64,
    pub camera_period: f64,
    pub status_period: f64,
    pub control_queue_limit: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            teleop: TeleopConfig::default(),
            dt: 0.05,
            scan_period: 0.1,
            camera_period: 0.2,
            status_period: 0.2,
            control_queue_limit: 4096,
        }
    }
}

impl GatewayConfig {
    pub fn min_interval(&self, stream: StreamKind) -> u64 {
        let period = match stream {
            StreamKind::Scan => self.scan_period,
            StreamKind::Camera => self.camera_period,
            StreamKind::Status => self.status_period,
            StreamKind::Path => 0.0,
        };
        (period / self.dt - 1e-9).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone)]
struct Claim {
    session: u64,
    state: TeleopState,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub config: GatewayConfig,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    claims: BTreeMap<String, Claim>,
    /// Robots whose lease ended and still need a zero command.
    released: Vec<String>,
}

fn to_pose(p: &[f64; 3]) -> Pose2D {
    Pose2D::new(p[0], p[1], p[2])
}

fn error_code(e: &GatewayError) -> ErrorCode {
    match e {
        GatewayError::MalformedMessage(_) => ErrorCode::MalformedMessage,
        GatewayError::UnknownRobot(_) => ErrorCode::UnknownRobot,
        GatewayError::TeleopDenied { .. } => ErrorCode::TeleopDenied,
        GatewayError::NotClaimed(_) => ErrorCode::NotClaimed,
        GatewayError::Fleet(f) => match f {
            FleetError::UnknownRobot(_) => ErrorCode::UnknownRobot,
            FleetError::InvalidTask(_) => ErrorCode::InvalidTask,
            FleetError::InvalidLabel(_) => ErrorCode::InvalidLabel,
            FleetError::UnknownTask(_) => ErrorCode::UnknownTask,
            FleetError::UnknownTag(_) => ErrorCode::UnknownTag,
            FleetError::Frame(_) => ErrorCode::MalformedMessage,
        },
    }
}

enum Reply {
    List(Vec<RobotInfo>),
    Ack(AckExtra),
}

#[derive(Default)]
struct AckExtra {
    session_id: Option<u64>,
    task_ids: Vec<u64>,
    teleop: Option<TeleopSnapshot>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            config,
            sessions: BTreeMap::new(),
            next_session: 1,
            claims: BTreeMap::new(),
            released: Vec::new(),
        }
    }

    /// New session, subscribed to the status stream of every robot.
    pub fn open_session(&mut self, robots: &[RobotInfo], tick: u64) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        let mut s = Session::new(id, tick, self.config.control_queue_limit);
        for r in robots {
            s.set_subscription(&r.id, StreamKind::Status, true);
        }
        self.sessions.insert(id, s);
        id
    }

    /// Disconnect: the session's teleop leases end at once.
    pub fn close_session(&mut self, id: u64) {
        self.sessions.remove(&id);
        let held: Vec<String> = self
            .claims
            .iter()
            .filter(|(_, c)| c.session == id)
            .map(|(r, _)| r.clone())
            .collect();
        for r in held {
            self.claims.remove(&r);
            self.released.push(r);
        }
    }

    pub fn session(&self, id: u64) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn session_ids(&self) -> Vec<u64> {
        self.sessions.keys().copied().collect()
    }

    pub fn claim_holder(&self, robot: &str) -> Option<u64> {
        self.claims.get(robot).map(|c| c.session)
    }

    pub fn teleop_state(&self, robot: &str) -> Option<&TeleopState> {
        self.claims.get(robot).map(|c| &c.state)
    }

    /// Commands to apply this tick: the lease twist for every claimed robot,
    /// and a zero twist for each robot whose lease just ended.
    pub fn teleop_commands(&mut self) -> Vec<(String, Twist2D)> {
        let mut out: Vec<(String, Twist2D)> = self.released.drain(..).map(|r| (r, Twist2D::ZERO)).collect();
        out.retain(|(r, _)| !self.claims.contains_key(r));
        out.extend(self.claims.iter().map(|(r, c)| (r.clone(), c.state.twist())));
        out
    }

    /// Release every lease (shutdown). Returns the robots that must be stopped.
    pub fn release_all(&mut self) -> Vec<String> {
        let mut robots: Vec<String> = std::mem::take(&mut self.claims).into_keys().collect();
        robots.append(&mut self.released);
        robots.sort();
        robots.dedup();
        robots
    }

    pub fn broadcast(&mut self, msg: &Outbound) {
        for s in self.sessions.values_mut() {
            s.push_control(msg.clone());
        }
    }

    /// True if any session subscribes to this robot stream.
    pub fn wants(&self, robot: &str, stream: StreamKind) -> bool {
        self.sessions.values().any(|s| s.is_subscribed(robot, stream))
    }

    pub fn offer(&mut self, robot: &str, stream: StreamKind, tick: u64, msg: &Outbound) {
        let interval = self.config.min_interval(stream);
        for s in self.sessions.values_mut() {
            s.offer(robot, stream, tick, interval, msg.clone());
        }
    }

    pub fn offer_global(&mut self, key: SlotKey, msg: &Outbound) {
        for s in self.sessions.values_mut() {
            s.offer_global(key.clone(), msg.clone());
        }
    }

    pub fn drain(&mut self, session: u64) -> Vec<Outbound> {
        self.sessions.get_mut(&session).map(Session::drain).unwrap_or_default()
    }

    /// Handle one inbound text frame. Exactly one reply (ack, robot_list or
    /// error) is queued on the session and also returned.
    pub fn handle_text(&mut self, session: u64, text: &str, port: &mut dyn FleetPort, tick: u64) -> Outbound {
        let reply = match parse_request(text) {
            Ok(req) => {
                let of = req.msg.type_name().to_string();
                match self.handle(session, req.msg, port) {
                    Ok(Reply::List(robots)) => Outbound::RobotList { re: req.id, robots },
                    Ok(Reply::Ack(extra)) => Outbound::Ack {
                        re: req.id,
                        of,
                        session_id: extra.session_id,
                        task_ids: extra.task_ids,
                        teleop: extra.teleop,
                    },
                    Err(e) => Outbound::Error {
                        re: req.id,
                        of: Some(of),
                        code: error_code(&e),
                        message: e.to_string(),
                    },
                }
            }
            Err((re, of, message)) => Outbound::Error {
                re,
                of,
                code: ErrorCode::MalformedMessage,
                message: GatewayError::MalformedMessage(message).to_string(),
            },
        };
        if let Some(s) = self.sessions.get_mut(&session) {
            s.last_activity_tick = tick;
            s.push_control(reply.clone());
        }
        reply
    }

    fn check_robot(port: &dyn FleetPort, robot: &str) -> Result<(), GatewayError> {
        if port.robots().iter().any(|r| r.id == robot) {
            Ok(())
        } else {
            Err(GatewayError::UnknownRobot(robot.to_string()))
        }
    }

    fn targets(port: &dyn FleetPort, robot: Option<String>, robots: Option<Vec<String>>) -> Result<Vec<String>, GatewayError> {
        let mut list = robots.unwrap_or_default();
        if let Some(r) = robot {
            if !list.contains(&r) {
                list.insert(0, r);
            }
        }
        if list.is_empty() {
            return Err(GatewayError::MalformedMessage("no `robot` or `robots` given".into()));
        }
        for r in &list {
            Self::check_robot(port, r)?;
        }
        Ok(list)
    }

    fn dispatch_all(
        port: &mut dyn FleetPort,
        targets: Vec<String>,
        kind: TaskKind,
        author: &str,
    ) -> Result<Vec<u64>, GatewayError> {
        kind.validate()?;
        let mut ids = Vec::with_capacity(targets.len());
        for r in targets {
            ids.push(port.dispatch(&r, kind.clone(), author)?);
        }
        Ok(ids)
    }

    fn handle(&mut self, session: u64, msg: Inbound, port: &mut dyn FleetPort) -> Result<Reply, GatewayError> {
        let ack = |extra: AckExtra| Ok(Reply::Ack(extra));
        let fail = Err;
        let author = format!("operator:{session}");
        match msg {
            Inbound::Hello { mode, .. } => {
                if let (Some(s), Some(m)) = (self.sessions.get_mut(&session), mode) {
                    s.mode = m;
                }
                ack(AckExtra {
                    session_id: Some(session),
                    ..Default::default()
                })
            }
            Inbound::ListRobots => Ok(Reply::List(port.robots())),
            Inbound::ToggleStream { robot, stream, enabled } => {
                if let Err(e) = Self::check_robot(port, &robot) {
                    return fail(e);
                }
                if let Some(s) = self.sessions.get_mut(&session) {
                    s.set_subscription(&robot, stream, enabled);
                }
                ack(AckExtra::default())
            }
            Inbound::SetGoal { robot, robots, pose } => {
                let kind = TaskKind::GoalPose { pose: to_pose(&pose) };
                match Self::targets(port, robot, robots).and_then(|t| Self::dispatch_all(port, t, kind, &author)) {
                    Ok(task_ids) => ack(AckExtra {
                        task_ids,
                        ..Default::default()
                    }),
                    Err(e) => fail(e),
                }
            }
            Inbound::SetWaypoints { robot, robots, poses } => {
                let kind = TaskKind::WaypointSequence {
                    poses: poses.iter().map(to_pose).collect(),
                };
                match Self::targets(port, robot, robots).and_then(|t| Self::dispatch_all(port, t, kind, &author)) {
                    Ok(task_ids) => ack(AckExtra {
                        task_ids,
                        ..Default::default()
                    }),
                    Err(e) => fail(e),
                }
            }
            Inbound::DrawPlan { robot, robots, poses } => {
                let kind = TaskKind::DrawnPlan {
                    poses: poses.iter().map(to_pose).collect(),
                };
                match Self::targets(port, robot, robots).and_then(|t| Self::dispatch_all(port, t, kind, &author)) {
                    Ok(task_ids) => ack(AckExtra {
                        task_ids,
                        ..Default::default()
                    }),
                    Err(e) => fail(e),
                }
            }
            Inbound::LabelPose { robot, pose, text } => {
                let kind = TaskKind::LabelPose {
                    pose: to_pose(&pose),
                    text,
                };
                let res = Self::check_robot(port, &robot)
                    .and_then(|_| Self::dispatch_all(port, vec![robot], kind, &author));
                match res {
                    Ok(task_ids) => ack(AckExtra {
                        task_ids,
                        ..Default::default()
                    }),
                    Err(e) => fail(e),
                }
            }
            Inbound::CancelTask { task_id } => match port.cancel_task(task_id) {
                Ok(()) => ack(AckExtra {
                    task_ids: vec![task_id],
                    ..Default::default()
                }),
                Err(e) => fail(e.into()),
            },
            Inbound::TeleopClaim { robot, mode } => {
                if let Err(e) = Self::check_robot(port, &robot) {
                    return fail(e);
                }
                let session_mode = self.sessions.get(&session).map(|s| s.mode).unwrap_or_default();
                let mode = mode.unwrap_or(session_mode);
                match self.claims.get_mut(&robot) {
                    Some(c) if c.session != session => {
                        return fail(GatewayError::TeleopDenied {
                            robot,
                            holder: c.session,
                        })
                    }
                    Some(c) => c.state.mode = mode,
                    None => {
                        self.claims.insert(
                            robot.clone(),
                            Claim {
                                session,
                                state: TeleopState::new(&self.config.teleop, mode),
                            },
                        );
                        port.teleop_claimed(&robot);
                    }
                }
                let snap = TeleopSnapshot::new(&robot, &self.claims[&robot].state);
                ack(AckExtra {
                    teleop: Some(snap),
                    ..Default::default()
                })
            }
            Inbound::TeleopRelease { robot } => {
                if let Err(e) = Self::check_robot(port, &robot) {
                    return fail(e);
                }
                match self.claims.get(&robot) {
                    Some(c) if c.session == session => {
                        self.claims.remove(&robot);
                        self.released.push(robot);
                        ack(AckExtra::default())
                    }
                    _ => fail(GatewayError::NotClaimed(robot)),
                }
            }
            Inbound::TeleopEvent { robot, event } => {
                if let Err(e) = Self::check_robot(port, &robot) {
                    return fail(e);
                }
                match self.claims.get_mut(&robot) {
                    Some(c) if c.session == session => {
                        c.state.apply(event);
                        let snap = TeleopSnapshot::new(&robot, &c.state);
                        ack(AckExtra {
                            teleop: Some(snap),
                            ..Default::default()
                        })
                    }
                    _ => fail(GatewayError::NotClaimed(robot)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{TaskBoard, TaskState};
    use std::collections::BTreeSet;

    #[derive(Default)]
    struct MockFleet {
        board: TaskBoard,
        claimed: Vec<String>,
    }

    impl FleetPort for MockFleet {
        fn robots(&self) -> Vec<RobotInfo> {
            ["r1", "r2"]
                .iter()
                .map(|id| RobotInfo {
                    id: id.to_string(),
                    spawn: [0.0; 3],
                })
                .collect()
        }

        fn dispatch(&mut self, robot: &str, kind: TaskKind, _author: &str) -> Result<u64, FleetError> {
            let robots: BTreeSet<String> = self.robots().into_iter().map(|r| r.id).collect();
            self.board.dispatch(&robots, robot, kind, 0).map(|(id, _)| id)
        }

        fn cancel_task(&mut self, task_id: u64) -> Result<(), FleetError> {
            self.board.cancel(task_id, 0).map(|_| ())
        }

        fn teleop_claimed(&mut self, robot: &str) {
            self.claimed.push(robot.to_string());
        }
    }

    fn setup() -> (Gateway, MockFleet, u64, u64) {
        let fleet = MockFleet {
            board: TaskBoard::new(),
            ..Default::default()
        };
        let mut g = Gateway::new(GatewayConfig::default());
        let a = g.open_session(&fleet.robots(), 0);
        let b = g.open_session(&fleet.robots(), 0);
        (g, fleet, a, b)
    }

    fn code(reply: &Outbound) -> Option<ErrorCode> {
        match reply {
            Outbound::Error { code, .. } => Some(*code),
            _ => None,
        }
    }

    #[test]
    fn set_goal_creates_task() {
        let (mut g, mut f, a, _) = setup();
        let r = g.handle_text(a, r#"{"type":"set_goal","robot":"r1","pose":[2.0,1.0,1.57]}"#, &mut f, 0);
        match r {
            Outbound::Ack { task_ids, of, .. } => {
                assert_eq!(of, "set_goal");
                assert_eq!(task_ids.len(), 1);
                assert_eq!(f.board.get(task_ids[0]).unwrap().state, TaskState::Executing);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn group_dispatch_fans_out() {
        let (mut g, mut f, a, _) = setup();
        let r = g.handle_text(a, r#"{"type":"set_goal","robots":["r1","r2"],"pose":[1,1,0]}"#, &mut f, 0);
        let Outbound::Ack { task_ids, .. } = r else { panic!() };
        assert_eq!(task_ids.len(), 2);
        let owners: Vec<_> = task_ids.iter().map(|id| f.board.get(*id).unwrap().robot_id.clone()).collect();
        assert_eq!(owners, vec!["r1", "r2"]);
        // any unknown robot rejects the whole group
        let r = g.handle_text(a, r#"{"type":"set_goal","robots":["r1","zz"],"pose":[1,1,0]}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::UnknownRobot));
        assert_eq!(f.board.tasks.len(), 2);
    }

    #[test]
    fn unknown_robot_and_invalid_task() {
        let (mut g, mut f, a, _) = setup();
        let r = g.handle_text(a, r#"{"type":"set_goal","robot":"zz","pose":[1,1,0]}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::UnknownRobot));
        let r = g.handle_text(a, r#"{"type":"set_waypoints","robot":"r1","poses":[]}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::InvalidTask));
        let r = g.handle_text(a, r#"{"type":"cancel_task","task_id":77}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::UnknownTask));
        let r = g.handle_text(a, r#"{"type":"label_pose","robot":"r1","pose":[3,2,0],"text":""}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::InvalidLabel));
    }

    #[test]
    fn teleop_exclusive() {
        let (mut g, mut f, a, b) = setup();
        let r = g.handle_text(a, r#"{"type":"teleop_claim","robot":"r1"}"#, &mut f, 0);
        assert!(matches!(r, Outbound::Ack { .. }));
        assert_eq!(f.claimed, vec!["r1"]);
        let r = g.handle_text(b, r#"{"type":"teleop_claim","robot":"r1"}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::TeleopDenied));
        let r = g.handle_text(b, r#"{"type":"teleop_event","robot":"r1","event":"speed_up_linear"}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::NotClaimed));
        let r = g.handle_text(b, r#"{"type":"teleop_release","robot":"r1"}"#, &mut f, 0);
        assert_eq!(code(&r), Some(ErrorCode::NotClaimed));
        assert_eq!(g.claim_holder("r1"), Some(a));
    }

    #[test]
    fn release_and_disconnect_zero_the_robot() {
        let (mut g, mut f, a, _) = setup();
        g.handle_text(a, r#"{"type":"teleop_claim","robot":"r1"}"#, &mut f, 0);
        g.handle_text(a, r#"{"type":"teleop_event","robot":"r1","event":"engage_linear","engaged":true}"#, &mut f, 0);
        assert_eq!(g.teleop_commands(), vec![("r1".to_string(), Twist2D::new(0.2, 0.0))]);
        g.handle_text(a, r#"{"type":"teleop_release","robot":"r1"}"#, &mut f, 0);
        assert_eq!(g.teleop_commands(), vec![("r1".to_string(), Twist2D::ZERO)]);
        assert!(g.teleop_commands().is_empty());

        g.handle_text(a, r#"{"type":"teleop_claim","robot":"r2"}"#, &mut f, 0);
        g.close_session(a);
        assert_eq!(g.teleop_commands(), vec![("r2".to_string(), Twist2D::ZERO)]);
        assert_eq!(g.claim_holder("r2"), None);
    }

    #[test]
    fn every_message_gets_exactly_one_reply() {
        let (mut g, mut f, a, _) = setup();
        let inputs = [
            r#"{"type":"hello","client":"t"}"#,
            r#"{"type":"list_robots"}"#,
            r#"{"type":"toggle_stream","robot":"r1","stream":"scan","enabled":true}"#,
            "garbage",
            r#"{"type":"nope"}"#,
            r#"{"type":"teleop_event","robot":"r1","event":"reset"}"#,
        ];
        for text in inputs {
            g.drain(a);
            g.handle_text(a, text, &mut f, 0);
            let replies: Vec<_> = g.drain(a).into_iter().filter(|m| m.is_reply()).collect();
            assert_eq!(replies.len(), 1, "{text}");
        }
    }

    #[test]
    fn request_id_is_echoed() {
        let (mut g, mut f, a, _) = setup();
        let r = g.handle_text(a, r#"{"type":"list_robots","id":42}"#, &mut f, 0);
        let Outbound::RobotList { re, robots } = r else { panic!() };
        assert_eq!(re, Some(42));
        assert_eq!(robots.len(), 2);
    }

    fn scan_msg(tick: u64) -> Outbound {
        Outbound::Path {
            robot: "r1".into(),
            poses: vec![[tick as f32, 0.0, 0.0]],
            source: None,
        }
    }

    #[test]
    fn streams_route_and_stop() {
        let (mut g, mut f, a, b) = setup();
        g.handle_text(a, r#"{"type":"toggle_stream","robot":"r1","stream":"scan","enabled":true}"#, &mut f, 0);
        g.drain(a);
        g.drain(b);
        g.offer("r1", StreamKind::Scan, 1, &scan_msg(1));
        g.offer("r2", StreamKind::Scan, 1, &scan_msg(1));
        assert_eq!(g.drain(a).len(), 1);
        assert!(g.drain(b).is_empty());
        g.handle_text(a, r#"{"type":"toggle_stream","robot":"r1","stream":"scan","enabled":false}"#, &mut f, 2);
        g.offer("r1", StreamKind::Scan, 3, &scan_msg(3));
        let after: Vec<_> = g.drain(a).into_iter().filter(|m| !m.is_reply()).collect();
        assert!(after.is_empty());
    }

    #[test]
    fn stalled_consumer_gets_latest_only() {
        let (mut g, mut f, a, _) = setup();
        g.handle_text(a, r#"{"type":"toggle_stream","robot":"r1","stream":"scan","enabled":true}"#, &mut f, 0);
        g.drain(a);
        // 2 s at 20 Hz without draining
        for tick in 1..=40 {
            g.offer("r1", StreamKind::Scan, tick, &scan_msg(tick));
        }
        let got = g.drain(a);
        assert_eq!(got, vec![scan_msg(39)]);
    }

    #[test]
    fn stream_rates() {
        let cfg = GatewayConfig::default();
        assert_eq!(cfg.min_interval(StreamKind::Scan), 2);
        assert_eq!(cfg.min_interval(StreamKind::Camera), 4);
        assert_eq!(cfg.min_interval(StreamKind::Status), 4);
        assert_eq!(cfg.min_interval(StreamKind::Path), 0);
    }
}

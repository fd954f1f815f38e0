//! The running ground station: one simulated world plus the per-robot mapping
//! and navigation pipelines, the merge job, brokers, tasks, mission state and
//! the operator gateway, advanced together one tick at a time.

use std::collections::{BTreeMap, BTreeSet};

use crate::fleet::{
    Broker, Mesh, MissionState, ReplicationPolicy, RobotStatus, TaskBoard, TaskKind, TaskState, TaskUpdate,
};
use crate::error::FleetError;
use crate::gateway::protocol::pose_array;
use crate::gateway::{FleetPort, Gateway, GatewayConfig, Outbound, RobotInfo, SlotKey, StreamKind};
use crate::geom::{Pose2D, Transform2D, Twist2D};
use crate::mapping::{OccupancyGrid, TernaryGrid};
use crate::merge::{merge, MapMerger};
use crate::nav::{CostMap, MotionGoal, NavConfig, NavEvent, Navigator, TrackStatus};
use crate::scenario::Scenario;
use crate::sim::{LaserScan, SimConfig, TagMarker, WorldModel};

pub const TAG_SIZE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationConfig {
    pub sim: SimConfig,
    pub nav: NavConfig,
    pub gateway: GatewayConfig,
    pub mapping_resolution: f64,
    /// Scan integration period, ticks.
    pub mapping_every: u64,
    /// Merged map recomposition period, ticks.
    pub compose_every: u64,
    /// Phase-correlation refinement period, ticks.
    pub refine_every: u64,
    pub detect_every: u64,
    pub status_every: u64,
    pub camera_every: u64,
    pub min_confidence: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            nav: NavConfig::default(),
            gateway: GatewayConfig::default(),
            mapping_resolution: 0.05,
            mapping_every: 4,
            compose_every: 20,
            refine_every: 100,
            detect_every: 4,
            status_every: 4,
            camera_every: 4,
            min_confidence: 0.2,
        }
    }
}

impl StationConfig {
    /// Defaults with the scenario's parameter overrides applied.
    pub fn from_scenario(s: &Scenario) -> Self {
        let mut c = Self::default();
        for (k, &v) in &s.params {
            match k.as_str() {
                "sim.dt" => {
                    c.sim.dt = v;
                    c.nav.dt = v;
                    c.gateway.dt = v;
                }
                "sim.robot_radius" => {
                    c.sim.robot_radius = v;
                    c.nav.robot_radius = v;
                }
                "sim.max_linear" => c.sim.max_linear = v,
                "sim.max_angular" => c.sim.max_angular = v,
                "sim.odom_noise" => c.sim.odom_noise.enabled = v != 0.0,
                "lidar.range_max" => c.sim.lidar.range_max = v,
                "camera.range" => c.sim.camera.range = v,
                "nav.max_linear" => c.nav.max_linear = v,
                "nav.max_angular" => c.nav.max_angular = v,
                "nav.inflation_margin" => c.nav.inflation_margin = v,
                "nav.unknown_cost" => c.nav.unknown_cost = v,
                "nav.lookahead" => c.nav.lookahead = v,
                "nav.slow_down_range" => c.nav.slow_down_range = v,
                "nav.blocked_range" => c.nav.blocked_range = v,
                "nav.goal_tolerance_xy" => c.nav.goal_tolerance_xy = v,
                "nav.goal_tolerance_theta" => c.nav.goal_tolerance_theta = v,
                "merge.min_confidence" => c.min_confidence = v,
                "mapping.resolution" => c.mapping_resolution = v,
                _ => {}
            }
        }
        c
    }
}

/// Task, mission and navigator bookkeeping; the gateway's view of the fleet.
#[derive(Debug)]
pub struct Coordinator {
    robots: Vec<RobotInfo>,
    robot_set: BTreeSet<String>,
    pub board: TaskBoard,
    pub mission: MissionState,
    pub navigators: BTreeMap<String, Navigator>,
    pub mesh: Mesh,
    tick: u64,
    outbox: Vec<Outbound>,
    mission_dirty: bool,
}

/// Broker index of the station node in the mesh; robot `i` is at `i + 1`.
pub const STATION_BROKER: usize = 0;

impl Coordinator {
    fn broker_of(&self, robot: &str) -> usize {
        self.robots.iter().position(|r| r.id == robot).map(|i| i + 1).unwrap_or(STATION_BROKER)
    }

    fn publish(&mut self, broker: usize, topic: &str, payload: Vec<u8>) {
        let tick = self.tick;
        self.mesh.brokers[broker]
            .publish(topic, tick, payload)
            .expect("topics are non-empty");
    }

    fn emit_updates(&mut self, updates: &[TaskUpdate]) {
        for u in updates {
            self.outbox.push(Outbound::task_update(u));
        }
    }

    fn finish_active(&mut self, robot: &str, state: TaskState) {
        if let Some(id) = self.board.active(robot).map(|t| t.id) {
            if let Ok(u) = self.board.transition(id, state, self.tick) {
                self.emit_updates(&[u]);
            }
        }
    }

    pub fn record_detection(&mut self, tag: u32, robot: &str) -> Result<bool, FleetError> {
        let out = self.mission.record_detection(tag, robot, self.tick)?;
        if out.new {
            self.mission_dirty = true;
            let payload = serde_json::to_vec(&Outbound::mission(&self.mission)).expect("serializes");
            self.publish(STATION_BROKER, "mission/state", payload);
        }
        Ok(out.new)
    }
}

impl FleetPort for Coordinator {
    fn robots(&self) -> Vec<RobotInfo> {
        self.robots.clone()
    }

    fn dispatch(&mut self, robot: &str, kind: TaskKind, author: &str) -> Result<u64, FleetError> {
        let (id, updates) = self.board.dispatch(&self.robot_set, robot, kind.clone(), self.tick)?;
        let goal = match kind {
            TaskKind::GoalPose { pose } => Some(MotionGoal::Goal(pose)),
            TaskKind::WaypointSequence { poses } => Some(MotionGoal::Waypoints(poses)),
            TaskKind::DrawnPlan { poses } => Some(MotionGoal::Drawn(poses)),
            TaskKind::LabelPose { pose, text } => {
                let label = self.mission.add_label(pose, &text, author, self.tick)?.clone();
                self.outbox.push(Outbound::label(&label));
                let payload = serde_json::to_vec(&Outbound::label(&label)).expect("serializes");
                self.publish(STATION_BROKER, "mission/labels", payload);
                None
            }
        };
        self.emit_updates(&updates);
        if let Some(goal) = goal {
            let nav = self.navigators.get_mut(robot).expect("validated robot");
            if let Err(e) = nav.start(goal) {
                self.finish_active(robot, TaskState::Failed(e.to_string()));
            }
        }
        Ok(id)
    }

    fn cancel_task(&mut self, task_id: u64) -> Result<(), FleetError> {
        let robot = self.board.get(task_id).map(|t| t.robot_id.clone());
        let was_active = robot
            .as_deref()
            .and_then(|r| self.board.active(r))
            .is_some_and(|t| t.id == task_id);
        let u = self.board.cancel(task_id, self.tick)?;
        self.emit_updates(&[u]);
        if let (true, Some(r)) = (was_active, robot) {
            if let Some(nav) = self.navigators.get_mut(&r) {
                nav.cancel();
            }
        }
        Ok(())
    }

    fn teleop_claimed(&mut self, robot: &str) {
        if self.board.active(robot).is_some() {
            self.finish_active(robot, TaskState::Cancelled);
        }
        if let Some(nav) = self.navigators.get_mut(robot) {
            nav.cancel();
        }
    }
}

#[derive(Debug)]
struct RobotPipeline {
    id: String,
    mapper: OccupancyGrid,
    scan: Option<LaserScan>,
    blocked: bool,
    plan_version: u64,
}

#[derive(Debug)]
pub struct Station {
    pub config: StationConfig,
    pub world: WorldModel,
    pub coordinator: Coordinator,
    pub gateway: Gateway,
    pipelines: Vec<RobotPipeline>,
    merger: MapMerger,
    /// Places the first robot's odometry frame in the scenario frame.
    anchor: Transform2D,
    merged: Option<TernaryGrid>,
    costmap: Option<CostMap>,
}

impl Station {
    pub fn new(scenario: &Scenario, seed: u64) -> Station {
        let config = StationConfig::from_scenario(scenario);
        Self::with_config(scenario, seed, config)
    }

    pub fn with_config(scenario: &Scenario, seed: u64, config: StationConfig) -> Station {
        let tags = scenario
            .tags
            .iter()
            .map(|t| TagMarker {
                id: t.id,
                pose: t.pose,
                size: TAG_SIZE,
            })
            .collect();
        let mut world = WorldModel::new(config.sim, scenario.truth(), tags, seed);
        let mut spawns = BTreeMap::new();
        let mut ids = Vec::new();
        let mut pipelines = Vec::new();
        let mut navigators = BTreeMap::new();
        let mut brokers = vec![Broker::new("station", ReplicationPolicy::default())];
        for r in &scenario.robots {
            world.add_robot(r.id.clone(), r.spawn);
            spawns.insert(r.id.clone(), r.spawn.as_transform());
            ids.push(r.id.clone());
            let mut mapper = OccupancyGrid::centered(4.0, config.mapping_resolution);
            mapper.auto_grow = true;
            pipelines.push(RobotPipeline {
                id: r.id.clone(),
                mapper,
                scan: None,
                blocked: false,
                plan_version: 0,
            });
            navigators.insert(r.id.clone(), Navigator::new(config.nav));
            brokers.push(Broker::new(r.id.clone(), ReplicationPolicy::default()));
        }
        let anchor = scenario.robots[0].spawn.as_transform();
        let mut merger = MapMerger::new(ids.clone(), spawns).expect("every robot has a spawn");
        merger.min_confidence = config.min_confidence;
        let robots = scenario
            .robots
            .iter()
            .map(|r| RobotInfo {
                id: r.id.clone(),
                spawn: pose_array(&r.spawn),
            })
            .collect();
        let coordinator = Coordinator {
            robots,
            robot_set: ids.into_iter().collect(),
            board: TaskBoard::new(),
            mission: MissionState::new(scenario.tags.iter().map(|t| t.id)),
            navigators,
            mesh: Mesh::star(brokers),
            tick: 0,
            outbox: Vec::new(),
            mission_dirty: false,
        };
        Station {
            config,
            world,
            coordinator,
            gateway: Gateway::new(config.gateway),
            pipelines,
            merger,
            anchor,
            merged: None,
            costmap: None,
        }
    }

    pub fn tick(&self) -> u64 {
        self.world.tick
    }

    pub fn robot_ids(&self) -> Vec<String> {
        self.pipelines.iter().map(|p| p.id.clone()).collect()
    }

    pub fn open_session(&mut self) -> u64 {
        let robots = self.coordinator.robots();
        let id = self.gateway.open_session(&robots, self.tick());
        let mission = Outbound::mission(&self.coordinator.mission);
        self.gateway.offer_global(SlotKey::Mission, &mission);
        if let Some(g) = &self.merged {
            let msg = Outbound::merged_map(g, self.tick());
            self.gateway.offer_global(SlotKey::MergedMap, &msg);
        }
        id
    }

    pub fn close_session(&mut self, id: u64) {
        self.gateway.close_session(id);
    }

    /// Feed one operator text frame; returns the reply.
    pub fn handle_text(&mut self, session: u64, text: &str) -> Outbound {
        let tick = self.tick();
        self.coordinator.tick = tick;
        let reply = self.gateway.handle_text(session, text, &mut self.coordinator, tick);
        self.flush_outbox();
        reply
    }

    fn flush_outbox(&mut self) {
        for msg in std::mem::take(&mut self.coordinator.outbox) {
            self.gateway.broadcast(&msg);
        }
        if std::mem::take(&mut self.coordinator.mission_dirty) {
            let msg = Outbound::mission(&self.coordinator.mission);
            self.gateway.offer_global(SlotKey::Mission, &msg);
        }
    }

    pub fn merged_map(&self) -> Option<&TernaryGrid> {
        self.merged.as_ref()
    }

    pub fn merger(&self) -> &MapMerger {
        &self.merger
    }

    pub fn robot_map(&self, robot: &str) -> Option<&OccupancyGrid> {
        self.pipelines.iter().find(|p| p.id == robot).map(|p| &p.mapper)
    }

    /// Estimated pose in the merged (scenario) frame.
    pub fn merged_pose(&self, robot: &str) -> Option<Pose2D> {
        let body = self.world.robot(robot).ok()?;
        let est = self.merger.estimate(robot)?;
        Some(self.anchor.compose(&est.final_transform).apply(&body.pose_odom))
    }

    fn recompose(&mut self, refine: bool) {
        let grids: Vec<&OccupancyGrid> = self.pipelines.iter().map(|p| &p.mapper).collect();
        if refine {
            self.merger.refine(&grids);
        }
        let mut estimates = self.merger.estimates().to_vec();
        for e in &mut estimates {
            e.final_transform = self.anchor.compose(&e.final_transform);
        }
        let merged = merge(&grids, &estimates).probability_grid();
        self.costmap = Some(CostMap::new(&merged));
        let tick = self.tick();
        self.coordinator.tick = tick;
        self.coordinator
            .publish(STATION_BROKER, "merged_map", merged.encode());
        let msg = Outbound::merged_map(&merged, tick);
        self.gateway.offer_global(SlotKey::MergedMap, &msg);
        self.merged = Some(merged);
    }

    /// Advance everything by one tick.
    pub fn step(&mut self) {
        let tick = self.tick();
        let cfg = self.config;
        self.coordinator.tick = tick;

        for i in 0..self.pipelines.len() {
            let id = self.pipelines[i].id.clone();
            let scan = self.world.scan(&id).expect("robot exists");
            if tick.is_multiple_of(cfg.mapping_every) {
                let odom = self.world.robot(&id).expect("robot exists").pose_odom;
                // auto-grow is on, so integration cannot fail
                let _ = self.pipelines[i].mapper.integrate_scan(&odom, &scan);
            }
            self.pipelines[i].scan = Some(scan);
        }
        if tick.is_multiple_of(cfg.compose_every) || self.costmap.is_none() {
            self.recompose(tick.is_multiple_of(cfg.refine_every));
        }

        let teleop = self.gateway.teleop_commands();
        for (robot, twist) in &teleop {
            let _ = self.world.command(robot, *twist);
        }

        for i in 0..self.pipelines.len() {
            let id = self.pipelines[i].id.clone();
            if self.gateway.claim_holder(&id).is_some() {
                self.pipelines[i].blocked = false;
                continue;
            }
            let pose = self.merged_pose(&id).expect("robot exists");
            let scan = self.pipelines[i].scan.as_ref().expect("scanned this tick");
            let map = self.costmap.as_ref().expect("composed");
            let nav = self.coordinator.navigators.get_mut(&id).expect("robot exists");
            let out = nav.step(map, &pose, scan);
            let version = nav.plan_version();
            let _ = self.world.command(&id, out.twist);
            self.pipelines[i].blocked = out.status == Some(TrackStatus::Blocked);
            for ev in out.events {
                match ev {
                    NavEvent::Completed => self.coordinator.finish_active(&id, TaskState::Completed),
                    NavEvent::Failed(e) => self.coordinator.finish_active(&id, TaskState::Failed(e.to_string())),
                    NavEvent::Progress { .. } | NavEvent::PlanChanged => {}
                }
            }
            if version != self.pipelines[i].plan_version {
                self.pipelines[i].plan_version = version;
                let plan = self.coordinator.navigators[&id].plan();
                let msg = Outbound::path(&id, plan);
                self.gateway.offer(&id, StreamKind::Path, tick, &msg);
            }
        }

        if tick.is_multiple_of(cfg.detect_every) {
            for id in self.robot_ids() {
                for tag in self.world.detect(&id).expect("robot exists") {
                    let _ = self.coordinator.record_detection(tag, &id);
                }
            }
        }

        for p in &self.pipelines {
            if self.gateway.wants(&p.id, StreamKind::Scan) {
                if let Some(scan) = &p.scan {
                    let msg = Outbound::scan(&p.id, scan);
                    self.gateway.offer(&p.id, StreamKind::Scan, tick, &msg);
                }
            }
            if tick.is_multiple_of(cfg.camera_every) && self.gateway.wants(&p.id, StreamKind::Camera) {
                let frame = self.world.render_camera(&p.id).expect("robot exists");
                let msg = Outbound::camera(&p.id, &frame);
                self.gateway.offer(&p.id, StreamKind::Camera, tick, &msg);
            }
        }

        if tick.is_multiple_of(cfg.status_every) {
            for i in 0..self.pipelines.len() {
                let status = self.status(&self.pipelines[i].id);
                let broker = self.coordinator.broker_of(&status.id);
                let payload = serde_json::to_vec(&status).expect("serializes");
                self.coordinator.publish(broker, &format!("status/{}", status.id), payload);
                let msg = Outbound::status(&status, tick);
                self.gateway.offer(&status.id, StreamKind::Status, tick, &msg);
            }
        }

        self.flush_outbox();
        self.coordinator.mesh.pump();
        self.world.step();
    }

    pub fn status(&self, robot: &str) -> RobotStatus {
        let body = self.world.robot(robot).expect("robot exists");
        let blocked = self.pipelines.iter().any(|p| p.id == robot && p.blocked);
        RobotStatus::derive(
            robot,
            body.battery,
            body.commanded,
            self.merged_pose(robot).unwrap_or(body.pose_true),
            &self.coordinator.board,
            blocked,
        )
    }

    /// True when no motion task is active on any robot.
    pub fn is_idle(&self) -> bool {
        self.coordinator.navigators.values().all(|n| !n.is_active())
    }

    /// End of service: cancel motion, drop every teleop lease and command a
    /// zero twist to all robots. Returns the robots that were under teleop.
    pub fn shutdown(&mut self) -> Vec<String> {
        let released = self.gateway.release_all();
        for id in self.robot_ids() {
            if let Some(nav) = self.coordinator.navigators.get_mut(&id) {
                nav.cancel();
            }
            let _ = self.world.command(&id, Twist2D::ZERO);
        }
        released
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOM: &str = "format_version 1
name room
resolution 0.2
seed 5
robot r1 1 1 0
robot r2 1 2 0
tag 1 4.6 1.5 3.14
map
##########################
#........................#
#........................#
#........................#
#........................#
#........................#
#........................#
#........................#
#........................#
#........................#
#........................#
##########################
";

    fn station() -> Station {
        Station::new(&Scenario::parse(ROOM).unwrap(), 5)
    }

    #[test]
    fn goal_task_completes_and_status_reports_it() {
        let mut s = station();
        let sess = s.open_session();
        let reply = s.handle_text(sess, r#"{"type":"set_goal","robot":"r1","pose":[3.0,1.0,0.0]}"#);
        assert!(matches!(reply, Outbound::Ack { .. }), "{reply:?}");
        for _ in 0..400 {
            s.step();
            if s.is_idle() {
                break;
            }
        }
        assert!(s.is_idle());
        let t = s.coordinator.board.get(1).unwrap();
        assert_eq!(t.state, TaskState::Completed);
        let p = s.merged_pose("r1").unwrap();
        assert!((p.x - 3.0).abs() < 0.1 && (p.y - 1.0).abs() < 0.1, "{p:?}");
        assert_eq!(s.status("r1").task_state, crate::fleet::StatusState::Completed);
        let msgs = s.gateway.drain(sess);
        assert!(msgs.iter().any(|m| matches!(m, Outbound::TaskUpdate { state, .. } if state == "completed")));
        assert!(msgs.iter().any(|m| matches!(m, Outbound::MergedMap { .. })));
    }

    #[test]
    fn tag_in_view_is_counted_once() {
        let mut s = station();
        let sess = s.open_session();
        s.handle_text(sess, r#"{"type":"set_goal","robot":"r1","pose":[3.5,1.5,0.0]}"#);
        for _ in 0..400 {
            s.step();
        }
        assert_eq!(s.coordinator.mission.count(), 1);
        assert_eq!(s.coordinator.mission.finder(1), Some("r1"));
        let msgs = s.gateway.drain(sess);
        let found: Vec<usize> = msgs
            .iter()
            .filter_map(|m| match m {
                Outbound::MissionState { found, .. } => Some(*found),
                _ => None,
            })
            .collect();
        assert_eq!(found, vec![1]);
    }

    #[test]
    fn teleop_drives_and_release_stops() {
        let mut s = station();
        let sess = s.open_session();
        s.handle_text(sess, r#"{"type":"teleop_claim","robot":"r2"}"#);
        s.handle_text(sess, r#"{"type":"teleop_event","robot":"r2","event":"engage_linear","engaged":true}"#);
        for _ in 0..20 {
            s.step();
        }
        let x = s.world.robot("r2").unwrap().pose_true.x;
        assert!(x > 1.1, "{x}");
        s.handle_text(sess, r#"{"type":"teleop_release","robot":"r2"}"#);
        s.step();
        assert!(s.world.robot("r2").unwrap().commanded.is_zero());
    }

    #[test]
    fn claiming_cancels_motion() {
        let mut s = station();
        let sess = s.open_session();
        s.handle_text(sess, r#"{"type":"set_goal","robot":"r1","pose":[4.0,1.0,0.0]}"#);
        s.step();
        s.handle_text(sess, r#"{"type":"teleop_claim","robot":"r1"}"#);
        assert_eq!(s.coordinator.board.get(1).unwrap().state, TaskState::Cancelled);
        assert!(s.is_idle());
    }

    #[test]
    fn status_replicates_to_station_broker() {
        let mut s = station();
        let sub = s.coordinator.mesh.brokers[STATION_BROKER].subscribe("status/*");
        for _ in 0..8 {
            s.step();
        }
        let got = s.coordinator.mesh.brokers[STATION_BROKER].drain(sub);
        // ticks 0 and 4, two robots
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|e| e.origin != "station"));
    }

    #[test]
    fn shutdown_zeroes_every_robot() {
        let mut s = station();
        let sess = s.open_session();
        s.handle_text(sess, r#"{"type":"set_goal","robot":"r1","pose":[4.0,1.0,0.0]}"#);
        s.handle_text(sess, r#"{"type":"teleop_claim","robot":"r2"}"#);
        s.handle_text(sess, r#"{"type":"teleop_event","robot":"r2","event":"engage_linear","engaged":true}"#);
        for _ in 0..5 {
            s.step();
        }
        assert_eq!(s.shutdown(), vec!["r2".to_string()]);
        assert!(s.world.robots.iter().all(|r| r.commanded.is_zero()));
    }
}

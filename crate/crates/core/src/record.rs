//! Headless scripted runs and the line-delimited RunRecord format.
//!
//! A script is JSON lines of `{"tick": N, "msg": {...gateway message...}}`,
//! applied just before tick `N` is simulated. A record is JSON lines tagged by
//! `record`: one `header`, then `command`, `task`, `tag`, `robot` lines and a
//! closing `summary`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::RecordError;
use crate::fleet::TaskKind;
use crate::gateway::Outbound;
use crate::geom::Pose2D;
use crate::scenario::Scenario;
use crate::station::Station;

pub const RECORD_FORMAT_VERSION: u32 = 1;
/// Tick budget when the scenario sets no `run.timeout`.
pub const DEFAULT_TIMEOUT_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tick: u64,
    pub msg: Value,
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, RecordError> {
    let mut out: Vec<ScriptEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ScriptEntry = serde_json::from_str(line).map_err(|e| RecordError::Script {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.last().is_some_and(|p| p.tick > e.tick) {
            return Err(RecordError::Script {
                line: i + 1,
                message: format!("tick {} is earlier than the previous entry", e.tick),
            });
        }
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub tick: u64,
    pub msg: Value,
    /// `ack`, `robot_list` or the error code.
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub task_id: u64,
    pub robot: String,
    pub kind: String,
    pub issued_tick: u64,
    pub terminal_tick: Option<u64>,
    pub state: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagFind {
    pub tag: u32,
    pub robot: String,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotOutcome {
    pub id: String,
    pub spawn: Pose2D,
    pub final_pose: Pose2D,
    /// Final pose as the station estimated it, merged frame.
    pub final_estimate: Pose2D,
    pub distance: f64,
    pub contacts: u64,
    /// Smallest true center-to-obstacle distance over the run.
    pub min_clearance: f64,
    /// Ticks where clearance fell below radius minus one map cell.
    pub violations: u64,
}

impl RobotOutcome {
    pub fn spawn_error(&self) -> (f64, f64) {
        (
            self.final_pose.distance(&self.spawn),
            crate::geom::angle_diff(self.final_pose.theta, self.spawn.theta).abs(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario_name: String,
    /// Canonical scenario text.
    pub scenario: String,
    pub seed: u64,
    pub commands: Vec<CommandRecord>,
    pub tasks: Vec<TaskTiming>,
    pub completion_tick: Option<u64>,
    pub finds: Vec<TagFind>,
    pub robots: Vec<RobotOutcome>,
    pub task_counts: BTreeMap<String, usize>,
    pub ticks: u64,
    pub tags_total: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header {
        format_version: u32,
        scenario_name: String,
        seed: u64,
        scenario: String,
    },
    Command(CommandRecord),
    Task(TaskTiming),
    Tag(TagFind),
    Robot(RobotOutcome),
    Summary {
        outcome: Outcome,
        ticks: u64,
        completion_tick: Option<u64>,
        tags_found: usize,
        tags_total: usize,
        task_counts: BTreeMap<String, usize>,
    },
}

impl RunRecord {
    pub fn tags_found(&self) -> usize {
        self.finds.len()
    }

    pub fn robot(&self, id: &str) -> Option<&RobotOutcome> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn script(&self) -> Vec<ScriptEntry> {
        self.commands
            .iter()
            .map(|c| ScriptEntry {
                tick: c.tick,
                msg: c.msg.clone(),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Header {
            format_version: RECORD_FORMAT_VERSION,
            scenario_name: self.scenario_name.clone(),
            seed: self.seed,
            scenario: self.scenario.clone(),
        }];
        lines.extend(self.commands.iter().cloned().map(Line::Command));
        lines.extend(self.tasks.iter().cloned().map(Line::Task));
        lines.extend(self.finds.iter().cloned().map(Line::Tag));
        lines.extend(self.robots.iter().cloned().map(Line::Robot));
        lines.push(Line::Summary {
            outcome: self.outcome,
            ticks: self.ticks,
            completion_tick: self.completion_tick,
            tags_found: self.tags_found(),
            tags_total: self.tags_total,
            task_counts: self.task_counts.clone(),
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("record lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<RunRecord, RecordError> {
        let mut header = None;
        let mut summary = None;
        let mut rec_commands = Vec::new();
        let mut tasks = Vec::new();
        let mut finds = Vec::new();
        let mut robots = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| RecordError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            if header.is_none() && !matches!(line, Line::Header { .. }) {
                return Err(RecordError::Format {
                    line: i + 1,
                    message: "first line must be the header".into(),
                });
            }
            match line {
                Line::Header {
                    format_version,
                    scenario_name,
                    seed,
                    scenario,
                } => {
                    if format_version != RECORD_FORMAT_VERSION {
                        return Err(RecordError::Format {
                            line: i + 1,
                            message: format!("unsupported format_version {format_version}"),
                        });
                    }
                    header = Some((scenario_name, seed, scenario));
                }
                Line::Command(c) => rec_commands.push(c),
                Line::Task(t) => tasks.push(t),
                Line::Tag(t) => finds.push(t),
                Line::Robot(r) => robots.push(r),
                Line::Summary {
                    outcome,
                    ticks,
                    completion_tick,
                    tags_total,
                    task_counts,
                    ..
                } => summary = Some((outcome, ticks, completion_tick, tags_total, task_counts)),
            }
        }
        let (scenario_name, seed, scenario) = header.ok_or(RecordError::Format {
            line: 1,
            message: "empty record".into(),
        })?;
        let (outcome, ticks, completion_tick, tags_total, task_counts) = summary.ok_or(RecordError::Format {
            line: text.lines().count(),
            message: "missing summary line".into(),
        })?;
        Ok(RunRecord {
            scenario_name,
            scenario,
            seed,
            commands: rec_commands,
            tasks,
            completion_tick,
            finds,
            robots,
            task_counts,
            ticks,
            tags_total,
            outcome,
        })
    }
}

fn kind_name(k: &TaskKind) -> &'static str {
    match k {
        TaskKind::GoalPose { .. } => "goal_pose",
        TaskKind::WaypointSequence { .. } => "waypoint_sequence",
        TaskKind::LabelPose { .. } => "label_pose",
        TaskKind::DrawnPlan { .. } => "drawn_plan",
    }
}

fn reply_name(o: &Outbound) -> String {
    match o {
        Outbound::Ack { .. } => "ack".into(),
        Outbound::RobotList { .. } => "robot_list".into(),
        Outbound::Error { code, .. } => serde_json::to_value(code)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| "error".into()),
        _ => "other".into(),
    }
}

/// Tick budget for a scenario.
pub fn tick_budget(scenario: &Scenario, dt: f64) -> u64 {
    let secs = scenario.param("run.timeout").unwrap_or(DEFAULT_TIMEOUT_S);
    (secs / dt).round() as u64
}

/// Drive a station from a script until the mission is complete, every script
/// entry has been applied and no robot has a motion task, or until the tick
/// budget runs out.
pub fn run_headless(scenario: &Scenario, seed: u64, script: &[ScriptEntry]) -> Result<RunRecord, RecordError> {
    let mut station = Station::new(scenario, seed);
    let budget = tick_budget(scenario, station.config.sim.dt);
    let session = station.open_session();
    let ids = station.robot_ids();
    let radius = station.config.sim.robot_radius;
    let floor = radius - scenario.resolution;
    let mut min_clear: BTreeMap<String, f64> = ids.iter().map(|i| (i.clone(), f64::INFINITY)).collect();
    let mut violations: BTreeMap<String, u64> = ids.iter().map(|i| (i.clone(), 0)).collect();
    let mut commands = Vec::with_capacity(script.len());
    let mut next = 0;
    let mut outcome = Outcome::Timeout;

    loop {
        let tick = station.tick();
        while next < script.len() && script[next].tick <= tick {
            let e = &script[next];
            let reply = station.handle_text(session, &e.msg.to_string());
            commands.push(CommandRecord {
                tick: e.tick,
                msg: e.msg.clone(),
                reply: reply_name(&reply),
            });
            next += 1;
        }
        for r in &station.world.robots {
            let c = station.world.truth.clearance(r.pose_true.position(), 2.0);
            let m = min_clear.get_mut(&r.id).expect("known robot");
            *m = m.min(c);
            if c < floor {
                *violations.get_mut(&r.id).expect("known robot") += 1;
            }
        }
        if station.coordinator.mission.is_complete() && next == script.len() && station.is_idle() {
            outcome = Outcome::Completed;
            break;
        }
        if tick >= budget {
            break;
        }
        station.step();
        station.gateway.drain(session);
    }

    let m = &station.coordinator.mission;
    let record = RunRecord {
        scenario_name: scenario.name.clone(),
        scenario: scenario.save(),
        seed,
        commands,
        tasks: station
            .coordinator
            .board
            .tasks
            .values()
            .map(|t| TaskTiming {
                task_id: t.id,
                robot: t.robot_id.clone(),
                kind: kind_name(&t.kind).into(),
                issued_tick: t.issued_tick,
                terminal_tick: t.terminal_tick,
                state: t.state.name().into(),
                reason: match &t.state {
                    crate::fleet::TaskState::Failed(r) => Some(r.clone()),
                    _ => None,
                },
            })
            .collect(),
        completion_tick: m.completed_tick,
        finds: m
            .found
            .iter()
            .map(|(tag, f)| TagFind {
                tag: *tag,
                robot: f.robot.clone(),
                tick: f.tick,
            })
            .collect(),
        robots: station
            .world
            .robots
            .iter()
            .map(|r| RobotOutcome {
                id: r.id.clone(),
                spawn: r.spawn,
                final_pose: r.pose_true,
                final_estimate: station.merged_pose(&r.id).unwrap_or(r.pose_true),
                distance: r.distance_travelled,
                contacts: r.contacts,
                min_clearance: min_clear[&r.id],
                violations: violations[&r.id],
            })
            .collect(),
        task_counts: station
            .coordinator
            .board
            .counts()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        ticks: station.tick(),
        tags_total: m.total(),
        outcome,
    };
    match outcome {
        Outcome::Completed => Ok(record),
        Outcome::Timeout => Err(RecordError::Timeout {
            ticks: record.ticks,
            found: record.tags_found(),
            total: record.tags_total,
            record: Box::new(record),
        }),
    }
}

/// Re-run a record's scenario, seed and command log.
pub fn replay(record: &RunRecord) -> Result<RunRecord, RecordError> {
    let scenario = Scenario::parse(&record.scenario)?;
    run_headless(&scenario, record.seed, &record.script())
}

/// The record a run produced, whether it completed or timed out.
pub fn into_record(result: Result<RunRecord, RecordError>) -> Result<RunRecord, RecordError> {
    match result {
        Ok(r) => Ok(r),
        Err(RecordError::Timeout { record, .. }) => Ok(*record),
        Err(e) => Err(e),
    }
}

/// Largest coordinate difference between the final poses of two records;
/// infinite if the robot sets differ.
pub fn final_pose_difference(a: &RunRecord, b: &RunRecord) -> f64 {
    if a.robots.len() != b.robots.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for ra in &a.robots {
        let Some(rb) = b.robot(&ra.id) else {
            return f64::INFINITY;
        };
        let (p, q) = (ra.final_pose, rb.final_pose);
        worst = worst.max((p.x - q.x).abs()).max((p.y - q.y).abs()).max((p.theta - q.theta).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOM: &str = "format_version 1
name room
resolution 0.2
seed 5
robot r1 1 1 0
tag 1 3.5 1.5 3.14
param run.timeout 40
map
####################
#..................#
#..................#
#..................#
#..................#
#..................#
#..................#
#..................#
####################
";

    fn script() -> Vec<ScriptEntry> {
        parse_script(
            r#"{"tick":0,"msg":{"type":"set_goal","robot":"r1","pose":[2.5,1.2,0.3]}}
{"tick":5,"msg":{"type":"label_pose","robot":"r1","pose":[1,1,0],"text":"start"}}
{"tick":6,"msg":{"type":"set_goal","robot":"ghost","pose":[1,1,0]}}
{"tick":200,"msg":{"type":"set_goal","robot":"r1","pose":[1,1,0]}}
"#,
        )
        .unwrap()
    }

    #[test]
    fn scripted_run_completes_and_round_trips() {
        let s = Scenario::parse(ROOM).unwrap();
        let rec = run_headless(&s, 5, &script()).unwrap();
        assert_eq!(rec.outcome, Outcome::Completed);
        assert_eq!(rec.tags_found(), 1);
        assert_eq!(rec.commands.len(), 4);
        assert_eq!(rec.commands[2].reply, "unknown_robot");
        assert_eq!(rec.task_counts.get("completed"), Some(&3));
        let r1 = rec.robot("r1").unwrap();
        assert_eq!(r1.contacts, 0);
        assert!(r1.spawn_error().0 < 0.15, "{:?}", r1.spawn_error());
        let text = rec.to_jsonl();
        assert!(text.starts_with("{\"record\":\"header\",\"format_version\":1,"));
        let back = RunRecord::from_jsonl(&text).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn replay_reproduces_final_poses() {
        let s = Scenario::parse(ROOM).unwrap();
        let rec = run_headless(&s, 5, &script()).unwrap();
        let again = replay(&RunRecord::from_jsonl(&rec.to_jsonl()).unwrap()).unwrap();
        assert_eq!(final_pose_difference(&rec, &again), 0.0);
        assert_eq!(again, rec);
    }

    #[test]
    fn empty_script_times_out_with_nothing_found() {
        let s = Scenario::parse(ROOM).unwrap();
        match run_headless(&s, 5, &[]) {
            Err(RecordError::Timeout { found, total, ticks, .. }) => {
                assert_eq!((found, total), (0, 1));
                assert_eq!(ticks, 800);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn script_errors_carry_lines() {
        assert!(matches!(parse_script("{\"tick\":1}\n"), Err(RecordError::Script { line: 1, .. })));
        let text = "{\"tick\":3,\"msg\":{}}\n\n{\"tick\":2,\"msg\":{}}\n";
        assert!(matches!(parse_script(text), Err(RecordError::Script { line: 3, .. })));
        assert!(matches!(
            RunRecord::from_jsonl("{\"record\":\"summary\"}"),
            Err(RecordError::Format { line: 1, .. })
        ));
    }
}

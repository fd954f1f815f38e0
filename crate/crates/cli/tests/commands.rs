use std::fs;
use std::path::PathBuf;
use std::process::Command;

use fleetstation_cli::{load_map, merge_demo, replay_file, run, CliError};
use fleetstation_core::error::RecordError;
use fleetstation_core::mapping::TernaryGrid;
use fleetstation_core::record::{Outcome, RunRecord};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn bundled_mission_runs_and_replays() {
    let out = scratch("mission.jsonl");
    let rec = run(&repo("scenarios/corridor.scn"), &repo("scenarios/corridor_mission.jsonl"), &out, None).unwrap();
    assert_eq!(rec.outcome, Outcome::Completed);
    assert_eq!(rec.tags_found(), rec.tags_total);
    let written = RunRecord::from_jsonl(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, rec);
    let (again, diff) = replay_file(&out).unwrap();
    assert!(diff <= 1e-9);
    assert_eq!(again.completion_tick, rec.completion_tick);
}

#[test]
fn timeout_still_writes_the_record() {
    let script = scratch("empty.jsonl");
    fs::write(&script, "").unwrap();
    let scn = scratch("short.scn");
    let text = fs::read_to_string(repo("scenarios/corridor.scn")).unwrap();
    fs::write(&scn, text.replace("param run.timeout 240", "param run.timeout 2")).unwrap();
    let out = scratch("timeout.jsonl");
    match run(&scn, &script, &out, Some(3)) {
        Err(CliError::Record(RecordError::Timeout { ticks, .. })) => assert_eq!(ticks, 40),
        other => panic!("expected timeout, got {other:?}"),
    }
    let rec = RunRecord::from_jsonl(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rec.outcome, Outcome::Timeout);
    assert_eq!(rec.seed, 3);
}

#[test]
fn tampered_record_fails_replay() {
    let out = scratch("tamper.jsonl");
    let script = scratch("short_script.jsonl");
    fs::write(
        &script,
        r#"{"tick":0,"msg":{"type":"set_goal","robot":"r1","pose":[3,1,0]}}"#.to_string() + "\n",
    )
    .unwrap();
    run(&repo("scenarios/sealed.scn"), &script, &out, None).unwrap();
    let mut rec = RunRecord::from_jsonl(&fs::read_to_string(&out).unwrap()).unwrap();
    rec.robots[0].final_pose.x += 0.01;
    fs::write(&out, rec.to_jsonl()).unwrap();
    assert!(matches!(replay_file(&out), Err(CliError::ReplayMismatch(d)) if d > 0.009));
}

const ROOM: &str = "\
????????????????????????????????
?##############################?
?#............................#?
?#............................#?
?#......####..................#?
?#......#..#..........#.......#?
?#......#..#..........#.......#?
?#......####..........#.......#?
?#....................#.......#?
?#............................#?
?#.............######.........#?
?#............................#?
?##############################?
????????????????????????????????
";

fn shifted(text: &str, dx: usize) -> String {
    text.lines()
        .map(|l| {
            let mut s = "?".repeat(dx);
            s.push_str(&l[..l.len() - dx]);
            s + "\n"
        })
        .collect()
}

#[test]
fn merge_demo_recovers_a_shift() {
    let a = TernaryGrid::from_ascii(ROOM, 0.05).unwrap();
    let b = TernaryGrid::from_ascii(&shifted(ROOM, 3), 0.05).unwrap();
    let demo = merge_demo(&a, &b).unwrap();
    assert_eq!(demo.offset, (3, 0));
    assert!(demo.confidence > 0.2);
    assert!(demo.merged.to_ascii().contains("####"));
}

#[test]
fn rle_and_ascii_maps_load_alike() {
    let ascii = scratch("room.txt");
    fs::write(&ascii, ROOM).unwrap();
    let a = load_map(&ascii, 0.05).unwrap();
    let rle = scratch("room.rle");
    fs::write(&rle, a.encode()).unwrap();
    assert_eq!(load_map(&rle, 0.05).unwrap(), a);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fleetstation"))
}

#[test]
fn binary_exit_codes() {
    let out = scratch("bin.jsonl");
    let status = bin()
        .args(["run", "--scenario"])
        .arg(repo("scenarios/sealed.scn"))
        .arg("--script")
        .arg(repo("scenarios/does_not_exist.jsonl"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let o = bin()
        .args(["serve", "--scenario"])
        .arg(repo("scenarios/sealed.scn"))
        .args(["--port", &port])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("already in use"));
}

#[test]
fn binary_merge_demo_prints_offset() {
    let a = scratch("a.txt");
    let b = scratch("b.txt");
    fs::write(&a, ROOM).unwrap();
    fs::write(&b, shifted(ROOM, 2)).unwrap();
    let o = bin().arg("merge-demo").arg("--a").arg(&a).arg("--b").arg(&b).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("offset of b relative to a: (2, 0) cells"), "{text}");
}

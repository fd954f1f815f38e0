//! Scenario text format.
//!
//! ```text
//! format_version 1
//! name corridor
//! resolution 0.2
//! seed 7
//! robot r1 1 1 0
//! tag 1 5 1.5 3.14
//! param nav.max_linear 0.5
//! map
//! #####
//! #...#
//! #####
//! ```
//!
//! Map rows are listed top row first; `#` is occupied, `.` free. Lines
//! starting with `;` and blank lines before `map` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::geom::{GridGeometry, Point2, Pose2D, Transform2D};
use crate::sim::TruthGrid;

pub const FORMAT_VERSION: u32 = 1;

/// Parameter keys a scenario may override.
pub const PARAM_KEYS: &[&str] = &[
    "sim.dt",
    "sim.robot_radius",
    "sim.max_linear",
    "sim.max_angular",
    "sim.odom_noise",
    "lidar.range_max",
    "camera.range",
    "nav.max_linear",
    "nav.max_angular",
    "nav.inflation_margin",
    "nav.unknown_cost",
    "nav.lookahead",
    "nav.slow_down_range",
    "nav.blocked_range",
    "nav.goal_tolerance_xy",
    "nav.goal_tolerance_theta",
    "merge.min_confidence",
    "mapping.resolution",
    "run.timeout",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: String,
    pub spawn: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSpec {
    pub id: u32,
    pub pose: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub resolution: f64,
    pub seed: u64,
    pub robots: Vec<RobotSpec>,
    pub tags: Vec<TagSpec>,
    pub params: BTreeMap<String, f64>,
    /// Rows top first, `#` or `.`.
    pub map: Vec<String>,
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, col: usize, what: &str) -> Result<T, ScenarioError> {
    tok.parse().map_err(|_| ScenarioError::Parse {
        line,
        col,
        message: format!("expected {what}, found `{tok}`"),
    })
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

impl Scenario {
    pub fn width(&self) -> usize {
        self.map.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn height(&self) -> usize {
        self.map.len()
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let perr = |line: usize, col: usize, message: String| ScenarioError::Parse { line, col, message };
        let mut version = None;
        let mut name = None;
        let mut resolution = None;
        let mut seed = None;
        let mut robots = Vec::new();
        let mut tags = Vec::new();
        let mut params = BTreeMap::new();
        let mut map: Vec<String> = Vec::new();
        let mut in_map = false;
        let mut map_start = 0;

        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            if in_map {
                if raw.is_empty() {
                    continue;
                }
                if let Some(pos) = raw.find(|c| c != '#' && c != '.') {
                    return Err(perr(ln, pos + 1, format!("unexpected map character `{}`", raw[pos..].chars().next().unwrap())));
                }
                if let Some(first) = map.first() {
                    if raw.len() != first.len() {
                        return Err(perr(
                            ln,
                            raw.len().min(first.len()) + 1,
                            format!("map row has {} columns, expected {}", raw.len(), first.len()),
                        ));
                    }
                }
                map.push(raw.to_string());
                continue;
            }
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with(';') {
                continue;
            }
            let toks = tokens(raw);
            let (kcol, key) = toks[0];
            let args = &toks[1..];
            let want = |n: usize| -> Result<(), ScenarioError> {
                if args.len() == n {
                    Ok(())
                } else {
                    let col = args.get(n).map(|a| a.0).unwrap_or(raw.len() + 1);
                    Err(perr(ln, col, format!("`{key}` takes {n} values, found {}", args.len())))
                }
            };
            if version.is_none() && key != "format_version" {
                return Err(perr(ln, kcol, "file must start with `format_version`".into()));
            }
            match key {
                "format_version" => {
                    want(1)?;
                    let v: u32 = parse_num(args[0].1, ln, args[0].0, "an integer")?;
                    if v != FORMAT_VERSION {
                        return Err(perr(ln, args[0].0, format!("unsupported format_version {v}")));
                    }
                    version = Some(v);
                }
                "name" => {
                    want(1)?;
                    name = Some(args[0].1.to_string());
                }
                "resolution" => {
                    want(1)?;
                    let r: f64 = parse_num(args[0].1, ln, args[0].0, "a number")?;
                    if !(r > 0.0 && r.is_finite()) {
                        return Err(perr(ln, args[0].0, "resolution must be positive".into()));
                    }
                    resolution = Some(r);
                }
                "seed" => {
                    want(1)?;
                    seed = Some(parse_num(args[0].1, ln, args[0].0, "an unsigned integer")?);
                }
                "robot" => {
                    want(4)?;
                    let x = parse_num(args[1].1, ln, args[1].0, "a number")?;
                    let y = parse_num(args[2].1, ln, args[2].0, "a number")?;
                    let th = parse_num(args[3].1, ln, args[3].0, "a number")?;
                    robots.push(RobotSpec {
                        id: args[0].1.to_string(),
                        spawn: Pose2D::new(x, y, th),
                    });
                }
                "tag" => {
                    want(4)?;
                    let id = parse_num(args[0].1, ln, args[0].0, "a tag id")?;
                    let x = parse_num(args[1].1, ln, args[1].0, "a number")?;
                    let y = parse_num(args[2].1, ln, args[2].0, "a number")?;
                    let th = parse_num(args[3].1, ln, args[3].0, "a number")?;
                    tags.push(TagSpec {
                        id,
                        pose: Pose2D::new(x, y, th),
                    });
                }
                "param" => {
                    want(2)?;
                    if !PARAM_KEYS.contains(&args[0].1) {
                        return Err(perr(ln, args[0].0, format!("unknown parameter `{}`", args[0].1)));
                    }
                    let v: f64 = parse_num(args[1].1, ln, args[1].0, "a number")?;
                    params.insert(args[0].1.to_string(), v);
                }
                "map" => {
                    want(0)?;
                    in_map = true;
                    map_start = ln;
                }
                other => return Err(perr(ln, kcol, format!("unknown key `{other}`"))),
            }
        }
        let end = text.lines().count() + 1;
        let missing = |what: &str| perr(end, 1, format!("missing `{what}`"));
        if version.is_none() {
            return Err(missing("format_version"));
        }
        if !in_map || map.is_empty() {
            return Err(perr(if in_map { map_start } else { end }, 1, "missing map rows".into()));
        }
        let s = Scenario {
            name: name.ok_or_else(|| missing("name"))?,
            resolution: resolution.ok_or_else(|| missing("resolution"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            robots,
            tags,
            params,
            map,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn robot_radius(&self) -> f64 {
        self.param("sim.robot_radius").unwrap_or(0.18)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let verr = |m: String| Err(ScenarioError::Validation(m));
        if self.robots.is_empty() {
            return verr("scenario has no robots".into());
        }
        let truth = self.truth();
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            if !ids.insert(r.id.as_str()) {
                return verr(format!("duplicate robot id `{}`", r.id));
            }
            if truth.is_occupied_at(r.spawn.position()) || !truth.disc_is_free(r.spawn.position(), self.robot_radius()) {
                return verr(format!(
                    "robot `{}` spawns in a wall at ({}, {})",
                    r.id, r.spawn.x, r.spawn.y
                ));
            }
        }
        let mut tag_ids = BTreeSet::new();
        for t in &self.tags {
            if !tag_ids.insert(t.id) {
                return verr(format!("duplicate tag id {}", t.id));
            }
            let (c, r) = truth.geometry.cell_of(t.pose.position());
            if !truth.geometry.contains(c, r) {
                return verr(format!("tag {} lies outside the map", t.id));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> TruthGrid {
        let (w, h) = (self.width(), self.height());
        let mut occ = vec![false; w * h];
        for (i, row) in self.map.iter().enumerate() {
            let r = h - 1 - i;
            for (c, ch) in row.bytes().enumerate() {
                occ[r * w + c] = ch == b'#';
            }
        }
        TruthGrid::new(GridGeometry::new(w, h, self.resolution, Transform2D::identity()), occ)
    }

    /// Canonical text; `parse(save(s)) == s` and re-saving is byte-identical.
    pub fn save(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format_version {FORMAT_VERSION}");
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "resolution {}", self.resolution);
        let _ = writeln!(out, "seed {}", self.seed);
        for r in &self.robots {
            let _ = writeln!(out, "robot {} {} {} {}", r.id, r.spawn.x, r.spawn.y, r.spawn.theta);
        }
        for t in &self.tags {
            let _ = writeln!(out, "tag {} {} {} {}", t.id, t.pose.x, t.pose.y, t.pose.theta);
        }
        for (k, v) in &self.params {
            let _ = writeln!(out, "param {k} {v}");
        }
        out.push_str("map\n");
        for row in &self.map {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    /// Center of a map character cell given as (column, row-from-top).
    pub fn cell_center(&self, col: usize, row_from_top: usize) -> Point2 {
        let r = self.height() - 1 - row_from_top;
        Point2::new((col as f64 + 0.5) * self.resolution, (r as f64 + 0.5) * self.resolution)
    }
}

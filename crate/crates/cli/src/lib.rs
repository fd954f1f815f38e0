//! Command implementations behind the `fleetstation` binary.

pub mod serve;

use std::fs;
use std::path::Path;

use fleetstation_core::error::{MappingError, MergeError, RecordError, ScenarioError};
use fleetstation_core::geom::Transform2D;
use fleetstation_core::mapping::{Cell, OccupancyGrid, SensorModel, TernaryGrid};
use fleetstation_core::merge::{merge, phase_correlate, MergeEstimate, Raster};
use fleetstation_core::record::{final_pose_difference, parse_script, replay, run_headless, RunRecord};
use fleetstation_core::scenario::Scenario;
use thiserror::Error;

/// Replayed final poses may differ from the record by at most this much.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("replay diverged: final poses differ by {0:e}")]
    ReplayMismatch(f64),
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Ok(Scenario::parse(&read(path)?)?)
}

/// Metric lines of a record: everything except the header and command log.
pub fn metrics(record: &RunRecord) -> String {
    record
        .to_jsonl()
        .lines()
        .filter(|l| !l.starts_with("{\"record\":\"header\"") && !l.starts_with("{\"record\":\"command\""))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Headless run. The record is written even on timeout; the timeout is then
/// returned as the error.
pub fn run(scenario: &Path, script: &Path, out: &Path, seed: Option<u64>) -> Result<RunRecord, CliError> {
    let scenario = load_scenario(scenario)?;
    let script = parse_script(&read(script)?)?;
    let seed = seed.unwrap_or(scenario.seed);
    let result = run_headless(&scenario, seed, &script);
    let record = match &result {
        Ok(r) => r,
        Err(RecordError::Timeout { record, .. }) => record.as_ref(),
        Err(_) => return result.map_err(CliError::from),
    };
    fs::write(out, record.to_jsonl()).map_err(|source| CliError::File {
        path: out.display().to_string(),
        source,
    })?;
    Ok(result?)
}

/// Replay a record and compare final poses.
pub fn replay_file(path: &Path) -> Result<(RunRecord, f64), CliError> {
    let original = RunRecord::from_jsonl(&read(path)?)?;
    let again = match replay(&original) {
        Ok(r) => r,
        Err(RecordError::Timeout { record, .. }) => *record,
        Err(e) => return Err(e.into()),
    };
    let diff = final_pose_difference(&original, &again);
    if diff > REPLAY_TOLERANCE {
        return Err(CliError::ReplayMismatch(diff));
    }
    Ok((again, diff))
}

/// A map for `merge-demo`: a `.rle` snapshot or ASCII (`#`, `.`, `?`).
pub fn load_map(path: &Path, resolution: f64) -> Result<TernaryGrid, CliError> {
    if path.extension().is_some_and(|e| e == "rle") {
        let bytes = fs::read(path).map_err(|source| CliError::File {
            path: path.display().to_string(),
            source,
        })?;
        Ok(TernaryGrid::decode(&bytes)?)
    } else {
        Ok(TernaryGrid::from_ascii(&read(path)?, resolution)?)
    }
}

fn as_occupancy(g: &TernaryGrid) -> OccupancyGrid {
    let model = SensorModel::default();
    let l = model.l_occ * 4.0;
    let data = g
        .cells
        .iter()
        .map(|c| match c {
            Cell::Occupied => l,
            Cell::Free => -l,
            Cell::Unknown => 0.0,
        })
        .collect();
    OccupancyGrid::from_log_odds(g.geometry, data, model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeDemo {
    /// Translation of B relative to A, cells.
    pub offset: (i64, i64),
    pub confidence: f64,
    pub merged: TernaryGrid,
}

/// Register map B against map A by phase correlation and fuse them.
pub fn merge_demo(a: &TernaryGrid, b: &TernaryGrid) -> Result<MergeDemo, CliError> {
    let reg = phase_correlate(&Raster::from_ternary(a), &Raster::from_ternary(b))?;
    let res = a.geometry.resolution;
    let estimates = [
        MergeEstimate::identity("a"),
        MergeEstimate {
            final_transform: Transform2D::translation(-reg.d_col as f64 * res, -reg.d_row as f64 * res),
            refinement: (-reg.d_col, -reg.d_row),
            confidence: reg.confidence,
            ..MergeEstimate::identity("b")
        },
    ];
    let (ga, gb) = (as_occupancy(a), as_occupancy(b));
    let merged = merge(&[&ga, &gb], &estimates).probability_grid();
    Ok(MergeDemo {
        offset: (reg.d_col, reg.d_row),
        confidence: reg.confidence,
        merged,
    })
}

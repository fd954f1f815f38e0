//! Shared tag-hunt mission state and pose labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::FleetError;
use crate::geom::Pose2D;

pub const MAX_LABEL_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub robot: String,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub pose: Pose2D,
    pub text: String,
    /// Robot id or `operator:<session>`.
    pub author: String,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// The detection added a tag (false for repeats).
    pub new: bool,
    /// This detection completed the mission.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub tag_ids: BTreeSet<u32>,
    pub found: BTreeMap<u32, Finding>,
    pub labels: Vec<Label>,
    pub completed_tick: Option<u64>,
}

impl MissionState {
    pub fn new(tag_ids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            tag_ids: tag_ids.into_iter().collect(),
            found: BTreeMap::new(),
            labels: Vec::new(),
            completed_tick: None,
        }
    }

    pub fn total(&self) -> usize {
        self.tag_ids.len()
    }

    pub fn count(&self) -> usize {
        self.found.len()
    }

    pub fn is_complete(&self) -> bool {
        self.count() == self.total()
    }

    /// Banner text, e.g. "3 of 5 items found".
    pub fn summary(&self) -> String {
        format!("{} of {} items found", self.count(), self.total())
    }

    pub fn finder(&self, tag: u32) -> Option<&str> {
        self.found.get(&tag).map(|f| f.robot.as_str())
    }

    pub fn record_detection(&mut self, tag: u32, robot: &str, tick: u64) -> Result<DetectionOutcome, FleetError> {
        if !self.tag_ids.contains(&tag) {
            return Err(FleetError::UnknownTag(tag));
        }
        if self.found.contains_key(&tag) {
            return Ok(DetectionOutcome {
                new: false,
                completed: false,
            });
        }
        self.found.insert(
            tag,
            Finding {
                robot: robot.to_string(),
                tick,
            },
        );
        let completed = self.is_complete();
        if completed {
            self.completed_tick = Some(tick);
        }
        Ok(DetectionOutcome { new: true, completed })
    }

    pub fn add_label(&mut self, pose: Pose2D, text: &str, author: &str, tick: u64) -> Result<&Label, FleetError> {
        super::tasks::validate_label(text)?;
        self.labels.push(Label {
            pose,
            text: text.to_string(),
            author: author.to_string(),
            tick,
        });
        Ok(self.labels.last().unwrap())
    }
}

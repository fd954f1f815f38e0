//! Per-session outbound buffering: queued control messages plus latest-value
//! stream slots that overwrite instead of accumulating.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::protocol::{Outbound, StreamKind};
use super::teleop::TeleopMode;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlotKey {
    Stream(String, StreamKind),
    MergedMap,
    Mission,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: u64,
    pub subscriptions: BTreeSet<(String, StreamKind)>,
    pub mode: TeleopMode,
    pub last_activity_tick: u64,
    control: VecDeque<Outbound>,
    control_limit: usize,
    dropped_control: u64,
    slots: BTreeMap<SlotKey, Outbound>,
    last_accepted: BTreeMap<(String, StreamKind), u64>,
}

impl Session {
    pub fn new(id: u64, tick: u64, control_limit: usize) -> Self {
        Self {
            id,
            subscriptions: BTreeSet::new(),
            mode: TeleopMode::Minimap,
            last_activity_tick: tick,
            control: VecDeque::new(),
            control_limit,
            dropped_control: 0,
            slots: BTreeMap::new(),
            last_accepted: BTreeMap::new(),
        }
    }

    pub fn is_subscribed(&self, robot: &str, stream: StreamKind) -> bool {
        self.subscriptions.contains(&(robot.to_string(), stream))
    }

    pub fn set_subscription(&mut self, robot: &str, stream: StreamKind, enabled: bool) {
        let key = (robot.to_string(), stream);
        if enabled {
            self.subscriptions.insert(key);
        } else {
            self.subscriptions.remove(&key);
            self.slots.remove(&SlotKey::Stream(robot.to_string(), stream));
            self.last_accepted.remove(&(robot.to_string(), stream));
        }
    }

    /// Queue a message that must not be dropped (replies, task and label events).
    /// Past the limit the oldest non-reply entries are discarded.
    pub fn push_control(&mut self, msg: Outbound) {
        self.control.push_back(msg);
        while self.control.len() > self.control_limit {
            match self.control.iter().position(|m| !m.is_reply()) {
                Some(i) => {
                    self.control.remove(i);
                    self.dropped_control += 1;
                }
                None => break,
            }
        }
    }

    pub fn dropped_control(&self) -> u64 {
        self.dropped_control
    }

    /// Offer a stream frame; kept only if subscribed and at least
    /// `min_interval` ticks passed since the last accepted frame.
    pub fn offer(&mut self, robot: &str, stream: StreamKind, tick: u64, min_interval: u64, msg: Outbound) -> bool {
        if !self.is_subscribed(robot, stream) {
            return false;
        }
        let key = (robot.to_string(), stream);
        if let Some(&last) = self.last_accepted.get(&key) {
            if tick < last + min_interval {
                return false;
            }
        }
        self.last_accepted.insert(key, tick);
        self.slots.insert(SlotKey::Stream(robot.to_string(), stream), msg);
        true
    }

    pub fn offer_global(&mut self, key: SlotKey, msg: Outbound) {
        self.slots.insert(key, msg);
    }

    pub fn pending(&self) -> usize {
        self.control.len() + self.slots.len()
    }

    /// Everything ready to send: control messages in order, then the latest
    /// value of each stream.
    pub fn drain(&mut self) -> Vec<Outbound> {
        let mut out: Vec<Outbound> = self.control.drain(..).collect();
        out.extend(std::mem::take(&mut self.slots).into_values());
        out
    }
}

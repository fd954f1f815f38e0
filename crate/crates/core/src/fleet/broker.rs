//! Per-robot topic brokers and whitelist-driven inter-broker replication.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::codec::{get_bytes, get_varint, put_bytes, put_varint};
use crate::error::FleetError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub origin: String,
    pub sequence: u64,
    pub stamp_tick: u64,
    pub payload: Vec<u8>,
}

/// Globally unique identity of an envelope.
pub type EnvelopeKey = (String, String, u64);

impl Envelope {
    pub fn key(&self) -> EnvelopeKey {
        (self.origin.clone(), self.topic.clone(), self.sequence)
    }

    /// Topic and origin as length-prefixed UTF-8, sequence and stamp as
    /// varints, then the payload to the end of the buffer.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + self.topic.len() + self.origin.len() + 12);
        put_bytes(&mut out, self.topic.as_bytes());
        put_bytes(&mut out, self.origin.as_bytes());
        put_varint(&mut out, self.sequence);
        put_varint(&mut out, self.stamp_tick);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Envelope, FleetError> {
        let bad = |what: &str| FleetError::Frame(what.to_string());
        let mut pos = 0;
        let topic = get_bytes(buf, &mut pos).ok_or_else(|| bad("truncated topic"))?;
        let topic = std::str::from_utf8(topic).map_err(|_| bad("topic is not UTF-8"))?.to_string();
        let origin = get_bytes(buf, &mut pos).ok_or_else(|| bad("truncated origin"))?;
        let origin = std::str::from_utf8(origin).map_err(|_| bad("origin is not UTF-8"))?.to_string();
        let sequence = get_varint(buf, &mut pos).ok_or_else(|| bad("bad sequence"))?;
        let stamp_tick = get_varint(buf, &mut pos).ok_or_else(|| bad("bad stamp"))?;
        if topic.is_empty() {
            return Err(bad("empty topic"));
        }
        Ok(Envelope {
            topic,
            origin,
            sequence,
            stamp_tick,
            payload: buf[pos..].to_vec(),
        })
    }
}

/// Exact topic name, `prefix/*` (anything strictly below `prefix/`), or `*`.
pub fn topic_matches(pattern: &str, topic: &str) -> bool {
    if pattern == "*" {
        return true;
    }
    match pattern.strip_suffix('*') {
        Some(prefix) if prefix.ends_with('/') => topic.len() > prefix.len() && topic.starts_with(prefix),
        _ => pattern == topic,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationPolicy {
    pub whitelist: BTreeSet<String>,
}

impl Default for ReplicationPolicy {
    fn default() -> Self {
        Self::new(["merged_map", "mission/*", "status/*"])
    }
}

impl ReplicationPolicy {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            whitelist: patterns.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allows(&self, topic: &str) -> bool {
        self.whitelist.iter().any(|p| topic_matches(p, topic))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(u64);

#[derive(Debug, Clone)]
struct Subscription {
    pattern: String,
    queue: VecDeque<Envelope>,
}

/// One node's broker. Local publishes are delivered to matching local
/// subscribers immediately; whitelisted envelopes (local or newly received)
/// are queued for forwarding to peers.
#[derive(Debug, Clone)]
pub struct Broker {
    node: String,
    policy: ReplicationPolicy,
    sequences: BTreeMap<String, u64>,
    seen: HashSet<EnvelopeKey>,
    subs: BTreeMap<SubscriptionId, Subscription>,
    next_sub: u64,
    outbound: Vec<Envelope>,
    accepted_remote: u64,
}

impl Broker {
    pub fn new(node: impl Into<String>, policy: ReplicationPolicy) -> Self {
        Self {
            node: node.into(),
            policy,
            sequences: BTreeMap::new(),
            seen: HashSet::new(),
            subs: BTreeMap::new(),
            next_sub: 0,
            outbound: Vec::new(),
            accepted_remote: 0,
        }
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn policy(&self) -> &ReplicationPolicy {
        &self.policy
    }

    pub fn has_seen(&self, key: &EnvelopeKey) -> bool {
        self.seen.contains(key)
    }

    /// Remote envelopes accepted so far (duplicates excluded).
    pub fn accepted_remote(&self) -> u64 {
        self.accepted_remote
    }

    pub fn subscribe(&mut self, pattern: impl Into<String>) -> SubscriptionId {
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        self.subs.insert(
            id,
            Subscription {
                pattern: pattern.into(),
                queue: VecDeque::new(),
            },
        );
        id
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) {
        self.subs.remove(&id);
    }

    /// Pending deliveries for a subscription, oldest first.
    pub fn drain(&mut self, id: SubscriptionId) -> Vec<Envelope> {
        self.subs.get_mut(&id).map(|s| s.queue.drain(..).collect()).unwrap_or_default()
    }

    fn deliver(&mut self, env: &Envelope) {
        for sub in self.subs.values_mut() {
            if topic_matches(&sub.pattern, &env.topic) {
                sub.queue.push_back(env.clone());
            }
        }
        if self.policy.allows(&env.topic) {
            self.outbound.push(env.clone());
        }
    }

    pub fn publish(&mut self, topic: &str, stamp_tick: u64, payload: Vec<u8>) -> Result<Envelope, FleetError> {
        if topic.is_empty() {
            return Err(FleetError::Frame("empty topic".into()));
        }
        let seq = self.sequences.entry(topic.to_string()).or_insert(0);
        *seq += 1;
        let env = Envelope {
            topic: topic.to_string(),
            origin: self.node.clone(),
            sequence: *seq,
            stamp_tick,
            payload,
        };
        self.seen.insert(env.key());
        self.deliver(&env);
        Ok(env)
    }

    /// Accept an envelope from a peer. Returns false (and does nothing) if its
    /// key was already seen or its topic is not whitelisted.
    pub fn receive(&mut self, env: Envelope) -> bool {
        if !self.policy.allows(&env.topic) || !self.seen.insert(env.key()) {
            return false;
        }
        self.accepted_remote += 1;
        self.deliver(&env);
        true
    }

    /// Envelopes waiting to be forwarded to peers.
    pub fn take_outbound(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbound)
    }
}

/// In-memory broker topology with directed replication links.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub brokers: Vec<Broker>,
    links: Vec<(usize, usize)>,
    in_flight: VecDeque<(usize, Envelope)>,
}

impl Mesh {
    pub fn new(brokers: Vec<Broker>) -> Self {
        Self {
            brokers,
            links: Vec::new(),
            in_flight: VecDeque::new(),
        }
    }

    pub fn link(&mut self, from: usize, to: usize) {
        if from != to && !self.links.contains(&(from, to)) {
            self.links.push((from, to));
        }
    }

    pub fn link_both(&mut self, a: usize, b: usize) {
        self.link(a, b);
        self.link(b, a);
    }

    /// Ring `0 → 1 → … → n-1 → 0`.
    pub fn ring(brokers: Vec<Broker>) -> Self {
        let n = brokers.len();
        let mut m = Self::new(brokers);
        for i in 0..n {
            m.link(i, (i + 1) % n);
        }
        m
    }

    /// Hub `0` linked both ways to every other broker.
    pub fn star(brokers: Vec<Broker>) -> Self {
        let n = brokers.len();
        let mut m = Self::new(brokers);
        for i in 1..n {
            m.link_both(0, i);
        }
        m
    }

    /// Forward queued envelopes until no broker has anything left to send.
    /// Returns the number of link transfers performed.
    pub fn pump(&mut self) -> usize {
        let mut transfers = 0;
        loop {
            for i in 0..self.brokers.len() {
                for env in self.brokers[i].take_outbound() {
                    for &(from, to) in &self.links {
                        // a broker that has seen the key is never sent it again
                        if from == i && !self.brokers[to].has_seen(&env.key()) {
                            self.in_flight.push_back((to, env.clone()));
                        }
                    }
                }
            }
            if self.in_flight.is_empty() {
                return transfers;
            }
            while let Some((to, env)) = self.in_flight.pop_front() {
                transfers += 1;
                self.brokers[to].receive(env);
            }
        }
    }
}

//! Bounded fan-out topic queues for the edge broker.
//!
//! A topic keeps one shared FIFO. Each subscriber owns a cursor into it, and a
//! message is retired once every subscriber has passed it. With no subscribers
//! attached, accepted messages are retained (up to capacity) for the first one
//! to arrive. Overflow rejects the newest message.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;

use crate::message::CitsMessage;

pub const DEFAULT_TOPIC_CAPACITY: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PublishOutcome {
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopicStats {
    pub accepted: u64,
    pub dropped: u64,
    pub depth: u64,
}

impl TopicStats {
    /// Messages retired from the queue (delivered to every subscriber).
    pub fn delivered(&self) -> u64 {
        self.accepted - self.depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriberId(pub u64);

#[derive(Debug, Clone)]
pub struct EdgeTopic {
    name: String,
    queue: VecDeque<CitsMessage>,
    /// Absolute index of `queue[0]`; equals the number of retired messages.
    head: u64,
    capacity: usize,
    accepted: u64,
    dropped: u64,
    cursors: BTreeMap<SubscriberId, u64>,
    next_subscriber: u64,
}

impl EdgeTopic {
    pub fn new(name: impl Into<String>, capacity: usize) -> Self {
        EdgeTopic {
            name: name.into(),
            queue: VecDeque::new(),
            head: 0,
            capacity,
            accepted: 0,
            dropped: 0,
            cursors: BTreeMap::new(),
            next_subscriber: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn publish(&mut self, msg: CitsMessage) -> PublishOutcome {
        if self.queue.len() >= self.capacity {
            self.dropped += 1;
            return PublishOutcome::Rejected;
        }
        self.queue.push_back(msg);
        self.accepted += 1;
        assert!(self.queue.len() <= self.capacity);
        PublishOutcome::Accepted
    }

    /// Enqueue ignoring capacity. Reserved for control messages that must not
    /// be lost to saturation; they still count as accepted.
    pub fn publish_control(&mut self, msg: CitsMessage) {
        self.queue.push_back(msg);
        self.accepted += 1;
    }

    /// Attach a subscriber positioned at the oldest retained message.
    pub fn subscribe(&mut self) -> SubscriberId {
        let id = SubscriberId(self.next_subscriber);
        self.next_subscriber += 1;
        self.cursors.insert(id, self.head);
        id
    }

    pub fn unsubscribe(&mut self, id: SubscriberId) {
        self.cursors.remove(&id);
        self.retire();
    }

    /// Next message for `id`, advancing its cursor. `None` when caught up or
    /// when `id` is not attached.
    pub fn take(&mut self, id: SubscriberId) -> Option<CitsMessage> {
        let cursor = self.cursors.get_mut(&id)?;
        let idx = (*cursor - self.head) as usize;
        let msg = self.queue.get(idx)?.clone();
        *cursor += 1;
        self.retire();
        Some(msg)
    }

    pub fn pending_for(&self, id: SubscriberId) -> usize {
        match self.cursors.get(&id) {
            Some(c) => self.queue.len() - (*c - self.head) as usize,
            None => 0,
        }
    }

    fn retire(&mut self) {
        let Some(min) = self.cursors.values().copied().min() else {
            return;
        };
        while self.head < min {
            self.queue.pop_front();
            self.head += 1;
        }
    }

    pub fn stats(&self) -> TopicStats {
        TopicStats {
            accepted: self.accepted,
            dropped: self.dropped,
            depth: self.queue.len() as u64,
        }
    }
}

/// The set of topics served by one edge broker. Topics are created on first
/// publish or subscribe.
#[derive(Debug, Clone)]
pub struct EdgeBroker {
    topics: BTreeMap<String, EdgeTopic>,
    capacity: usize,
}

impl Default for EdgeBroker {
    fn default() -> Self {
        Self::new(DEFAULT_TOPIC_CAPACITY)
    }
}

impl EdgeBroker {
    pub fn new(capacity: usize) -> Self {
        EdgeBroker {
            topics: BTreeMap::new(),
            capacity,
        }
    }

    pub fn topic_mut(&mut self, name: &str) -> &mut EdgeTopic {
        let capacity = self.capacity;
        self.topics
            .entry(String::from(name))
            .or_insert_with(|| EdgeTopic::new(name, capacity))
    }

    pub fn topic(&self, name: &str) -> Option<&EdgeTopic> {
        self.topics.get(name)
    }

    pub fn publish(&mut self, topic: &str, msg: CitsMessage) -> PublishOutcome {
        self.topic_mut(topic).publish(msg)
    }

    pub fn subscribe(&mut self, topic: &str) -> SubscriberId {
        self.topic_mut(topic).subscribe()
    }

    /// Unknown topics report zeroed stats.
    pub fn stats(&self, topic: &str) -> TopicStats {
        self.topics.get(topic).map(EdgeTopic::stats).unwrap_or_default()
    }
}

//! Producer configuration, the fixed-interval send schedule, and the send and
//! receive log records that the metrics work from.

use alloc::string::String;
use alloc::vec::Vec;

use crate::message::{generate_payload, CitsMessage, MessageKey, DEFAULT_PAYLOAD_LEN};
use crate::time::{Nanos, NANOS_PER_MS};

pub const DEFAULT_RATE_HZ: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ProducerConfig {
    pub producer_id: u32,
    pub rate_hz: f64,
    pub payload_bytes: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Added to every origin timestamp to emulate an unsynchronized clock.
    pub clock_skew_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ProducerConfigError {
    #[error("rate must be positive, got {0} Hz")]
    Rate(f64),
    #[error("duration must be positive, got {0} s")]
    Duration(f64),
    #[error("producer id {0} is reserved")]
    ReservedId(u32),
}

impl ProducerConfig {
    pub fn new(producer_id: u32, duration_s: f64, seed: u64) -> Self {
        ProducerConfig {
            producer_id,
            rate_hz: DEFAULT_RATE_HZ,
            payload_bytes: DEFAULT_PAYLOAD_LEN,
            duration_s,
            seed,
            clock_skew_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ProducerConfigError> {
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(ProducerConfigError::Rate(self.rate_hz));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(ProducerConfigError::Duration(self.duration_s));
        }
        if self.producer_id == crate::message::END_OF_RUN_PRODUCER {
            return Err(ProducerConfigError::ReservedId(self.producer_id));
        }
        Ok(())
    }

    pub fn schedule(&self) -> SendSchedule {
        SendSchedule::new(self.rate_hz, self.duration_s)
    }

    /// The message for send slot `sequence`, stamped with the (skewed) clock
    /// reading `now_ms`.
    pub fn message(&self, sequence: u64, now_ms: u64, topic: &str) -> CitsMessage {
        CitsMessage {
            producer_id: self.producer_id,
            sequence,
            origin_time_ms: skewed(now_ms, self.clock_skew_ms),
            payload: generate_payload(
                self.seed ^ ((self.producer_id as u64) << 40) ^ sequence,
                self.payload_bytes,
            ),
            topic: String::from(topic),
        }
    }
}

pub fn skewed(ms: u64, skew_ms: i64) -> u64 {
    if skew_ms >= 0 {
        ms.saturating_add(skew_ms as u64)
    } else {
        ms.saturating_sub(skew_ms.unsigned_abs())
    }
}

/// Drift-free send times: slot `k` is due at `start + k / rate`, rounded to
/// the millisecond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SendSchedule {
    rate_hz: f64,
    count: u64,
}

impl SendSchedule {
    pub fn new(rate_hz: f64, duration_s: f64) -> Self {
        SendSchedule {
            rate_hz,
            count: libm::round(rate_hz * duration_s) as u64,
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Offset of slot `k` from the schedule start.
    pub fn offset(&self, k: u64) -> Nanos {
        let ms = libm::round(k as f64 * 1_000.0 / self.rate_hz) as u64;
        Nanos(ms * NANOS_PER_MS)
    }

    pub fn offsets(&self) -> impl Iterator<Item = Nanos> + '_ {
        (0..self.count).map(|k| self.offset(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SentRecord {
    pub producer_id: u32,
    pub sequence: u64,
    pub origin_time_ms: u64,
}

impl SentRecord {
    pub fn key(&self) -> MessageKey {
        MessageKey {
            producer_id: self.producer_id,
            origin_time_ms: self.origin_time_ms,
            sequence: self.sequence,
        }
    }
}

impl From<&CitsMessage> for SentRecord {
    fn from(m: &CitsMessage) -> Self {
        SentRecord {
            producer_id: m.producer_id,
            sequence: m.sequence,
            origin_time_ms: m.origin_time_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReceivedRecord {
    pub producer_id: u32,
    pub sequence: u64,
    pub origin_time_ms: u64,
    pub receive_time_ms: u64,
}

impl ReceivedRecord {
    pub fn new(m: &CitsMessage, receive_time_ms: u64) -> Self {
        ReceivedRecord {
            producer_id: m.producer_id,
            sequence: m.sequence,
            origin_time_ms: m.origin_time_ms,
            receive_time_ms,
        }
    }

    pub fn key(&self) -> MessageKey {
        MessageKey {
            producer_id: self.producer_id,
            origin_time_ms: self.origin_time_ms,
            sequence: self.sequence,
        }
    }
}

/// Everything one producer attempted to publish, including rejected sends.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SentLog {
    pub producer_id: u32,
    pub records: Vec<SentRecord>,
    /// Publishes the broker answered with a rejection.
    pub rejected: u64,
    /// Publishes that got no answer (transport failure).
    pub unacknowledged: u64,
}

impl SentLog {
    pub fn acknowledged(&self) -> u64 {
        self.records.len() as u64 - self.unacknowledged
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReceivedLog {
    pub records: Vec<ReceivedRecord>,
    /// The consumer stopped on its idle timeout instead of the end marker.
    pub timed_out: bool,
}

/// Merge per-producer send logs into one list ordered by key.
pub fn merge_sent(logs: &[SentLog]) -> Vec<SentRecord> {
    let mut all: Vec<SentRecord> = logs.iter().flat_map(|l| l.records.iter().copied()).collect();
    all.sort_unstable_by_key(|r| r.key());
    all
}

/// Map received producer ids back through `inverse` (pseudonym to original).
/// Records whose id is not in the table keep it unchanged.
pub fn resolve_pseudonyms(
    records: &mut [ReceivedRecord],
    inverse: &alloc::collections::BTreeMap<u32, u32>,
) {
    for r in records {
        if let Some(orig) = inverse.get(&r.producer_id) {
            r.producer_id = *orig;
        }
    }
}

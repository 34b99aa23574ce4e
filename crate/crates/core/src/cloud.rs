//! Cloud segment state: single-partition append-only topic logs and the MEC
//! registry that routes producers and consumers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::message::CitsMessage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("topic {0} is full")]
    StorageFull(String),
    #[error("unknown topic {0}")]
    NotFound(String),
    #[error("offset {requested} is past the end of the log ({next})")]
    Range { requested: u64, next: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub offset: u64,
    pub message: CitsMessage,
}

#[derive(Debug, Clone)]
pub struct PartitionLog {
    topic: String,
    records: Vec<CitsMessage>,
    max_records: Option<usize>,
    rejected: u64,
}

impl PartitionLog {
    pub fn new(topic: impl Into<String>, max_records: Option<usize>) -> Self {
        PartitionLog {
            topic: topic.into(),
            records: Vec::new(),
            max_records,
            rejected: 0,
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn next_offset(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn append(&mut self, msg: CitsMessage) -> Result<u64, LogError> {
        if self.max_records.is_some_and(|max| self.records.len() >= max) {
            self.rejected += 1;
            return Err(LogError::StorageFull(self.topic.clone()));
        }
        let offset = self.next_offset();
        self.records.push(msg);
        Ok(offset)
    }

    /// Borrow up to `max_count` records starting at `from_offset`.
    pub fn read(&self, from_offset: u64, max_count: usize) -> Result<&[CitsMessage], LogError> {
        let next = self.next_offset();
        if from_offset > next {
            return Err(LogError::Range {
                requested: from_offset,
                next,
            });
        }
        let start = from_offset as usize;
        let end = start.saturating_add(max_count).min(self.records.len());
        Ok(&self.records[start..end])
    }

    pub fn fetch(&self, from_offset: u64, max_count: usize) -> Result<Vec<Record>, LogError> {
        Ok(self
            .read(from_offset, max_count)?
            .iter()
            .zip(from_offset..)
            .map(|(m, offset)| Record {
                offset,
                message: m.clone(),
            })
            .collect())
    }
}

/// All topic logs held by the cloud service.
#[derive(Debug, Clone, Default)]
pub struct CloudLog {
    topics: BTreeMap<String, PartitionLog>,
    max_records: Option<usize>,
}

impl CloudLog {
    pub fn new(max_records: Option<usize>) -> Self {
        CloudLog {
            topics: BTreeMap::new(),
            max_records,
        }
    }

    pub fn create(&mut self, topic: &str) -> &mut PartitionLog {
        let max = self.max_records;
        self.topics
            .entry(String::from(topic))
            .or_insert_with(|| PartitionLog::new(topic, max))
    }

    pub fn append(&mut self, topic: &str, msg: CitsMessage) -> Result<u64, LogError> {
        self.create(topic).append(msg)
    }

    pub fn partition(&self, topic: &str) -> Result<&PartitionLog, LogError> {
        self.topics
            .get(topic)
            .ok_or_else(|| LogError::NotFound(String::from(topic)))
    }

    pub fn fetch(
        &self,
        topic: &str,
        from_offset: u64,
        max_count: usize,
    ) -> Result<Vec<Record>, LogError> {
        self.partition(topic)?.fetch(from_offset, max_count)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegistryEntry {
    pub mec_id: String,
    /// `host:port` of the MEC's edge broker as seen by producers.
    pub broker_address: String,
    pub cloud_topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumerRoute {
    pub cloud_topic: String,
    pub cloud_address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("no MEC registered")]
    NoMec,
    #[error("unknown MEC {0}")]
    UnknownMec(String),
    #[error("MEC {0} is already registered")]
    Duplicate(String),
}

/// Cloud topic that carries `data_type` messages collected at `mec_id`.
pub fn cloud_topic_name(mec_id: &str, data_type: &str) -> String {
    format!("cloud/{mec_id}/{data_type}")
}

/// Edge topic producers publish `data_type` messages to on `mec_id`.
pub fn edge_topic_name(mec_id: &str, data_type: &str) -> String {
    format!("{mec_id}/{data_type}")
}

#[derive(Debug, Clone)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
    log_address: String,
    next_round_robin: usize,
}

impl Registry {
    pub fn new(log_address: impl Into<String>) -> Self {
        Registry {
            entries: Vec::new(),
            log_address: log_address.into(),
            next_round_robin: 0,
        }
    }

    pub fn log_address(&self) -> &str {
        &self.log_address
    }

    /// Address consumers are told to fetch from.
    pub fn set_log_address(&mut self, address: impl Into<String>) {
        self.log_address = address.into();
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn register(&mut self, entry: RegistryEntry) -> Result<(), RegistryError> {
        if self.entries.iter().any(|e| e.mec_id == entry.mec_id) {
            return Err(RegistryError::Duplicate(entry.mec_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    fn find(&self, mec_id: &str) -> Result<&RegistryEntry, RegistryError> {
        self.entries
            .iter()
            .find(|e| e.mec_id == mec_id)
            .ok_or_else(|| RegistryError::UnknownMec(String::from(mec_id)))
    }

    /// Picks the MEC a producer should publish to: the requested one, the only
    /// one, or the next in round-robin order.
    pub fn resolve_producer(
        &mut self,
        requested: Option<&str>,
    ) -> Result<RegistryEntry, RegistryError> {
        if self.entries.is_empty() {
            return Err(RegistryError::NoMec);
        }
        if let Some(mec) = requested {
            return self.find(mec).cloned();
        }
        let idx = self.next_round_robin % self.entries.len();
        self.next_round_robin = self.next_round_robin.wrapping_add(1);
        Ok(self.entries[idx].clone())
    }

    pub fn resolve_consumer(
        &self,
        mec_id: &str,
        data_type: &str,
    ) -> Result<ConsumerRoute, RegistryError> {
        self.find(mec_id)?;
        Ok(ConsumerRoute {
            cloud_topic: cloud_topic_name(mec_id, data_type),
            cloud_address: self.log_address.clone(),
        })
    }
}

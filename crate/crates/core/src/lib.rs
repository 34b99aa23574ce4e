//! Allocation-only building blocks for benchmarking a hierarchical edge/cloud
//! messaging pipeline.
//!
//! Everything here is pure state: the message codec, the bounded edge topic
//! queue, the cloud partition log and registry, the anonymizer's sampling gate
//! and pseudonym map, the link emulator, the measurement algorithms, and a
//! discrete-event model of the whole pipeline running in virtual time. Socket
//! servers, wall clocks and file formats live in the `edgebench` crate.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod anonymizer;
pub mod cloud;
pub mod edge;
pub mod message;
pub mod metrics;
pub mod netem;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod workload;

pub use anonymizer::{
    predicted_packet_loss, AnonymizationScheme, PseudonymMap, SampleGate, SamplerPolicy,
    SamplingRate, SchemeName, StageLimits, StageQueue,
};
pub use cloud::{CloudLog, PartitionLog, Registry, RegistryEntry};
pub use edge::{EdgeBroker, EdgeTopic, PublishOutcome, TopicStats};
pub use message::{decode_message, encode_message, generate_payload, CitsMessage, MessageKey};
pub use metrics::{BenchmarkReport, LatencySummary, LossOutcome};
pub use netem::{LinkProfile, LinkProfiles, LinkState, Transmission};
pub use report::{repetition_report, RunLogs};
pub use scenario::{Platform, Scenario, ScenarioId};
pub use sim::{simulate, PipelineCounters, SimOutcome};
pub use time::Nanos;

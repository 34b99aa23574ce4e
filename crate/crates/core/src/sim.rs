//! Discrete-event model of one pipeline run in virtual time.
//!
//! The same state machines the socket harness uses (edge topic queue, sampling
//! gate, pseudonym map, stage queue, partition log, link emulators) are driven
//! by an event queue instead of threads and clocks, so a run is a pure
//! function of its scenario and seed.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anonymizer::{pseudonymize, PseudonymMap, SampleGate, StageLimits, StageQueue};
use crate::cloud::{cloud_topic_name, edge_topic_name, CloudLog};
use crate::edge::{EdgeTopic, PublishOutcome, SubscriberId, TopicStats};
use crate::message::CitsMessage;
use crate::metrics::{FlowCheck, StageCounters};
use crate::netem::{LinkProfile, LinkState};
use crate::scenario::{Platform, Scenario, ScenarioError};
use crate::time::{Nanos, NANOS_PER_SEC};
use crate::workload::{ProducerConfig, ReceivedLog, ReceivedRecord, SentLog, SentRecord};

/// Wall-clock reading that virtual time zero maps to.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

/// Virtual time at which producers start.
const START: Nanos = Nanos(NANOS_PER_SEC);

/// Length prefix, command byte and topic-length byte around a message.
const COMMAND_OVERHEAD: usize = 6;

pub const MEC_ID: &str = "mec-1";
pub const DATA_TYPE: &str = "cits";

/// Counters gathered from every component when a run is torn down.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineCounters {
    /// Publishes the edge broker answered, including control messages.
    pub edge_published: u64,
    pub edge: TopicStats,
    /// The anonymizer on hybrid runs, the plain bridge on local ones.
    pub stage: StageCounters,
    pub stage_is_anonymizer: bool,
    pub cloud_attempts: u64,
    pub cloud_appended: u64,
    pub cloud_rejected: u64,
}

impl PipelineCounters {
    pub fn flow_checks(&self) -> Vec<FlowCheck> {
        let s = &self.stage;
        alloc::vec![
            FlowCheck {
                component: "edge-topic".into(),
                input: self.edge_published,
                delivered: self.edge.delivered(),
                rejected: self.edge.dropped,
                in_flight: self.edge.depth,
            },
            FlowCheck {
                component: if self.stage_is_anonymizer {
                    "anonymizer".into()
                } else {
                    "bridge".into()
                },
                input: s.received,
                delivered: s.forwarded,
                rejected: s.sampled_out + s.queue_dropped + s.append_failed,
                in_flight: s.in_flight,
            },
            FlowCheck {
                component: "cloud-log".into(),
                input: self.cloud_attempts,
                delivered: self.cloud_appended,
                rejected: self.cloud_rejected,
                in_flight: 0,
            },
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub sent: Vec<SentLog>,
    /// As seen by the consumer, i.e. with pseudonymized producer ids.
    pub received: ReceivedLog,
    pub pseudonyms: PseudonymMap,
    pub counters: PipelineCounters,
    /// Virtual time at which the last event ran.
    pub finished_at: Nanos,
}

/// Seed of one repetition, derived from the scenario seed.
pub fn repetition_seed(seed: u64, repetition: u32) -> u64 {
    let mut z = seed ^ ((repetition as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Link profile reseeded for one repetition.
pub fn link_for_run(profile: LinkProfile, run_seed: u64) -> LinkProfile {
    profile.with_seed(profile.seed ^ run_seed)
}

/// Producers of one repetition, numbered from 1.
pub fn producer_configs(scenario: &Scenario, run_seed: u64) -> Vec<ProducerConfig> {
    (0..scenario.producers)
        .map(|i| {
            let mut cfg = ProducerConfig::new(i + 1, scenario.duration_s, run_seed ^ (i as u64 + 1));
            cfg.rate_hz = scenario.workload.rate_hz;
            cfg.payload_bytes = scenario.workload.payload_bytes;
            cfg.clock_skew_ms = scenario.workload.clock_skew_ms;
            cfg
        })
        .collect()
}

/// Start offset of each producer within one send interval, whole
/// milliseconds, so simultaneous producers do not fire in lockstep.
pub fn producer_phases(scenario: &Scenario, run_seed: u64) -> Vec<Nanos> {
    let interval_ms = libm::round(1_000.0 / scenario.workload.rate_hz).max(1.0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    (0..scenario.producers)
        .map(|_| Nanos::from_millis(rng.gen_range(0..interval_ms)))
        .collect()
}

pub fn pseudonym_salt(run_seed: u64) -> u64 {
    run_seed.rotate_left(17)
}

#[derive(Debug)]
enum Event {
    Send { producer: usize, slot: u64 },
    EdgeArrival(CitsMessage),
    BridgeDone,
    StageDeparture(CitsMessage),
    CloudArrival(CitsMessage),
    Poll,
}

struct Scheduled {
    at: Nanos,
    order: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    producers: Vec<ProducerConfig>,
    starts: Vec<Nanos>,
    sent: Vec<SentLog>,
    uplink: LinkState,
    wan: LinkState,
    downlink: LinkState,
    edge: EdgeTopic,
    edge_sub: SubscriberId,
    edge_published: u64,
    bridge_busy: bool,
    bridge_service: Option<Nanos>,
    gate: Option<SampleGate>,
    gate_flushed: bool,
    stage_queue: StageQueue,
    pseudonyms: PseudonymMap,
    stage: StageCounters,
    /// Messages sent but not yet through the uplink and edge queue.
    upstream_pending: u64,
    sends_left: u64,
    cloud: CloudLog,
    cloud_topic: alloc::string::String,
    cloud_attempts: u64,
    consumer_start: Nanos,
    cursor: u64,
    received: Vec<ReceivedRecord>,
}

pub fn simulate(scenario: &Scenario, repetition: u32) -> Result<SimOutcome, ScenarioError> {
    scenario.validate()?;
    let run_seed = repetition_seed(scenario.seed, repetition);
    let links = scenario.effective_links();

    let topic = edge_topic_name(MEC_ID, DATA_TYPE);
    let producers = producer_configs(scenario, run_seed);
    let starts: Vec<Nanos> = producer_phases(scenario, run_seed)
        .into_iter()
        .map(|p| START + p)
        .collect();
    let sends_left = producers.iter().map(|p| p.schedule().len()).sum();

    let hybrid = scenario.platform == Platform::Hybrid;
    let scheme = scenario.anonymization();
    let limits = if hybrid {
        StageLimits::from_scheme(&scheme, &scenario.tuning.emulation)
    } else {
        StageLimits::UNLIMITED
    };
    let mut edge = EdgeTopic::new(topic.clone(), scenario.tuning.edge_capacity);
    let edge_sub = edge.subscribe();

    let mut sim = Sim {
        scenario,
        queue: BinaryHeap::new(),
        order: 0,
        sent: producers
            .iter()
            .map(|p| SentLog {
                producer_id: p.producer_id,
                ..SentLog::default()
            })
            .collect(),
        producers,
        starts,
        uplink: LinkState::new(link_for_run(links.uplink, run_seed)),
        wan: LinkState::new(link_for_run(links.wan, run_seed)),
        downlink: LinkState::new(link_for_run(links.downlink, run_seed)),
        edge,
        edge_sub,
        edge_published: 0,
        bridge_busy: false,
        bridge_service: if hybrid {
            None
        } else {
            scenario
                .tuning
                .bridge_rate_hz
                .filter(|r| *r > 0.0)
                .map(|r| Nanos(libm::round(NANOS_PER_SEC as f64 / r) as u64))
        },
        gate: hybrid.then(|| SampleGate::new(scheme, scenario.tuning.sampler)),
        gate_flushed: false,
        stage_queue: StageQueue::new(limits),
        pseudonyms: PseudonymMap::new(pseudonym_salt(run_seed)),
        stage: StageCounters::default(),
        upstream_pending: 0,
        sends_left,
        cloud: CloudLog::new(scenario.tuning.cloud_max_records),
        cloud_topic: cloud_topic_name(MEC_ID, DATA_TYPE),
        cloud_attempts: 0,
        consumer_start: START + Nanos::from_millis(scenario.workload.consumer_delay_ms),
        cursor: 0,
        received: Vec::new(),
    };
    sim.cloud.create(&sim.cloud_topic.clone());
    sim.run(topic)
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at: Nanos, event: Event) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled {
            at,
            order: self.order,
            event,
        }));
    }

    fn run(mut self, topic: alloc::string::String) -> Result<SimOutcome, ScenarioError> {
        for p in 0..self.producers.len() {
            if !self.producers[p].schedule().is_empty() {
                let at = self.starts[p];
                self.schedule(at, Event::Send { producer: p, slot: 0 });
            }
        }
        let first_poll = self.consumer_start;
        self.schedule(first_poll, Event::Poll);

        let mut now = Nanos::ZERO;
        while let Some(Reverse(next)) = self.queue.pop() {
            now = next.at;
            match next.event {
                Event::Send { producer, slot } => self.on_send(now, producer, slot, &topic),
                Event::EdgeArrival(msg) => self.on_edge_arrival(now, msg),
                Event::BridgeDone => {
                    self.bridge_busy = false;
                    self.pump_subscriber(now);
                }
                Event::StageDeparture(msg) => self.on_stage_departure(now, msg),
                Event::CloudArrival(msg) => self.on_cloud_arrival(msg),
                Event::Poll => self.on_poll(now),
            }
            self.maybe_flush_gate(now);
        }

        let cloud = self.cloud.partition(&self.cloud_topic).expect("created above");
        let counters = PipelineCounters {
            edge_published: self.edge_published,
            edge: self.edge.stats(),
            stage: StageCounters {
                in_flight: self.stage_queue.in_system(now) as u64,
                ..self.stage
            },
            stage_is_anonymizer: self.gate.is_some(),
            cloud_attempts: self.cloud_attempts,
            cloud_appended: cloud.next_offset(),
            cloud_rejected: cloud.rejected(),
        };
        Ok(SimOutcome {
            sent: self.sent,
            received: ReceivedLog {
                records: self.received,
                timed_out: false,
            },
            pseudonyms: self.pseudonyms,
            counters,
            finished_at: now,
        })
    }

    fn on_send(&mut self, now: Nanos, p: usize, slot: u64, topic: &str) {
        let cfg = &self.producers[p];
        let schedule = cfg.schedule();
        let msg = cfg.message(slot, SIM_EPOCH_MS + now.as_millis(), topic);
        self.sent[p].records.push(SentRecord::from(&msg));
        self.sends_left -= 1;
        let bytes = msg.encoded_len() + COMMAND_OVERHEAD + topic.len();
        match self.uplink.transmit_reliable(bytes, now) {
            Some(at) => {
                self.upstream_pending += 1;
                self.schedule(at, Event::EdgeArrival(msg));
            }
            None => self.sent[p].unacknowledged += 1,
        }
        if slot + 1 < schedule.len() {
            let at = self.starts[p] + schedule.offset(slot + 1);
            self.schedule(at, Event::Send { producer: p, slot: slot + 1 });
        }
    }

    fn on_edge_arrival(&mut self, now: Nanos, msg: CitsMessage) {
        self.upstream_pending -= 1;
        self.edge_published += 1;
        let producer = msg.producer_id;
        if self.edge.publish(msg) == PublishOutcome::Rejected {
            if let Some(log) = self.sent.iter_mut().find(|l| l.producer_id == producer) {
                log.rejected += 1;
            }
        }
        self.pump_subscriber(now);
    }

    /// Let the edge topic's subscriber take what it can at `now`.
    fn pump_subscriber(&mut self, now: Nanos) {
        if self.gate.is_some() {
            while let Some(msg) = self.edge.take(self.edge_sub) {
                self.stage_receive(now, msg);
            }
            return;
        }
        match self.bridge_service {
            None => {
                while let Some(msg) = self.edge.take(self.edge_sub) {
                    self.stage.received += 1;
                    self.forward_to_cloud(now, msg);
                }
            }
            Some(service) if !self.bridge_busy => {
                if let Some(msg) = self.edge.take(self.edge_sub) {
                    self.stage.received += 1;
                    self.bridge_busy = true;
                    let done = now + service;
                    self.forward_to_cloud(done, msg);
                    self.schedule(done, Event::BridgeDone);
                }
            }
            Some(_) => {}
        }
    }

    fn stage_receive(&mut self, now: Nanos, msg: CitsMessage) {
        self.stage.received += 1;
        let out = self.gate.as_mut().expect("hybrid").offer(msg, now);
        if out.dropped.is_some() {
            self.stage.sampled_out += 1;
        }
        if let Some(m) = out.forward {
            self.enqueue_stage(now, m);
        }
    }

    fn enqueue_stage(&mut self, now: Nanos, msg: CitsMessage) {
        match self.stage_queue.offer(now) {
            Some(depart) => self.schedule(depart, Event::StageDeparture(msg)),
            None => self.stage.queue_dropped += 1,
        }
    }

    fn maybe_flush_gate(&mut self, now: Nanos) {
        if self.gate_flushed || self.sends_left > 0 || self.upstream_pending > 0 {
            return;
        }
        self.gate_flushed = true;
        if let Some(gate) = self.gate.as_mut() {
            for m in gate.flush() {
                self.enqueue_stage(now, m);
            }
        }
    }

    fn on_stage_departure(&mut self, now: Nanos, msg: CitsMessage) {
        let msg = pseudonymize(msg, &mut self.pseudonyms)
            .expect("far fewer producers than pseudonyms");
        self.forward_to_cloud(now, msg);
    }

    fn forward_to_cloud(&mut self, now: Nanos, msg: CitsMessage) {
        let bytes = msg.encoded_len() + COMMAND_OVERHEAD + self.cloud_topic.len();
        match self.wan.transmit_reliable(bytes, now) {
            Some(at) => {
                let mut msg = msg;
                msg.topic.clone_from(&self.cloud_topic);
                self.schedule(at, Event::CloudArrival(msg));
            }
            None => self.stage.append_failed += 1,
        }
    }

    fn on_cloud_arrival(&mut self, msg: CitsMessage) {
        self.cloud_attempts += 1;
        let topic = self.cloud_topic.clone();
        match self.cloud.append(&topic, msg) {
            Ok(_) => self.stage.forwarded += 1,
            Err(_) => self.stage.append_failed += 1,
        }
    }

    fn on_poll(&mut self, now: Nanos) {
        let max = self.scenario.tuning.fetch_max as usize;
        let batch: Vec<CitsMessage> = self
            .cloud
            .partition(&self.cloud_topic)
            .and_then(|log| log.read(self.cursor, max))
            .map(|records| records.to_vec())
            .unwrap_or_default();
        self.cursor += batch.len() as u64;
        for msg in batch {
            let bytes = msg.encoded_len() + 12;
            if let Some(at) = self.downlink.transmit_reliable(bytes, now) {
                self.received
                    .push(ReceivedRecord::new(&msg, SIM_EPOCH_MS + at.as_millis()));
            }
        }
        let next_offset = self
            .cloud
            .partition(&self.cloud_topic)
            .map(|l| l.next_offset())
            .unwrap_or(0);
        if !self.queue.is_empty() || self.cursor < next_offset {
            let next = now + Nanos::from_millis(self.scenario.tuning.poll_interval_ms);
            self.schedule(next, Event::Poll);
        }
    }
}

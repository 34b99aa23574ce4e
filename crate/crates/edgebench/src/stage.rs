//! The MEC data service: consumes the edge topic, samples and pseudonymizes
//! (hybrid) or just relays (local bridge), and appends to the cloud log.
//!
//! Receiving and forwarding run on separate threads joined by a bounded
//! queue. The receiving side applies the sampling gate and drops what does
//! not fit in the queue; the forwarding side is paced to the emulated
//! processing rate.

use std::net::SocketAddr;
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use edgebench_core::anonymizer::{
    pseudonymize, AnonymizationScheme, PseudonymMap, ResourceEmulation, SampleGate, SamplerPolicy,
    StageLimits,
};
use edgebench_core::message::CitsMessage;
use edgebench_core::metrics::StageCounters;
use edgebench_core::time::Nanos;

use crate::clock::sleep_until;
use crate::cloud::{AppendOutcome, CloudClient};
use crate::edge::{EdgeClient, StageReport};

const RECONNECT_BACKOFF: Duration = Duration::from_millis(50);

#[derive(Clone, Debug)]
pub struct StageConfig {
    pub edge_addr: SocketAddr,
    pub topic: String,
    /// Where appends go; normally the WAN shim in front of the cloud log.
    pub cloud_addr: SocketAddr,
    pub cloud_topic: String,
    /// `None` runs the plain local-platform bridge.
    pub scheme: Option<AnonymizationScheme>,
    pub sampler: SamplerPolicy,
    pub emulation: ResourceEmulation,
    pub bridge_rate_hz: Option<f64>,
    /// Waiting room of a throttled bridge; stands in for the edge queue it
    /// would otherwise leave messages in.
    pub bridge_queue: Option<usize>,
    pub salt: u64,
    pub append_retries: u32,
}

impl StageConfig {
    pub fn limits(&self) -> StageLimits {
        match &self.scheme {
            Some(s) => StageLimits::from_scheme(s, &self.emulation),
            None => StageLimits {
                service_time: self
                    .bridge_rate_hz
                    .filter(|r| *r > 0.0)
                    .map(|r| Nanos::from_secs_f64(1.0 / r)),
                queue_capacity: self.bridge_rate_hz.and(self.bridge_queue),
            },
        }
    }
}

enum Queue {
    Bounded(SyncSender<CitsMessage>),
    Unbounded(mpsc::Sender<CitsMessage>),
}

impl Queue {
    /// `false` if the message did not fit.
    fn offer(&self, m: CitsMessage) -> bool {
        match self {
            Queue::Bounded(tx) => match tx.try_send(m) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => false,
                Err(TrySendError::Disconnected(_)) => false,
            },
            Queue::Unbounded(tx) => tx.send(m).is_ok(),
        }
    }

    fn send_blocking(&self, m: CitsMessage) {
        let _ = match self {
            Queue::Bounded(tx) => tx.send(m).map_err(drop),
            Queue::Unbounded(tx) => tx.send(m).map_err(drop),
        };
    }
}

#[derive(Default)]
struct ForwardCounters {
    forwarded: u64,
    append_failed: u64,
    attempts: u64,
}

/// Run until the end-of-run marker has been forwarded (or the broker goes
/// away), report the counters to the edge broker, and return them.
/// `on_ready` fires once the subscription is in place.
pub fn run_stage(cfg: &StageConfig, on_ready: impl FnOnce()) -> anyhow::Result<StageReport> {
    let limits = cfg.limits();
    let subscription = EdgeClient::connect(cfg.edge_addr)
        .context("connecting to the edge broker")?
        .subscribe(&cfg.topic)
        .context("subscribing to the edge topic")?;
    on_ready();

    let (queue, rx): (Queue, Receiver<CitsMessage>) = match limits.queue_capacity {
        Some(cap) => {
            let (tx, rx) = mpsc::sync_channel(cap.max(1));
            (Queue::Bounded(tx), rx)
        }
        None => {
            let (tx, rx) = mpsc::channel();
            (Queue::Unbounded(tx), rx)
        }
    };

    let mut map = PseudonymMap::new(cfg.salt);
    let anonymize = cfg.scheme.is_some();
    let fwd_cfg = cfg.clone();
    let forwarder = thread::Builder::new()
        .name("stage-forward".into())
        .spawn(move || forward(&fwd_cfg, rx, limits.service_time, anonymize, &mut map).map(|c| (c, map)))?;

    let mut gate = cfg.scheme.map(|s| SampleGate::new(s, cfg.sampler));
    let mut counters = StageCounters::default();
    let start = Instant::now();
    for item in subscription {
        let msg = match item {
            Ok(m) => m,
            Err(e) => {
                log::warn!("stage: subscription failed: {e}");
                break;
            }
        };
        if msg.is_end_of_run() {
            if let Some(g) = gate.as_mut() {
                for m in g.flush() {
                    if !queue.offer(m) {
                        counters.queue_dropped += 1;
                    }
                }
            }
            queue.send_blocking(msg);
            break;
        }
        counters.received += 1;
        let forward = match gate.as_mut() {
            Some(g) => {
                let out = g.offer(msg, Nanos(start.elapsed().as_nanos() as u64));
                if out.dropped.is_some() {
                    counters.sampled_out += 1;
                }
                out.forward
            }
            None => Some(msg),
        };
        if let Some(m) = forward {
            if !queue.offer(m) {
                counters.queue_dropped += 1;
            }
        }
    }
    drop(queue);

    let (fwd, map) = forwarder
        .join()
        .map_err(|_| anyhow::anyhow!("stage forwarder panicked"))??;
    counters.forwarded = fwd.forwarded;
    counters.append_failed = fwd.append_failed;
    let report = StageReport {
        counters,
        append_attempts: fwd.attempts,
        pseudonyms: map.entries().collect(),
    };
    EdgeClient::connect(cfg.edge_addr)
        .context("reconnecting to the edge broker")?
        .report_stage(&cfg.topic, &report)
        .context("reporting stage counters")?;
    Ok(report)
}

fn forward(
    cfg: &StageConfig,
    rx: Receiver<CitsMessage>,
    service_time: Option<Nanos>,
    anonymize: bool,
    map: &mut PseudonymMap,
) -> anyhow::Result<ForwardCounters> {
    let mut counters = ForwardCounters::default();
    let mut cloud = Some(CloudClient::connect(cfg.cloud_addr).context("connecting to the cloud log")?);
    let service = service_time.map(|n| Duration::from_nanos(n.0));
    let mut next_start = Instant::now();
    for msg in rx {
        if let Some(s) = service {
            sleep_until(next_start);
            next_start = next_start.max(Instant::now()) + s;
        }
        let control = msg.is_end_of_run();
        let msg = if anonymize {
            pseudonymize(msg, map).context("assigning a pseudonym")?
        } else {
            msg
        };
        let mut delivered = false;
        for attempt in 0..=cfg.append_retries {
            if attempt > 0 {
                thread::sleep(RECONNECT_BACKOFF);
            }
            if cloud.is_none() {
                cloud = CloudClient::connect(cfg.cloud_addr).ok();
            }
            let Some(client) = cloud.as_mut() else { continue };
            counters.attempts += 1;
            match client.append(&cfg.cloud_topic, &msg) {
                Ok(AppendOutcome::Appended(_)) => {
                    delivered = true;
                    break;
                }
                Ok(AppendOutcome::Rejected) => {}
                Err(e) => {
                    log::warn!("stage: append failed: {e}");
                    cloud = None;
                }
            }
        }
        match (control, delivered) {
            (true, _) => break,
            (false, true) => counters.forwarded += 1,
            (false, false) => counters.append_failed += 1,
        }
    }
    Ok(counters)
}

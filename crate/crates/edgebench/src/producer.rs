//! Real-time producer: resolve a MEC through the cloud, then publish on a
//! fixed-interval schedule.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use edgebench_core::cloud::edge_topic_name;
use edgebench_core::edge::PublishOutcome;
use edgebench_core::workload::{ProducerConfig, SentLog, SentRecord};

use crate::clock::{sleep_until, wall_ms};
use crate::cloud::CloudClient;
use crate::edge::EdgeClient;

#[derive(Clone, Debug)]
pub struct ProducerOptions {
    pub cloud_addr: SocketAddr,
    pub mec: Option<String>,
    pub data_type: String,
    pub reply_timeout: Duration,
    pub reconnect_attempts: u32,
}

#[derive(Clone, Debug)]
pub struct ProducerOutcome {
    pub log: SentLog,
    /// Worst lateness of a send against its nominal time.
    pub max_lateness: Duration,
}

fn connect(addr: &str, timeout: Duration) -> std::io::Result<EdgeClient> {
    let c = EdgeClient::connect(addr)?;
    c.set_timeout(Some(timeout))?;
    Ok(c)
}

/// Publish every slot of `cfg`'s schedule, the first at `start`.
pub fn run_producer(
    cfg: &ProducerConfig,
    opts: &ProducerOptions,
    start: Instant,
) -> anyhow::Result<ProducerOutcome> {
    cfg.validate()?;
    let entry = CloudClient::connect(opts.cloud_addr)
        .context("connecting to the cloud registry")?
        .resolve_producer(opts.mec.as_deref())
        .context("resolving a MEC")?;
    let topic = edge_topic_name(&entry.mec_id, &opts.data_type);
    let mut edge = Some(connect(&entry.broker_address, opts.reply_timeout).context("connecting to the edge broker")?);

    let schedule = cfg.schedule();
    let mut log = SentLog {
        producer_id: cfg.producer_id,
        ..SentLog::default()
    };
    let mut max_lateness = Duration::ZERO;
    for (k, offset) in schedule.offsets().enumerate() {
        let late = sleep_until(start + Duration::from_nanos(offset.0));
        max_lateness = max_lateness.max(late);
        let msg = cfg.message(k as u64, wall_ms(), &topic);
        log.records.push(SentRecord::from(&msg));

        if edge.is_none() {
            for _ in 0..opts.reconnect_attempts {
                match connect(&entry.broker_address, opts.reply_timeout) {
                    Ok(c) => {
                        edge = Some(c);
                        break;
                    }
                    Err(_) => thread::sleep(Duration::from_millis(100)),
                }
            }
        }
        let Some(client) = edge.as_mut() else {
            log.unacknowledged += 1;
            continue;
        };
        match client.publish(&topic, &msg) {
            Ok(PublishOutcome::Accepted) => {}
            Ok(PublishOutcome::Rejected) => log.rejected += 1,
            Err(e) => {
                log::warn!("producer {}: publish {} failed: {e}", cfg.producer_id, k);
                log.unacknowledged += 1;
                edge = None;
            }
        }
    }
    Ok(ProducerOutcome { log, max_lateness })
}
